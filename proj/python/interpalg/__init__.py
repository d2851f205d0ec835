"""Attribution algebra over small neural networks.

The compiled core lives in ``interpalg._core``; this module re-exports it and
decodes the JSON documents it returns.
"""

import json

from . import _core
from ._core import (
    ConfigError,
    ConvergenceError,
    Dataset,
    Error,
    InvalidExpression,
    IoError,
    Model,
    NotFoundError,
    QueryError,
    RangeError,
    Service,
    ShapeError,
    Tensor,
    canonical_query,
    integrated_gradients,
    load_dataset,
    load_model,
    load_tensor,
    make_linear,
    make_mlp,
    make_planted_outliers,
    random_tensor,
    render_pgm,
    shapley_exact,
    shapley_sampled,
    smoothgrad,
    truncate,
)

__all__ = [
    "ConfigError", "ConvergenceError", "Dataset", "Error", "InvalidExpression", "IoError",
    "Model", "NotFoundError", "QueryError", "RangeError", "Service", "ShapeError", "Tensor",
    "canonical_query", "integrated_gradients", "load_dataset", "load_model", "load_tensor",
    "make_linear", "make_mlp", "make_planted_outliers", "query", "random_tensor",
    "render_pgm", "shapley_exact", "shapley_sampled", "smoothgrad", "spectral_signature",
    "truncate",
]


def query(text, models, inputs, windows=None, layers=None, truncations=None,
          dataset=None, config=None, baseline=None):
    """Evaluate a query and return the result document as a dict.

    ``truncations`` maps "model_name@stage" to a truncated Model. ``config``
    holds backend settings such as {"backend": "shapley-exact"}.
    """
    text_out = _core.run_query(
        text, models, inputs, windows or {}, layers or {}, truncations or {},
        dataset, json.dumps(config or {}), baseline)
    return json.loads(text_out)


def spectral_signature(rows, k=1.5, square=False):
    """Spectral-signature report for the rows of a representation matrix."""
    return json.loads(_core.spectral_signature(rows, k, square))
