"""Smoke tests of the interpalg Python module."""

import json
import os
import urllib.request

import pytest

import interpalg as ia

DEMO = os.environ.get(
    "INTERPALG_DEMO",
    os.path.join(os.path.dirname(__file__), "..", "..", "data", "demo"))


@pytest.fixture(scope="module")
def demo():
    model = ia.load_model(os.path.join(DEMO, "model.json"))
    x = ia.load_tensor(os.path.join(DEMO, "x.json"))
    x2 = ia.load_tensor(os.path.join(DEMO, "x2.json"))
    data = ia.load_dataset(os.path.join(DEMO, "dataset.json"))
    return model, x, x2, data


def test_model_round_trips_through_json(demo):
    model = demo[0]
    again = ia.Model.from_json(model.to_json())
    assert again.ref == model.ref
    assert model.input_shape == [8, 8]
    assert model.num_stages == 3


def test_exact_shapley_is_efficient():
    model = ia.make_mlp([6, 8, 8, 3], 0)
    x = ia.random_tensor([6], -1, 1, 10)
    base = ia.Tensor.zeros([6])
    cls = model.predict(x)
    phi = ia.shapley_exact(model, x, base, cls)
    delta = model.forward(x)[cls] - model.forward(base)[cls]
    assert sum(phi) == pytest.approx(delta, abs=1e-9)
    sampled = ia.shapley_sampled(model, x, base, cls, permutations=4000, seed=7)
    assert max(abs(a - b) for a, b in zip(phi, sampled)) <= 0.05 * max(map(abs, phi))


def test_linear_closed_form_all_backends():
    w = [0.5, -1.0, 2.0, 0.25, -3.0, 1.5]
    model = ia.make_linear(3, 2, w, [0.1, -0.2])
    x = ia.Tensor([3], [1.0, 2.0, -1.0])
    base = ia.Tensor([3], [0.5, 0.0, 1.0])
    expected = [w[i] * (x.values[i] - base.values[i]) for i in range(3)]
    for phi in (ia.shapley_exact(model, x, base, 0),
                ia.shapley_sampled(model, x, base, 0, permutations=10),
                ia.integrated_gradients(model, x, base, 0, steps=7)):
        assert phi == pytest.approx(expected, abs=1e-12)
    assert ia.smoothgrad(model, x, 0, samples=5, sigma=2.0) == w[:3]


def test_query_and_heatmap(demo):
    model, x, x2, data = demo
    result = ia.query("select 1 from f(x) join (select 1 from f(y))", {"f": model},
                      {"x": x, "y": x2}, dataset=data,
                      config={"backend": "shapley-sampled", "samples": 200, "seed": 4})
    assert result["kind"] == "single"
    assert result["meta"]["query"] == "select 1 from f(x) join (select 1 from f(y))"
    again = ia.query("SELECT 1 FROM f(x) JOIN (select 1 from f(y))", {"f": model},
                     {"x": x, "y": x2}, dataset=data,
                     config={"backend": "shapley-sampled", "samples": 200, "seed": 4})
    assert again == result
    pgm = ia.render_pgm(json.dumps(result))
    assert pgm.startswith(b"P5\n8 8\n255\n") and len(pgm) == 11 + 64


def test_query_errors_raise(demo):
    model, x, _, _ = demo
    with pytest.raises(ia.QueryError, match="layer-range|validation"):
        ia.query("select 9 from f(x)", {"f": model}, {"x": x})
    with pytest.raises(ia.QueryError):
        ia.canonical_query("select * from f(x) join")
    assert issubclass(ia.QueryError, ia.Error)


def test_truncate_beats_chance(demo):
    model, _, _, data = demo
    truncated, acc = ia.truncate(model, 1, data, epochs=1000, lr=0.2)
    assert acc >= 1 / 3 + 0.2
    assert truncated.num_stages == 2
    with pytest.raises(ia.RangeError):
        ia.truncate(model, 3, data)


def test_spectral_flags_planted_rows():
    rows, planted = ia.make_planted_outliers(0)
    report = ia.spectral_signature(rows)
    assert report["flagged"] == planted
    assert report["residual"] <= 1e-8
    assert ia.spectral_signature(rows, k=float("inf"))["flagged"] == []
    with pytest.raises(ia.ConfigError):
        ia.spectral_signature(rows[:1])


def test_service_starts_and_answers(tmp_path):
    service = ia.Service(str(tmp_path / "store"), threads=2)
    port = service.start()
    try:
        req = urllib.request.Request(f"http://127.0.0.1:{port}/sessions", data=b"{}",
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=10) as resp:
            assert len(json.load(resp)["id"]) == 16
    finally:
        service.stop()
