#include "interpalg/qlang.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>
#include <utility>

namespace interpalg {

std::string_view token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::kSelect: return "select";
    case TokenKind::kStar: return "'*'";
    case TokenKind::kInt: return "integer";
    case TokenKind::kFrom: return "from";
    case TokenKind::kWhere: return "where";
    case TokenKind::kJoin: return "join";
    case TokenKind::kLeft: return "left";
    case TokenKind::kIdent: return "identifier";
    case TokenKind::kLParen: return "'('";
    case TokenKind::kRParen: return "')'";
    case TokenKind::kComma: return "','";
  }
  return "?";
}

std::string_view query_error_kind_name(QueryError::Kind kind) {
  switch (kind) {
    case QueryError::Kind::kLex: return "lex";
    case QueryError::Kind::kSyntax: return "syntax";
    case QueryError::Kind::kBind: return "bind";
    case QueryError::Kind::kValidation: return "validation";
  }
  return "?";
}

namespace {

std::string error_text(QueryError::Kind kind, std::size_t offset, const std::string& message,
                       const std::vector<LocatedError>& errors) {
  std::string out = std::string(query_error_kind_name(kind)) + " error at offset " +
                    std::to_string(offset) + ": " + message;
  for (const auto& e : errors) {
    out += "\n  " + std::string(error_kind_name(e.kind)) + " at offset " +
           std::to_string(e.offset) + ": " + e.message + " (rule: " +
           std::string(violated_rule(e.kind)) + "; fix: " + std::string(remediation(e.kind)) +
           ")";
  }
  return out;
}

}  // namespace

QueryError::QueryError(Kind kind, std::size_t offset, std::string message,
                       std::vector<std::string> expected, std::vector<LocatedError> errors)
    : Error(error_text(kind, offset, message, errors)),
      kind(kind),
      offset(offset),
      detail(std::move(message)),
      expected(std::move(expected)),
      errors(std::move(errors)) {}

// ---------------------------------------------------------------------------
// Lexer

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\'';
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::optional<TokenKind> keyword(std::string_view word) {
  const std::string w = lowercase(word);
  if (w == "select") return TokenKind::kSelect;
  if (w == "from") return TokenKind::kFrom;
  if (w == "where") return TokenKind::kWhere;
  if (w == "join") return TokenKind::kJoin;
  if (w == "left") return TokenKind::kLeft;
  return std::nullopt;
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (ident_start(c)) {
      while (i < text.size() && ident_char(text[i])) ++i;
      const std::string_view word = text.substr(start, i - start);
      out.push_back({keyword(word).value_or(TokenKind::kIdent), std::string(word), start});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      out.push_back({TokenKind::kInt, std::string(text.substr(start, i - start)), start});
      continue;
    }
    TokenKind kind;
    switch (c) {
      case '*': kind = TokenKind::kStar; break;
      case '(': kind = TokenKind::kLParen; break;
      case ')': kind = TokenKind::kRParen; break;
      case ',': kind = TokenKind::kComma; break;
      default:
        throw QueryError(QueryError::Kind::kLex, start,
                         "unexpected character '" + std::string(1, c) + "'");
    }
    out.push_back({kind, std::string(1, c), start});
    ++i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parser

bool operator==(const QueryAst& a, const QueryAst& b) {
  if (!(a.target == b.target && a.model == b.model && a.input == b.input && a.where == b.where &&
        a.join.has_value() == b.join.has_value())) {
    return false;
  }
  if (!a.join) return true;
  return a.join->kind == b.join->kind && *a.join->sub == *b.join->sub;
}

namespace {

class Parser {
 public:
  Parser(const std::vector<Token>& tokens, std::size_t text_length)
      : tokens_(tokens), end_(text_length) {}

  QueryAst run() {
    QueryAst ast = query();
    if (pos_ < tokens_.size()) fail({"end of query"});
    return ast;
  }

 private:
  const Token* peek() const { return pos_ < tokens_.size() ? &tokens_[pos_] : nullptr; }
  std::size_t here() const { return peek() ? peek()->offset : end_; }
  bool at(TokenKind k) const { return peek() && peek()->kind == k; }

  [[noreturn]] void fail(std::vector<std::string> expected, const std::string& context = "") {
    std::string msg = "expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (i) msg += i + 1 == expected.size() ? " or " : ", ";
      msg += expected[i];
    }
    if (!context.empty()) msg += " " + context;
    msg += peek() ? ", found '" + peek()->lexeme + "'" : ", found end of query";
    throw QueryError(QueryError::Kind::kSyntax, here(), msg, std::move(expected));
  }

  const Token& expect(TokenKind k, const std::string& context = "") {
    if (!at(k)) fail({std::string(token_kind_name(k))}, context);
    return tokens_[pos_++];
  }

  std::size_t integer(const Token& t, bool positive) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(t.lexeme.data(), t.lexeme.data() + t.lexeme.size(), v);
    if (ec != std::errc() || ptr != t.lexeme.data() + t.lexeme.size()) {
      throw QueryError(QueryError::Kind::kSyntax, t.offset, "integer '" + t.lexeme + "' is too large");
    }
    if (positive && v == 0) {
      throw QueryError(QueryError::Kind::kSyntax, t.offset, "layer must be a positive integer");
    }
    return v;
  }

  QueryAst query() {
    QueryAst ast;
    ast.spans.select = here();
    expect(TokenKind::kSelect);
    ast.spans.target = here();
    if (at(TokenKind::kStar)) {
      ++pos_;
      ast.target = StarTarget{};
    } else if (at(TokenKind::kInt)) {
      ast.target = LayerTarget{integer(tokens_[pos_++], true)};
    } else if (at(TokenKind::kIdent)) {
      ast.target = LayerTarget{tokens_[pos_++].lexeme};
    } else {
      fail({"'*'", "integer", "identifier"}, "after select");
    }
    expect(TokenKind::kFrom, "after the select target");
    ast.spans.model = here();
    ast.model = expect(TokenKind::kIdent, "after from").lexeme;
    expect(TokenKind::kLParen, "after the model name");
    ast.spans.input = here();
    ast.input = expect(TokenKind::kIdent, "as the input name").lexeme;
    expect(TokenKind::kRParen, "after the input name");
    if (at(TokenKind::kWhere)) {
      ++pos_;
      ast.spans.where = here();
      ast.where = window_term();
    }
    if (at(TokenKind::kJoin) || at(TokenKind::kLeft)) {
      ast.spans.join = here();
      JoinClause clause;
      if (at(TokenKind::kLeft)) {
        ++pos_;
        expect(TokenKind::kJoin, "after left");
        clause.kind = JoinKind::kLeftJoin;
      } else {
        ++pos_;
      }
      expect(TokenKind::kLParen, "after join");
      clause.sub = std::make_shared<const QueryAst>(query());
      expect(TokenKind::kRParen, "to close the sub-query");
      ast.join = std::move(clause);
    }
    return ast;
  }

  WindowTerm window_term() {
    const Token& name = expect(TokenKind::kIdent, "after where");
    if (lowercase(name.lexeme) != "rect" || !at(TokenKind::kLParen)) return {name.lexeme};
    ++pos_;
    std::size_t v[4];
    for (int i = 0; i < 4; ++i) {
      if (i) expect(TokenKind::kComma, "between rect coordinates");
      v[i] = integer(expect(TokenKind::kInt, "as a rect coordinate"), false);
    }
    expect(TokenKind::kRParen, "to close rect");
    if (v[0] > v[2] || v[1] > v[3]) {
      throw QueryError(QueryError::Kind::kSyntax, name.offset,
                       "rect corners must satisfy r0 <= r1 and c0 <= c1");
    }
    return {Rect{v[0], v[1], v[2], v[3]}};
  }

  const std::vector<Token>& tokens_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

QueryAst parse(const std::vector<Token>& tokens, std::size_t text_length) {
  return Parser(tokens, text_length).run();
}

QueryAst parse_query(std::string_view text) { return parse(tokenize(text), text.size()); }

std::string print(const QueryAst& ast) {
  std::string out = "select ";
  if (std::holds_alternative<StarTarget>(ast.target)) {
    out += "*";
  } else {
    const auto& t = std::get<LayerTarget>(ast.target).value;
    out += std::holds_alternative<std::size_t>(t) ? std::to_string(std::get<std::size_t>(t))
                                                  : std::get<std::string>(t);
  }
  out += " from " + ast.model + "(" + ast.input + ")";
  if (ast.where) {
    out += " where ";
    if (const auto* name = std::get_if<std::string>(&ast.where->value)) {
      out += *name;
    } else {
      const Rect& r = std::get<Rect>(ast.where->value);
      out += "rect(" + std::to_string(r.r0) + "," + std::to_string(r.c0) + "," +
             std::to_string(r.r1) + "," + std::to_string(r.c1) + ")";
    }
  }
  if (ast.join) {
    out += ast.join->kind == JoinKind::kJoin ? " join (" : " left join (";
    out += print(*ast.join->sub) + ")";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bindings and lowering

std::string_view binding_kind_name(Binding::Kind kind) {
  switch (kind) {
    case Binding::Kind::kModel: return "model";
    case Binding::Kind::kInput: return "input";
    case Binding::Kind::kWindow: return "window";
    case Binding::Kind::kLayer: return "layer";
  }
  return "?";
}

void Bindings::bind(const std::string& name, Binding binding) {
  if (auto it = entries_.find(name); it != entries_.end() && it->second.kind != binding.kind) {
    throw ConfigError("'" + name + "' is already bound to a " +
                      std::string(binding_kind_name(it->second.kind)));
  }
  entries_.insert_or_assign(name, std::move(binding));
}

void Bindings::bind_model(const std::string& name, std::string ref) {
  bind(name, {Binding::Kind::kModel, std::move(ref), std::nullopt, 0});
}
void Bindings::bind_input(const std::string& name, std::string ref) {
  bind(name, {Binding::Kind::kInput, std::move(ref), std::nullopt, 0});
}
void Bindings::bind_window(const std::string& name, Window window) {
  bind(name, {Binding::Kind::kWindow, "", std::move(window), 0});
}
void Bindings::bind_layer(const std::string& name, std::size_t layer) {
  bind(name, {Binding::Kind::kLayer, "", std::nullopt, layer});
}

const Binding* Bindings::find(const std::string& name) const {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second;
}

namespace {

class Lowerer {
 public:
  Lowerer(const Bindings& bindings, const Registry& registry)
      : bindings_(bindings), registry_(registry) {}

  Lowered run(const QueryAst& ast) {
    Lowered out;
    out.expr = lower(ast);
    out.offsets = std::move(offsets_);
    auto errors = validate(out.expr, registry_);
    if (!errors.empty()) {
      std::vector<LocatedError> located;
      for (const auto& e : errors) {
        auto it = out.offsets.find(e.node);
        located.push_back({e.kind, e.path, e.message, it == out.offsets.end() ? 0 : it->second});
      }
      const std::size_t first = located.front().offset;
      throw QueryError(QueryError::Kind::kValidation, first, "query does not validate", {},
                       std::move(located));
    }
    return out;
  }

 private:
  const Binding& lookup(const std::string& name, Binding::Kind kind, std::size_t offset,
                        const char* role) {
    const Binding* b = bindings_.find(name);
    if (!b) {
      throw QueryError(QueryError::Kind::kBind, offset,
                       "unbound identifier '" + name + "' used as " + role);
    }
    if (b->kind != kind) {
      throw QueryError(QueryError::Kind::kBind, offset,
                       "'" + name + "' is bound to a " + std::string(binding_kind_name(b->kind)) +
                           " but is used as " + role);
    }
    return *b;
  }

  ExprPtr note(ExprPtr e, std::size_t offset) {
    offsets_[e.get()] = offset;
    return e;
  }

  // Leaf of one query level; returns the input ref for cross-model detection.
  ExprPtr lower_operand(const QueryAst& ast, std::string& input_ref, std::string& model_ref) {
    model_ref = lookup(ast.model, Binding::Kind::kModel, ast.spans.model, "a model").ref;
    input_ref = lookup(ast.input, Binding::Kind::kInput, ast.spans.input, "an input").ref;
    ExprPtr e = note(make_identity(model_ref, input_ref), ast.spans.model);
    if (const auto* layer = std::get_if<LayerTarget>(&ast.target)) {
      std::size_t l;
      if (const auto* lit = std::get_if<std::size_t>(&layer->value)) {
        l = *lit;
      } else {
        l = lookup(std::get<std::string>(layer->value), Binding::Kind::kLayer, ast.spans.target,
                   "a layer")
                .layer;
      }
      e = note(make_select(e, l), ast.spans.target);
    }
    if (ast.where) {
      e = note(make_project(e, window(*ast.where, input_ref, ast.spans.where)), ast.spans.where);
    }
    return e;
  }

  Window window(const WindowTerm& term, const std::string& input_ref, std::size_t offset) {
    if (const auto* name = std::get_if<std::string>(&term.value)) {
      return *lookup(*name, Binding::Kind::kWindow, offset, "a window").window;
    }
    const Tensor* x = registry_.find_input(input_ref);
    if (!x) {
      throw QueryError(QueryError::Kind::kValidation, offset, "rect needs a registered input", {},
                       {{ErrorKind::kUnknownRef, "", "unknown input '" + input_ref + "'", offset}});
    }
    try {
      return Window::from_rect(x->shape(), std::get<Rect>(term.value));
    } catch (const Error& e) {
      throw QueryError(QueryError::Kind::kValidation, offset, "rect does not fit the input", {},
                       {{ErrorKind::kShapeMismatch, "", e.what(), offset}});
    }
  }

  ExprPtr lower(const QueryAst& ast) {
    std::string input, model;
    ExprPtr left = lower_operand(ast, input, model);
    if (!ast.join) return left;
    const QueryAst& sub = *ast.join->sub;
    ExprPtr right = lower(sub);
    if (ast.join->kind == JoinKind::kJoin) return note(make_join(left, right), ast.spans.join);
    bool cross = false;
    if (!sub.join) {
      const Binding* sub_input = bindings_.find(sub.input);
      const Binding* sub_model = bindings_.find(sub.model);
      cross = sub_input && sub_model && sub_input->ref == input && sub_model->ref != model;
    }
    return note(make_antijoin(left, right, cross), ast.spans.join);
  }

  const Bindings& bindings_;
  const Registry& registry_;
  std::map<const Expr*, std::size_t> offsets_;
};

}  // namespace

Lowered lower(const QueryAst& ast, const Bindings& bindings, const Registry& registry) {
  return Lowerer(bindings, registry).run(ast);
}

}  // namespace interpalg
