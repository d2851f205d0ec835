#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "interpalg/algebra.h"
#include "interpalg/error.h"
#include "interpalg/window.h"

namespace interpalg {

// Query grammar:
//
//   query  := SELECT target FROM IDENT '(' IDENT ')' [WHERE window]
//             [(JOIN | LEFT JOIN) '(' query ')']
//   target := '*' | INT | IDENT
//   window := IDENT | rect '(' INT ',' INT ',' INT ',' INT ')'
//
// Keywords are case-insensitive. The where and select clauses apply to the
// left operand of a join; the parenthesized sub-query is the right operand.

enum class TokenKind {
  kSelect,
  kStar,
  kInt,
  kFrom,
  kWhere,
  kJoin,
  kLeft,
  kIdent,
  kLParen,
  kRParen,
  kComma,
};

std::string_view token_kind_name(TokenKind kind);

struct Token {
  TokenKind kind;
  std::string lexeme;
  std::size_t offset = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

// Throws QueryError (lex) at the first character outside the language.
std::vector<Token> tokenize(std::string_view text);

struct StarTarget {
  friend bool operator==(const StarTarget&, const StarTarget&) = default;
};
// A stage index given literally or through a layer binding.
struct LayerTarget {
  std::variant<std::size_t, std::string> value;
  friend bool operator==(const LayerTarget&, const LayerTarget&) = default;
};

struct WindowTerm {
  std::variant<std::string, Rect> value;
  friend bool operator==(const WindowTerm&, const WindowTerm&) = default;
};

enum class JoinKind { kJoin, kLeftJoin };

struct QueryAst;

struct JoinClause {
  JoinKind kind = JoinKind::kJoin;
  std::shared_ptr<const QueryAst> sub;
};

// Source offsets of the clauses, for error reporting. Not part of equality.
struct QuerySpans {
  std::size_t select = 0;
  std::size_t target = 0;
  std::size_t model = 0;
  std::size_t input = 0;
  std::size_t where = 0;
  std::size_t join = 0;
};

struct QueryAst {
  std::variant<StarTarget, LayerTarget> target;
  std::string model;
  std::string input;
  std::optional<WindowTerm> where;
  std::optional<JoinClause> join;
  QuerySpans spans;
};

bool operator==(const QueryAst& a, const QueryAst& b);

// Recursive descent over `tokens`; `text_length` positions end-of-input errors.
QueryAst parse(const std::vector<Token>& tokens, std::size_t text_length);
QueryAst parse_query(std::string_view text);

// Canonical text: lowercase keywords, single spaces, no space inside rect().
std::string print(const QueryAst& ast);

struct Binding {
  enum class Kind { kModel, kInput, kWindow, kLayer };
  Kind kind;
  std::string ref;               // model or input registry ref
  std::optional<Window> window;  // kWindow
  std::size_t layer = 0;         // kLayer
};

std::string_view binding_kind_name(Binding::Kind kind);

// Free names of a query mapped to models, inputs, windows and layers.
class Bindings {
 public:
  // Throws ConfigError when `name` is already bound to a different kind.
  void bind_model(const std::string& name, std::string ref);
  void bind_input(const std::string& name, std::string ref);
  void bind_window(const std::string& name, Window window);
  void bind_layer(const std::string& name, std::size_t layer);
  void bind(const std::string& name, Binding binding);

  const Binding* find(const std::string& name) const;
  const std::map<std::string, Binding>& entries() const { return entries_; }

 private:
  std::map<std::string, Binding> entries_;
};

// A validation error positioned in the query text.
struct LocatedError {
  ErrorKind kind;
  std::string path;
  std::string message;
  std::size_t offset = 0;
};

struct QueryError : public Error {
  enum class Kind { kLex, kSyntax, kBind, kValidation };

  QueryError(Kind kind, std::size_t offset, std::string message,
             std::vector<std::string> expected = {}, std::vector<LocatedError> errors = {});

  Kind kind;
  std::size_t offset;
  std::string detail;
  std::vector<std::string> expected;
  std::vector<LocatedError> errors;
};

std::string_view query_error_kind_name(QueryError::Kind kind);

struct Lowered {
  ExprPtr expr;
  std::map<const Expr*, std::size_t> offsets;
};

// Builds the expression for `ast` and validates it against `registry`.
// Throws QueryError (bind or validation) with query offsets.
Lowered lower(const QueryAst& ast, const Bindings& bindings, const Registry& registry);

}  // namespace interpalg
