/*
 * Copyright (c) 2026 The Morpheus Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// State transformers: a small DSL that migrates documents from one
// namespace version to the next. A program is a list of rules:
//
//   for fw_allowed:* ns_v0->ns_v1 {
//     INIT ["last_count"] {$out = 0}
//     INIT ["time_created"] {$out = time.time()}
//   };
//
// Each rule names a namespace, a key glob ('*' wildcards only), the
// version edge it covers, and a list of directives. Directives are
// all-or-nothing per document: if any directive fails, the document is
// left untouched and the failure propagates. Keys that do not match the
// glob pass through unchanged (the store still advances their version
// tag; that bookkeeping lives in the store, not here).

#pragma once

#include <cctype>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "morpheus/clock.hpp"
#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"

namespace morpheus {

// '*'-only glob match, shared with the store's list_keys.
inline bool glob_match(std::string_view pattern, std::string_view text) {
  size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == text[t])) {
      ++p, ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

namespace xfgen {

// ---------------------------------------------------------------------------
// AST

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { Literal, Now, InField, Key, Binary };
  Kind kind = Kind::Literal;
  Document literal;                // Literal (number/string/bool/null)
  std::vector<std::string> path;   // InField
  char op = 0;                     // Binary: + - * /
  ExprPtr lhs, rhs;
};

inline ExprPtr make_literal(Document v) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Literal;
  e->literal = std::move(v);
  return e;
}
inline ExprPtr make_now() {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Now;
  return e;
}
inline ExprPtr make_key() {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Key;
  return e;
}
inline ExprPtr make_in_field(std::vector<std::string> path) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::InField;
  e->path = std::move(path);
  return e;
}
inline ExprPtr make_binary(char op, ExprPtr l, ExprPtr r) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Binary;
  e->op = op;
  e->lhs = std::move(l);
  e->rhs = std::move(r);
  return e;
}

inline bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
  if (a == b) return true;
  if (!a || !b || a->kind != b->kind) return false;
  switch (a->kind) {
    case Expr::Kind::Literal:
      return documents_identical(a->literal, b->literal);
    case Expr::Kind::Now:
    case Expr::Kind::Key:
      return true;
    case Expr::Kind::InField:
      return a->path == b->path;
    case Expr::Kind::Binary:
      return a->op == b->op && expr_equal(a->lhs, b->lhs) &&
             expr_equal(a->rhs, b->rhs);
  }
  return false;
}

struct Directive {
  enum class Kind { Init, Set, Rename, Delete, RenameKey };
  Kind kind = Kind::Init;
  std::vector<std::string> path;   // Init/Set/Delete target, Rename old
  std::vector<std::string> path2;  // Rename new
  ExprPtr expr;                    // Init/Set/RenameKey

  friend bool operator==(const Directive& a, const Directive& b) {
    return a.kind == b.kind && a.path == b.path && a.path2 == b.path2 &&
           expr_equal(a.expr, b.expr);
  }
};

struct TransformRule {
  std::string ns;
  std::string key_glob;
  std::string from_version;
  std::string to_version;
  std::vector<Directive> directives;
  int line = 0;  // source position, for diagnostics only

  friend bool operator==(const TransformRule& a, const TransformRule& b) {
    return a.ns == b.ns && a.key_glob == b.key_glob &&
           a.from_version == b.from_version && a.to_version == b.to_version &&
           a.directives == b.directives;
  }
};

struct TransformProgram {
  std::vector<TransformRule> rules;

  friend bool operator==(const TransformProgram& a, const TransformProgram& b) {
    return a.rules == b.rules;
  }
};

// ---------------------------------------------------------------------------
// Lexer

namespace detail {

enum class Tok {
  Ident, Glob, String, Int, Float,
  Colon, Arrow, LBrace, RBrace, LBracket, RBracket, LParen, RParen,
  Semi, Eq, Plus, Minus, Star, Slash,
  DollarOut, DollarIn, DollarKey,
  Eof,
};

struct Token {
  Tok kind = Tok::Eof;
  std::string text;
  double num_f = 0;
  long long num_i = 0;
  int line = 1, col = 1;
  size_t offset = 0;        // source offset of the first character
  bool space_before = false;  // whitespace/comment separated it from the prior token
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  // Regular tokenization. Globs are requested explicitly by the parser
  // (next_glob) because '*' is also the multiplication operator.
  Token next() {
    size_t before = pos_;
    skip_ws();
    Token t;
    t.space_before = pos_ != before;
    t.line = line_;
    t.col = col_;
    t.offset = pos_;
    if (eof()) {
      t.kind = Tok::Eof;
      return t;
    }
    char c = peek();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                        peek() == '_' || peek() == '.'))
        t.text += get();
      t.kind = Tok::Ident;
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::string num;
      bool is_float = false;
      while (!eof() && std::isdigit(static_cast<unsigned char>(peek())))
        num += get();
      if (!eof() && peek() == '.') {
        is_float = true;
        num += get();
        if (eof() || !std::isdigit(static_cast<unsigned char>(peek())))
          fail(t, "malformed number");
        while (!eof() && std::isdigit(static_cast<unsigned char>(peek())))
          num += get();
      }
      if (!eof() && (peek() == 'e' || peek() == 'E')) {
        is_float = true;
        num += get();
        if (!eof() && (peek() == '+' || peek() == '-')) num += get();
        while (!eof() && std::isdigit(static_cast<unsigned char>(peek())))
          num += get();
      }
      t.text = num;
      if (is_float) {
        t.kind = Tok::Float;
        t.num_f = std::stod(num);
      } else {
        t.kind = Tok::Int;
        t.num_i = std::stoll(num);
      }
      return t;
    }
    if (c == '"') {
      get();
      std::string s;
      while (true) {
        if (eof()) fail(t, "unterminated string literal");
        char ch = get();
        if (ch == '"') break;
        if (ch == '\\') {
          if (eof()) fail(t, "unterminated escape");
          char esc = get();
          switch (esc) {
            case 'n': s += '\n'; break;
            case 't': s += '\t'; break;
            case '\\': s += '\\'; break;
            case '"': s += '"'; break;
            default: fail(t, std::string("unknown escape \\") + esc);
          }
        } else {
          s += ch;
        }
      }
      t.kind = Tok::String;
      t.text = s;
      return t;
    }
    if (c == '$') {
      get();
      std::string name;
      while (!eof() && std::isalpha(static_cast<unsigned char>(peek())))
        name += get();
      if (name == "out") t.kind = Tok::DollarOut;
      else if (name == "in") t.kind = Tok::DollarIn;
      else if (name == "key") t.kind = Tok::DollarKey;
      else fail(t, "unknown variable $" + name);
      return t;
    }
    get();
    switch (c) {
      case ':': t.kind = Tok::Colon; return t;
      case '{': t.kind = Tok::LBrace; return t;
      case '}': t.kind = Tok::RBrace; return t;
      case '[': t.kind = Tok::LBracket; return t;
      case ']': t.kind = Tok::RBracket; return t;
      case '(': t.kind = Tok::LParen; return t;
      case ')': t.kind = Tok::RParen; return t;
      case ';': t.kind = Tok::Semi; return t;
      case '=': t.kind = Tok::Eq; return t;
      case '+': t.kind = Tok::Plus; return t;
      case '*': t.kind = Tok::Star; return t;
      case '/': t.kind = Tok::Slash; return t;
      case '-':
        if (!eof() && peek() == '>') {
          get();
          t.kind = Tok::Arrow;
          return t;
        }
        t.kind = Tok::Minus;
        return t;
      default:
        fail(t, std::string("unexpected character '") + c + "'");
    }
    return t;  // unreachable
  }

  // Raw scan for a key glob: everything up to whitespace.
  Token next_glob() {
    skip_ws();
    Token t;
    t.line = line_;
    t.col = col_;
    t.offset = pos_;
    if (eof()) fail(t, "expected key glob");
    while (!eof() && !std::isspace(static_cast<unsigned char>(peek())))
      t.text += get();
    t.kind = Tok::Glob;
    return t;
  }

  // Re-position to a previously returned token's start. The parser keeps
  // one token of lookahead; glob scanning rewinds to that token and lexes
  // raw from there instead.
  void rewind_to(const Token& t) {
    pos_ = t.offset;
    line_ = t.line;
    col_ = t.col;
  }

 private:
  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return src_[pos_]; }
  char get() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }
  void skip_ws() {
    while (!eof()) {
      char c = peek();
      if (c == '#') {
        while (!eof() && peek() != '\n') get();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        get();
      } else {
        break;
      }
    }
  }
  [[noreturn]] void fail(const Token& at, const std::string& msg) {
    throw SyntaxError(at.line, at.col, msg);
  }

  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : lex_(src) { advance(); }

  TransformProgram parse_program() {
    TransformProgram prog;
    while (cur_.kind != Tok::Eof) prog.rules.push_back(parse_rule());
    if (prog.rules.empty())
      throw SyntaxError(cur_.line, cur_.col, "empty program");
    // Each (namespace, from_version) edge may be covered by one rule only.
    for (size_t i = 0; i < prog.rules.size(); ++i)
      for (size_t j = i + 1; j < prog.rules.size(); ++j)
        if (prog.rules[i].ns == prog.rules[j].ns &&
            prog.rules[i].from_version == prog.rules[j].from_version)
          throw DuplicateRule("duplicate rule for " + prog.rules[i].ns + " " +
                              prog.rules[i].from_version);
    return prog;
  }

 private:
  TransformRule parse_rule() {
    TransformRule rule;
    rule.line = cur_.line;
    expect_ident("for");
    rule.ns = expect(Tok::Ident, "namespace name").text;
    expect(Tok::Colon, "':'");
    rule.key_glob = lex_glob();
    rule.from_version = expect(Tok::Ident, "source version").text;
    expect(Tok::Arrow, "'->'");
    rule.to_version = expect(Tok::Ident, "target version").text;
    if (rule.from_version == rule.to_version)
      throw SyntaxError(rule.line, 1,
                        "rule maps version " + rule.from_version + " to itself");
    expect(Tok::LBrace, "'{'");
    while (cur_.kind != Tok::RBrace)
      rule.directives.push_back(parse_directive());
    expect(Tok::RBrace, "'}'");
    expect(Tok::Semi, "';'");
    if (rule.directives.empty())
      throw SyntaxError(rule.line, 1, "rule has no directives");
    return rule;
  }

  Directive parse_directive() {
    Token head = expect(Tok::Ident, "directive");
    Directive d;
    if (head.text == "INIT") {
      d.kind = Directive::Kind::Init;
      d.path = parse_path();
      d.expr = parse_block();
    } else if (head.text == "SET") {
      d.kind = Directive::Kind::Set;
      d.path = parse_path();
      d.expr = parse_block();
    } else if (head.text == "RENAME") {
      d.kind = Directive::Kind::Rename;
      d.path = parse_path();
      d.path2 = parse_path();
    } else if (head.text == "DELETE") {
      d.kind = Directive::Kind::Delete;
      d.path = parse_path();
    } else if (head.text == "RENAMEKEY") {
      d.kind = Directive::Kind::RenameKey;
      d.expr = parse_block();
    } else {
      throw SyntaxError(head.line, head.col,
                        "unknown directive '" + head.text + "'");
    }
    return d;
  }

  // A path is one or more adjacent ["segment"] groups. Adjacency (no
  // whitespace between ']' and '[') is what separates the two operands of
  // RENAME from a single nested path.
  std::vector<std::string> parse_path() {
    std::vector<std::string> path;
    if (cur_.kind != Tok::LBracket)
      throw SyntaxError(cur_.line, cur_.col, "expected field path");
    bool first = true;
    while (cur_.kind == Tok::LBracket && (first || !cur_.space_before)) {
      first = false;
      advance();
      path.push_back(expect(Tok::String, "field name string").text);
      expect(Tok::RBracket, "']'");
    }
    return path;
  }

  ExprPtr parse_block() {
    expect(Tok::LBrace, "'{'");
    expect(Tok::DollarOut, "'$out'");
    expect(Tok::Eq, "'='");
    ExprPtr e = parse_expr();
    expect(Tok::RBrace, "'}'");
    return e;
  }

  // expr := term (('+'|'-') term)* ; term := factor (('*'|'/') factor)*
  ExprPtr parse_expr() {
    ExprPtr e = parse_term();
    while (cur_.kind == Tok::Plus || cur_.kind == Tok::Minus) {
      char op = cur_.kind == Tok::Plus ? '+' : '-';
      advance();
      e = make_binary(op, e, parse_term());
    }
    return e;
  }

  ExprPtr parse_term() {
    ExprPtr e = parse_factor();
    while (cur_.kind == Tok::Star || cur_.kind == Tok::Slash) {
      char op = cur_.kind == Tok::Star ? '*' : '/';
      advance();
      e = make_binary(op, e, parse_factor());
    }
    return e;
  }

  ExprPtr parse_factor() {
    switch (cur_.kind) {
      case Tok::Int: {
        auto e = make_literal(Document(cur_.num_i));
        advance();
        return e;
      }
      case Tok::Float: {
        auto e = make_literal(Document(cur_.num_f));
        advance();
        return e;
      }
      case Tok::String: {
        auto e = make_literal(Document(cur_.text));
        advance();
        return e;
      }
      case Tok::Ident: {
        Token t = cur_;
        if (t.text == "now" || t.text == "time.time") {
          advance();
          expect(Tok::LParen, "'('");
          expect(Tok::RParen, "')'");
          return make_now();
        }
        if (t.text == "true" || t.text == "false") {
          advance();
          return make_literal(Document(t.text == "true"));
        }
        if (t.text == "null") {
          advance();
          return make_literal(Document(nullptr));
        }
        throw SyntaxError(t.line, t.col, "unexpected identifier '" + t.text + "'");
      }
      case Tok::DollarIn: {
        advance();
        return make_in_field(parse_path());
      }
      case Tok::DollarKey: {
        advance();
        return make_key();
      }
      case Tok::LParen: {
        advance();
        ExprPtr e = parse_expr();
        expect(Tok::RParen, "')'");
        return e;
      }
      default:
        throw SyntaxError(cur_.line, cur_.col, "expected expression");
    }
  }

  void advance() { cur_ = lex_.next(); }

  Token expect(Tok kind, const std::string& what) {
    if (cur_.kind != kind)
      throw SyntaxError(cur_.line, cur_.col,
                        "expected " + what + ", got '" + cur_.text + "'");
    Token t = cur_;
    advance();
    return t;
  }

  void expect_ident(const std::string& word) {
    if (cur_.kind != Tok::Ident || cur_.text != word)
      throw SyntaxError(cur_.line, cur_.col, "expected '" + word + "'");
    advance();
  }

  std::string lex_glob() {
    // The glob sits between ':' and the source version; lex it raw since
    // '*' would otherwise tokenize as multiplication. The lookahead token
    // already swallowed the glob's first characters, so rewind first.
    lex_.rewind_to(cur_);
    Token g = lex_.next_glob();
    advance();
    return g.text;
  }

  Lexer lex_;
  Token cur_;
};

}  // namespace detail

inline TransformProgram parse(std::string_view source) {
  return detail::Parser(source).parse_program();
}

// ---------------------------------------------------------------------------
// Pretty printer. parse(pretty_print(parse(s))) == parse(s).

namespace detail {

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  out += '"';
  return out;
}

inline std::string print_path(const std::vector<std::string>& path) {
  std::string out;
  for (const auto& p : path) out += "[" + quote(p) + "]";
  return out;
}

inline std::string print_expr(const ExprPtr& e) {
  switch (e->kind) {
    case Expr::Kind::Literal:
      return serialize(e->literal);
    case Expr::Kind::Now:
      return "time.time()";
    case Expr::Kind::Key:
      return "$key";
    case Expr::Kind::InField:
      return "$in" + print_path(e->path);
    case Expr::Kind::Binary:
      // Always parenthesize; precedence never needs re-deriving on reparse.
      return "(" + print_expr(e->lhs) + " " + std::string(1, e->op) + " " +
             print_expr(e->rhs) + ")";
  }
  return "";
}

inline std::string print_directive(const Directive& d) {
  switch (d.kind) {
    case Directive::Kind::Init:
      return "INIT " + print_path(d.path) + " {$out = " + print_expr(d.expr) + "}";
    case Directive::Kind::Set:
      return "SET " + print_path(d.path) + " {$out = " + print_expr(d.expr) + "}";
    case Directive::Kind::Rename:
      return "RENAME " + print_path(d.path) + " " + print_path(d.path2);
    case Directive::Kind::Delete:
      return "DELETE " + print_path(d.path);
    case Directive::Kind::RenameKey:
      return "RENAMEKEY {$out = " + print_expr(d.expr) + "}";
  }
  return "";
}

}  // namespace detail

inline std::string pretty_print(const TransformRule& rule) {
  std::string out = "for " + rule.ns + ":" + rule.key_glob + " " +
                    rule.from_version + "->" + rule.to_version + " {\n";
  for (const auto& d : rule.directives)
    out += "  " + detail::print_directive(d) + "\n";
  out += "};\n";
  return out;
}

inline std::string pretty_print(const TransformProgram& prog) {
  std::string out;
  for (const auto& r : prog.rules) out += pretty_print(r);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

struct EvalCtx {
  const Document& original;
  const std::string& key;
  const Clock& clock;
};

inline Document eval_expr(const ExprPtr& e, const EvalCtx& ctx) {
  switch (e->kind) {
    case Expr::Kind::Literal:
      return e->literal;
    case Expr::Kind::Now:
      return Document(ctx.clock.now());
    case Expr::Kind::Key:
      return Document(ctx.key);
    case Expr::Kind::InField: {
      const Document* cur = &ctx.original;
      for (const auto& field : e->path) {
        if (!cur->is_object() || !cur->contains(field))
          throw TransformFailure("$in" + print_path(e->path) +
                                 " refers to a missing field");
        cur = &cur->at(field);
      }
      return *cur;
    }
    case Expr::Kind::Binary: {
      Document l = eval_expr(e->lhs, ctx);
      Document r = eval_expr(e->rhs, ctx);
      if (l.is_string() && r.is_string()) {
        if (e->op != '+')
          throw TransformFailure(std::string("operator '") + e->op +
                                 "' is not defined on strings");
        return Document(l.get<std::string>() + r.get<std::string>());
      }
      if (!l.is_number() || !r.is_number())
        throw TransformFailure(std::string("operator '") + e->op +
                               "' applied to non-numeric operands");
      bool both_int = l.is_number_integer() && r.is_number_integer();
      if (e->op == '/') {
        double rd = r.get<double>();
        if (rd == 0.0) throw TransformFailure("division by zero");
        return Document(l.get<double>() / rd);  // '/' always yields a float
      }
      if (both_int) {
        long long a = l.get<long long>(), b = r.get<long long>();
        switch (e->op) {
          case '+': return Document(a + b);
          case '-': return Document(a - b);
          case '*': return Document(a * b);
        }
      }
      double a = l.get<double>(), b = r.get<double>();
      switch (e->op) {
        case '+': return Document(a + b);
        case '-': return Document(a - b);
        case '*': return Document(a * b);
      }
      throw TransformFailure("unknown operator");
    }
  }
  throw TransformFailure("unknown expression kind");
}

// Navigate to the parent object of `path`. Intermediate fields must exist
// and be objects; only the leaf may be created or removed.
inline Document* parent_of(Document& doc, const std::vector<std::string>& path) {
  Document* cur = &doc;
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    if (!cur->is_object() || !cur->contains(path[i]))
      throw TransformFailure("missing intermediate field '" + path[i] + "'");
    cur = &cur->at(path[i]);
  }
  if (!cur->is_object())
    throw TransformFailure("document is not an object at path " +
                           print_path(path));
  return cur;
}

}  // namespace detail

// A compiled, executable rule.
class Transformer {
 public:
  Transformer(TransformRule rule, std::string source)
      : rule_(std::move(rule)), source_(std::move(source)) {}

  const std::string& ns() const { return rule_.ns; }
  const std::string& from_version() const { return rule_.from_version; }
  const std::string& to_version() const { return rule_.to_version; }
  const std::string& source() const { return source_; }
  const TransformRule& rule() const { return rule_; }

  // Migrate one (key, document) pair. Glob misses pass through untouched.
  // All-or-nothing: throws TransformFailure without partial effects.
  std::pair<std::string, Document> apply(const std::string& key,
                                         const Document& doc,
                                         const Clock& clock) const {
    if (!glob_match(rule_.key_glob, key)) return {key, doc};
    Document out = doc;
    std::string out_key = key;
    detail::EvalCtx ctx{doc, key, clock};
    for (const auto& d : rule_.directives) {
      switch (d.kind) {
        case Directive::Kind::Init: {
          Document* parent = detail::parent_of(out, d.path);
          const std::string& leaf = d.path.back();
          if (parent->contains(leaf))
            throw TransformFailure("INIT " + detail::print_path(d.path) +
                                   ": field already present");
          (*parent)[leaf] = detail::eval_expr(d.expr, ctx);
          break;
        }
        case Directive::Kind::Set: {
          Document* parent = detail::parent_of(out, d.path);
          const std::string& leaf = d.path.back();
          if (!parent->contains(leaf))
            throw TransformFailure("SET " + detail::print_path(d.path) +
                                   ": field absent");
          (*parent)[leaf] = detail::eval_expr(d.expr, ctx);
          break;
        }
        case Directive::Kind::Rename: {
          Document* from_parent = detail::parent_of(out, d.path);
          const std::string& from_leaf = d.path.back();
          if (!from_parent->contains(from_leaf))
            throw TransformFailure("RENAME " + detail::print_path(d.path) +
                                   ": field absent");
          Document value = from_parent->at(from_leaf);
          from_parent->erase(from_leaf);
          Document* to_parent = detail::parent_of(out, d.path2);
          const std::string& to_leaf = d.path2.back();
          if (to_parent->contains(to_leaf))
            throw TransformFailure("RENAME to " + detail::print_path(d.path2) +
                                   ": target field already present");
          (*to_parent)[to_leaf] = std::move(value);
          break;
        }
        case Directive::Kind::Delete: {
          Document* parent = detail::parent_of(out, d.path);
          const std::string& leaf = d.path.back();
          if (!parent->contains(leaf))
            throw TransformFailure("DELETE " + detail::print_path(d.path) +
                                   ": field absent");
          parent->erase(leaf);
          break;
        }
        case Directive::Kind::RenameKey: {
          Document nk = detail::eval_expr(d.expr, ctx);
          if (!nk.is_string())
            throw TransformFailure("RENAMEKEY expression must yield a string");
          out_key = nk.get<std::string>();
          break;
        }
      }
    }
    return {std::move(out_key), std::move(out)};
  }

 private:
  TransformRule rule_;
  std::string source_;
};

// Static validation + packaging of each rule into a Transformer. The only
// static errors are structural: empty directive lists and duplicate
// directive targets within one rule.
inline std::vector<Transformer> compile(const TransformProgram& prog) {
  std::vector<Transformer> out;
  if (prog.rules.empty()) throw ValidationError("program has no rules");
  for (const auto& rule : prog.rules) {
    if (rule.directives.empty())
      throw ValidationError("rule for " + rule.ns + " has no directives");
    if (rule.from_version == rule.to_version)
      throw ValidationError("rule for " + rule.ns + " maps " +
                            rule.from_version + " to itself");
    for (size_t i = 0; i < rule.directives.size(); ++i) {
      for (size_t j = i + 1; j < rule.directives.size(); ++j) {
        const auto& a = rule.directives[i];
        const auto& b = rule.directives[j];
        if (a.kind == b.kind && !a.path.empty() && a.path == b.path)
          throw ValidationError("duplicate directive target " +
                                detail::print_path(a.path) + " in rule for " +
                                rule.ns);
      }
    }
    TransformRule copy = rule;
    std::string source = pretty_print(copy);
    out.emplace_back(std::move(copy), std::move(source));
  }
  return out;
}

inline std::vector<Transformer> compile(std::string_view source) {
  return compile(parse(source));
}

}  // namespace xfgen
}  // namespace morpheus
