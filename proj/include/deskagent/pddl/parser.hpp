#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "deskagent/pddl/ast.hpp"

namespace deskagent::pddl {

namespace detail {

enum class TokenKind { LParen, RParen, Name, Variable, Keyword, Dash, End };

struct Token {
  TokenKind kind = TokenKind::End;
  std::string text;
  SourcePos pos;
};

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
inline bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '-' || c == '_';
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  SourcePos pos;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n && i < text.size(); ++k, ++i) {
      if (text[i] == '\n') {
        ++pos.line;
        pos.column = 1;
      } else {
        ++pos.column;
      }
    }
  };
  auto read_ident = [&](std::size_t from) {
    std::size_t j = from;
    while (j < text.size() && ident_char(text[j])) ++j;
    return j;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == ';') {
      while (i < text.size() && text[i] != '\n') advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    const SourcePos start = pos;
    if (c == '(') {
      out.push_back({TokenKind::LParen, "(", start});
      advance(1);
    } else if (c == ')') {
      out.push_back({TokenKind::RParen, ")", start});
      advance(1);
    } else if (c == '-') {
      out.push_back({TokenKind::Dash, "-", start});
      advance(1);
    } else if (c == '?' || c == ':') {
      if (i + 1 >= text.size() || !ident_start(text[i + 1]))
        throw LexError(start, std::string("expected identifier after '") + c + "'");
      const std::size_t end = read_ident(i + 1);
      out.push_back({c == '?' ? TokenKind::Variable : TokenKind::Keyword,
                     std::string(text.substr(i, end - i)), start});
      advance(end - i);
    } else if (ident_start(c)) {
      const std::size_t end = read_ident(i);
      out.push_back({TokenKind::Name, std::string(text.substr(i, end - i)), start});
      advance(end - i);
    } else {
      std::string shown = (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) >= 0x7f)
                              ? "byte 0x" + std::to_string(static_cast<unsigned char>(c))
                              : std::string("'") + c + "'";
      throw LexError(start, "unexpected character " + shown);
    }
  }
  out.push_back({TokenKind::End, "", pos});
  return out;
}

struct SExpr {
  bool is_list = false;
  Token token;  // leaf token, or the opening paren for lists
  std::vector<SExpr> items;

  SourcePos pos() const { return token.pos; }
  bool is(TokenKind k) const { return !is_list && token.kind == k; }
  // Case-insensitive keyword/name comparison for leaves.
  bool is_word(std::string_view w) const {
    return !is_list && (token.kind == TokenKind::Name || token.kind == TokenKind::Keyword) &&
           lower(token.text) == w;
  }
};

inline constexpr int kMaxDepth = 256;

class SExprReader {
 public:
  explicit SExprReader(std::vector<Token> toks) : toks_(std::move(toks)) {}

  SExpr read_document() {
    if (peek().kind == TokenKind::End) throw ParseError(peek().pos, "(", "empty input");
    if (peek().kind != TokenKind::LParen)
      throw ParseError(peek().pos, "(", "expected '(' at start of definition");
    SExpr root = read(0);
    if (peek().kind != TokenKind::End)
      throw ParseError(peek().pos, "end of input", "unexpected trailing content '" + peek().text + "'");
    return root;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }

  SExpr read(int depth) {
    if (depth > kMaxDepth) throw ParseError(peek().pos, ")", "nesting too deep");
    const Token& t = toks_[pos_];
    if (t.kind == TokenKind::RParen) throw ParseError(t.pos, "expression", "unexpected ')'");
    if (t.kind == TokenKind::End) throw ParseError(t.pos, "expression", "unexpected end of input");
    ++pos_;
    if (t.kind != TokenKind::LParen) return SExpr{false, t, {}};
    SExpr list{true, t, {}};
    while (true) {
      const Token& n = toks_[pos_];
      if (n.kind == TokenKind::RParen) {
        ++pos_;
        return list;
      }
      if (n.kind == TokenKind::End)
        throw ParseError(t.pos, ")", "unclosed '(' reaches end of input");
      list.items.push_back(read(depth + 1));
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

inline const std::set<std::string>& supported_requirements() {
  static const std::set<std::string> req{":strips", ":typing", ":negative-preconditions"};
  return req;
}

inline const std::set<std::string>& unsupported_connectives() {
  static const std::set<std::string> words{"or",     "imply", "exists", "forall",
                                           "when",   "=",     "either", "increase",
                                           "decrease", "assign"};
  return words;
}

inline std::string describe(const SExpr& e) { return e.is_list ? "list" : "'" + e.token.text + "'"; }

inline const SExpr& expect_list(const SExpr& e, const std::string& what) {
  if (!e.is_list) throw ParseError(e.pos(), "(", "expected " + what + ", found " + describe(e));
  return e;
}

inline std::string expect_name(const SExpr& e, const std::string& what) {
  if (!e.is(TokenKind::Name)) throw ParseError(e.pos(), "identifier", "expected " + what + ", found " + describe(e));
  return e.token.text;
}

// Parses `a b - t c ?x - u` style typed lists. `variables` selects ?var vs plain names.
inline std::vector<std::pair<TypedName, SourcePos>> parse_typed_list(const SExpr& list,
                                                                     std::size_t from,
                                                                     bool variables) {
  std::vector<std::pair<TypedName, SourcePos>> out;
  std::size_t pending_start = 0;
  const auto want = variables ? TokenKind::Variable : TokenKind::Name;
  for (std::size_t i = from; i < list.items.size(); ++i) {
    const SExpr& e = list.items[i];
    if (e.is(TokenKind::Dash)) {
      if (i + 1 >= list.items.size())
        throw ParseError(e.pos(), "type name", "missing type after '-'");
      const SExpr& t = list.items[i + 1];
      if (t.is_list && !t.items.empty() && t.items[0].is_word("either"))
        throw SemanticError(t.pos(), "'either' types are not supported");
      const std::string type = expect_name(t, "type name");
      if (pending_start == out.size())
        throw ParseError(e.pos(), variables ? "variable" : "name", "'-' without preceding names");
      for (std::size_t k = pending_start; k < out.size(); ++k) out[k].first.type = type;
      pending_start = out.size();
      ++i;
      continue;
    }
    if (e.is_list || e.token.kind != want)
      throw ParseError(e.pos(), variables ? "variable" : "name",
                       std::string("expected ") + (variables ? "a ?variable" : "a name") +
                           ", found " + describe(e));
    out.push_back({TypedName{e.token.text, "object"}, e.pos()});
  }
  return out;
}

struct LocatedAtom {
  Atom atom;
  SourcePos pos;
};

struct LocatedLiteral {
  Literal literal;
  SourcePos pos;
};

inline LocatedAtom parse_atom(const SExpr& e, bool allow_variables) {
  expect_list(e, "atom");
  if (e.items.empty()) throw ParseError(e.pos(), "predicate", "empty atom");
  const SExpr& head = e.items[0];
  if (!head.is_list && unsupported_connectives().count(lower(head.token.text)))
    throw SemanticError(head.pos(), "unsupported connective '" + head.token.text + "'");
  Atom a{expect_name(head, "predicate name"), {}};
  for (std::size_t i = 1; i < e.items.size(); ++i) {
    const SExpr& t = e.items[i];
    if (t.is(TokenKind::Variable)) {
      if (!allow_variables) throw SemanticError(t.pos(), "variable " + t.token.text + " in ground atom");
      a.args.push_back(t.token.text);
    } else if (t.is(TokenKind::Name)) {
      a.args.push_back(t.token.text);
    } else {
      throw ParseError(t.pos(), "term", "expected a term, found " + describe(t));
    }
  }
  return {std::move(a), e.pos()};
}

inline LocatedLiteral parse_literal(const SExpr& e, bool allow_variables) {
  expect_list(e, "literal");
  if (!e.items.empty() && e.items[0].is_word("not")) {
    if (e.items.size() != 2) throw ParseError(e.pos(), "(not <atom>)", "'not' takes exactly one atom");
    const SExpr& inner = e.items[1];
    if (inner.is_list && !inner.items.empty() &&
        (inner.items[0].is_word("not") || inner.items[0].is_word("and")))
      throw SemanticError(inner.pos(), "only atoms may be negated");
    auto a = parse_atom(inner, allow_variables);
    return {Literal{std::move(a.atom), true}, e.pos()};
  }
  if (!e.items.empty() && e.items[0].is_word("and"))
    throw SemanticError(e.pos(), "nested 'and' is not supported");
  auto a = parse_atom(e, allow_variables);
  return {Literal{std::move(a.atom), false}, a.pos};
}

// A formula is `()`, `(and L*)` or a single literal.
inline std::vector<LocatedLiteral> parse_conjunction(const SExpr& e, bool allow_variables) {
  expect_list(e, "formula");
  std::vector<LocatedLiteral> out;
  if (e.items.empty()) return out;
  if (e.items[0].is_word("and")) {
    for (std::size_t i = 1; i < e.items.size(); ++i) out.push_back(parse_literal(e.items[i], allow_variables));
    return out;
  }
  out.push_back(parse_literal(e, allow_variables));
  return out;
}

// Verifies that `atom` is well formed against the domain's predicate table.
// `term_type` resolves a term to its declared type (or nullptr when undeclared).
template <typename TermType>
void check_atom(const DomainDef& d, const Atom& atom, SourcePos pos, TermType term_type) {
  const PredicateSig* sig = d.find_predicate(atom.predicate);
  if (!sig) throw SemanticError(pos, "undeclared predicate '" + atom.predicate + "'");
  if (sig->params.size() != atom.args.size())
    throw SemanticError(pos, "arity mismatch for '" + atom.predicate + "': expected " +
                                 std::to_string(sig->params.size()) + ", got " +
                                 std::to_string(atom.args.size()));
  for (std::size_t i = 0; i < atom.args.size(); ++i) {
    const std::string* t = term_type(atom.args[i]);
    if (!t) {
      throw SemanticError(pos, (is_variable(atom.args[i]) ? "unbound variable '" : "undeclared object '") +
                                   atom.args[i] + "' in " + atom.str());
    }
    if (!d.is_subtype(*t, sig->params[i].type))
      throw SemanticError(pos, "type mismatch in " + atom.str() + ": '" + atom.args[i] + "' is " + *t +
                                   ", expected " + sig->params[i].type);
  }
}

inline void parse_requirements(const SExpr& sec, std::vector<std::string>& into) {
  for (std::size_t i = 1; i < sec.items.size(); ++i) {
    const SExpr& r = sec.items[i];
    if (!r.is(TokenKind::Keyword)) throw ParseError(r.pos(), "requirement keyword", "expected a :requirement");
    const std::string key = lower(r.token.text);
    if (!supported_requirements().count(key))
      throw SemanticError(r.pos(), "unsupported requirement " + r.token.text +
                                       " (supported: :strips :typing :negative-preconditions)");
    if (std::find(into.begin(), into.end(), key) == into.end()) into.push_back(key);
  }
}

// Parses `(define (<kind> NAME) ...)` head; returns the name.
inline std::string parse_define_head(const SExpr& root, std::string_view kind) {
  if (root.items.empty() || !root.items[0].is_word("define"))
    throw ParseError(root.pos(), "define", "expected (define ...)");
  if (root.items.size() < 2) throw ParseError(root.pos(), std::string("(") + std::string(kind), "missing header");
  const SExpr& head = root.items[1];
  if (!head.is_list || head.items.size() != 2 || !head.items[0].is_word(kind))
    throw ParseError(head.pos(), "(" + std::string(kind) + " <name>)", "malformed header");
  return expect_name(head.items[1], std::string(kind) + " name");
}

}  // namespace detail

inline DomainDef parse_domain(std::string_view text) {
  using namespace detail;
  SExpr root = SExprReader(tokenize(text)).read_document();
  DomainDef d;
  d.name = parse_define_head(root, "domain");

  std::vector<SourcePos> type_pos;
  bool seen_types = false, seen_preds = false, seen_reqs = false;
  std::vector<const SExpr*> action_secs;
  for (std::size_t i = 2; i < root.items.size(); ++i) {
    const SExpr& sec = expect_list(root.items[i], "domain section");
    if (sec.items.empty() || !sec.items[0].is(TokenKind::Keyword))
      throw ParseError(sec.pos(), "section keyword", "expected a :section");
    const std::string key = lower(sec.items[0].token.text);
    if (key == ":requirements") {
      if (seen_reqs) throw SemanticError(sec.pos(), "duplicate :requirements");
      seen_reqs = true;
      parse_requirements(sec, d.requirements);
    } else if (key == ":types") {
      if (seen_types) throw SemanticError(sec.pos(), "duplicate :types");
      seen_types = true;
      for (auto& [tn, pos] : parse_typed_list(sec, 1, false)) {
        if (tn.name == "object") throw SemanticError(pos, "'object' is the implicit root type");
        if (d.has_type(tn.name)) throw SemanticError(pos, "duplicate type '" + tn.name + "'");
        d.types.push_back({tn.name, tn.type});
        type_pos.push_back(pos);
      }
    } else if (key == ":predicates") {
      if (seen_preds) throw SemanticError(sec.pos(), "duplicate :predicates");
      seen_preds = true;
      for (std::size_t k = 1; k < sec.items.size(); ++k) {
        const SExpr& p = expect_list(sec.items[k], "predicate signature");
        if (p.items.empty()) throw ParseError(p.pos(), "predicate name", "empty predicate signature");
        PredicateSig sig{expect_name(p.items[0], "predicate name"), {}};
        if (d.find_predicate(sig.name)) throw SemanticError(p.pos(), "duplicate predicate '" + sig.name + "'");
        std::set<std::string> seen;
        for (auto& [tn, pos] : parse_typed_list(p, 1, true)) {
          if (!seen.insert(tn.name).second)
            throw SemanticError(pos, "duplicate parameter " + tn.name + " in predicate '" + sig.name + "'");
          sig.params.push_back(tn);
        }
        d.predicates.push_back(std::move(sig));
      }
    } else if (key == ":action") {
      action_secs.push_back(&sec);
    } else {
      throw SemanticError(sec.pos(), "unsupported section " + sec.items[0].token.text);
    }
  }

  for (std::size_t i = 0; i < d.types.size(); ++i) {
    if (!d.has_type(d.types[i].parent))
      throw SemanticError(type_pos[i], "undeclared parent type '" + d.types[i].parent + "'");
    // Walk to the root; a cycle never reaches `object`.
    std::string t = d.types[i].name;
    std::size_t steps = 0;
    while (t != "object") {
      if (++steps > d.types.size()) throw SemanticError(type_pos[i], "cyclic type hierarchy at '" + d.types[i].name + "'");
      t = *d.parent_of(t);
    }
  }
  for (const auto& p : d.predicates)
    for (const auto& prm : p.params)
      if (!d.has_type(prm.type))
        throw SemanticError(root.pos(), "undeclared type '" + prm.type + "' in predicate '" + p.name + "'");

  for (const SExpr* secp : action_secs) {
    const SExpr& sec = *secp;
    if (sec.items.size() < 2) throw ParseError(sec.pos(), "action name", "missing action name");
    ActionSchema a{expect_name(sec.items[1], "action name"), {}, {}, {}};
    if (d.find_action(a.name)) throw SemanticError(sec.pos(), "duplicate action '" + a.name + "'");
    std::vector<LocatedLiteral> pre, eff;
    bool seen_params = false, seen_pre = false, seen_eff = false;
    for (std::size_t k = 2; k < sec.items.size(); k += 2) {
      const SExpr& key = sec.items[k];
      if (!key.is(TokenKind::Keyword)) throw ParseError(key.pos(), ":parameters/:precondition/:effect", "expected action keyword, found " + describe(key));
      if (k + 1 >= sec.items.size()) throw ParseError(key.pos(), "value", "missing value after " + key.token.text);
      const SExpr& val = sec.items[k + 1];
      const std::string kw = lower(key.token.text);
      if (kw == ":parameters") {
        if (seen_params) throw SemanticError(key.pos(), "duplicate :parameters");
        seen_params = true;
        expect_list(val, "parameter list");
        std::set<std::string> seen;
        for (auto& [tn, pos] : parse_typed_list(val, 0, true)) {
          if (!seen.insert(tn.name).second) throw SemanticError(pos, "duplicate parameter " + tn.name);
          if (!d.has_type(tn.type)) throw SemanticError(pos, "undeclared type '" + tn.type + "'");
          a.params.push_back(tn);
        }
      } else if (kw == ":precondition") {
        if (seen_pre) throw SemanticError(key.pos(), "duplicate :precondition");
        seen_pre = true;
        pre = parse_conjunction(val, true);
      } else if (kw == ":effect") {
        if (seen_eff) throw SemanticError(key.pos(), "duplicate :effect");
        seen_eff = true;
        eff = parse_conjunction(val, true);
      } else {
        throw SemanticError(key.pos(), "unsupported action keyword " + key.token.text);
      }
    }
    auto var_type = [&](const std::string& term) -> const std::string* {
      for (const auto& p : a.params)
        if (p.name == term) return &p.type;
      return nullptr;
    };
    for (auto& l : pre) {
      check_atom(d, l.literal.atom, l.pos, var_type);
      a.precondition.push_back(l.literal);
    }
    for (auto& l : eff) {
      check_atom(d, l.literal.atom, l.pos, var_type);
      for (const auto& prev : a.effect)
        if (prev.atom == l.literal.atom && prev.negated != l.literal.negated)
          throw SemanticError(l.pos, "effect both adds and deletes " + l.literal.atom.str());
      a.effect.push_back(l.literal);
    }
    d.actions.push_back(std::move(a));
  }
  return d;
}

inline ProblemDef parse_problem(std::string_view text, const DomainDef& domain) {
  using namespace detail;
  SExpr root = SExprReader(tokenize(text)).read_document();
  ProblemDef p;
  p.name = parse_define_head(root, "problem");

  const SExpr* init_sec = nullptr;
  const SExpr* goal_sec = nullptr;
  bool seen_domain = false, seen_objects = false;
  std::vector<std::string> reqs;
  for (std::size_t i = 2; i < root.items.size(); ++i) {
    const SExpr& sec = expect_list(root.items[i], "problem section");
    if (sec.items.empty() || !sec.items[0].is(TokenKind::Keyword))
      throw ParseError(sec.pos(), "section keyword", "expected a :section");
    const std::string key = lower(sec.items[0].token.text);
    if (key == ":domain") {
      if (seen_domain) throw SemanticError(sec.pos(), "duplicate :domain");
      seen_domain = true;
      if (sec.items.size() != 2) throw ParseError(sec.pos(), "(:domain <name>)", "malformed :domain");
      p.domain_name = expect_name(sec.items[1], "domain name");
      if (p.domain_name != domain.name) throw DomainMismatch(sec.items[1].pos(), domain.name, p.domain_name);
    } else if (key == ":requirements") {
      parse_requirements(sec, reqs);
    } else if (key == ":objects") {
      if (seen_objects) throw SemanticError(sec.pos(), "duplicate :objects");
      seen_objects = true;
      for (auto& [tn, pos] : parse_typed_list(sec, 1, false)) {
        if (!domain.has_type(tn.type)) throw SemanticError(pos, "undeclared type '" + tn.type + "'");
        if (p.find_object(tn.name)) throw SemanticError(pos, "duplicate object '" + tn.name + "'");
        p.objects.push_back(tn);
      }
    } else if (key == ":init") {
      if (init_sec) throw SemanticError(sec.pos(), "duplicate :init");
      init_sec = &sec;
    } else if (key == ":goal") {
      if (goal_sec) throw SemanticError(sec.pos(), "duplicate :goal");
      if (sec.items.size() != 2) throw ParseError(sec.pos(), "(:goal <formula>)", "malformed :goal");
      goal_sec = &sec;
    } else {
      throw SemanticError(sec.pos(), "unsupported section " + sec.items[0].token.text);
    }
  }
  if (!seen_domain) throw ParseError(root.pos(), "(:domain <name>)", "problem lacks a :domain section");
  if (!goal_sec) throw ParseError(root.pos(), "(:goal <formula>)", "problem lacks a :goal section");

  auto obj_type = [&](const std::string& term) -> const std::string* {
    const TypedName* o = p.find_object(term);
    return o ? &o->type : nullptr;
  };
  if (init_sec) {
    for (std::size_t k = 1; k < init_sec->items.size(); ++k) {
      const SExpr& e = init_sec->items[k];
      if (e.is_list && !e.items.empty() && e.items[0].is_word("not"))
        throw SemanticError(e.pos(), "negative literals are not allowed in :init (closed world)");
      auto a = parse_atom(e, false);
      check_atom(domain, a.atom, a.pos, obj_type);
      if (std::find(p.init.begin(), p.init.end(), a.atom) != p.init.end())
        throw SemanticError(a.pos, "duplicate init atom " + a.atom.str());
      p.init.push_back(std::move(a.atom));
    }
  }
  std::sort(p.init.begin(), p.init.end());
  for (auto& l : parse_conjunction(goal_sec->items[1], false)) {
    check_atom(domain, l.literal.atom, l.pos, obj_type);
    p.goal.push_back(std::move(l.literal));
  }
  return p;
}

// Ground formula text such as "(and (p a) (not (q b)))"; no domain checks.
inline Conjunction parse_formula(std::string_view text) {
  const auto e = detail::SExprReader(detail::tokenize(text)).read_document();
  Conjunction c;
  for (auto& l : detail::parse_conjunction(e, false)) c.push_back(std::move(l.literal));
  return c;
}

}  // namespace deskagent::pddl
