#pragma once

#include <algorithm>
#include <compare>
#include <stdexcept>
#include <string>
#include <vector>

namespace deskagent::pddl {

struct SourcePos {
  int line = 1;
  int column = 1;
};

// Base of every positioned PDDL failure. what() reads "line:col: kind: message".
class PddlError : public std::runtime_error {
 public:
  PddlError(std::string kind, SourcePos pos, const std::string& message)
      : std::runtime_error(std::to_string(pos.line) + ":" + std::to_string(pos.column) +
                           ": " + kind + ": " + message),
        kind_(std::move(kind)),
        pos_(pos),
        message_(message) {}

  const std::string& kind() const noexcept { return kind_; }
  SourcePos position() const noexcept { return pos_; }
  int line() const noexcept { return pos_.line; }
  int column() const noexcept { return pos_.column; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string kind_;
  SourcePos pos_;
  std::string message_;
};

class LexError : public PddlError {
 public:
  LexError(SourcePos pos, const std::string& message) : PddlError("lex error", pos, message) {}
};

class ParseError : public PddlError {
 public:
  ParseError(SourcePos pos, std::string expected, const std::string& message)
      : PddlError("parse error", pos, message), expected_(std::move(expected)) {}
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::string expected_;
};

class SemanticError : public PddlError {
 public:
  SemanticError(SourcePos pos, const std::string& message)
      : PddlError("semantic error", pos, message) {}
};

class DomainMismatch : public PddlError {
 public:
  DomainMismatch(SourcePos pos, std::string expected_domain, std::string found_domain)
      : PddlError("domain mismatch", pos,
                  "problem targets domain '" + found_domain + "' but '" + expected_domain +
                      "' was supplied"),
        domain_name_(std::move(found_domain)) {}
  const std::string& domain_name() const noexcept { return domain_name_; }

 private:
  std::string domain_name_;
};

inline bool is_variable(const std::string& term) { return !term.empty() && term.front() == '?'; }

// A predicate applied to terms. Terms are object names, or `?var` inside action schemas.
// Ordering is lexicographic on predicate, then args; state sets are kept in this order.
struct Atom {
  std::string predicate;
  std::vector<std::string> args;

  auto operator<=>(const Atom&) const = default;
  bool operator==(const Atom&) const = default;

  bool is_ground() const { return std::none_of(args.begin(), args.end(), is_variable); }

  std::string str() const {
    std::string out = "(" + predicate;
    for (const auto& a : args) out += " " + a;
    return out + ")";
  }
};

struct Literal {
  Atom atom;
  bool negated = false;

  auto operator<=>(const Literal&) const = default;
  bool operator==(const Literal&) const = default;

  std::string str() const { return negated ? "(not " + atom.str() + ")" : atom.str(); }
};

// The supported formulas are conjunctions of possibly-negated atoms.
using Conjunction = std::vector<Literal>;

inline std::string to_string(const Conjunction& c) {
  std::string out = "(and";
  for (const auto& l : c) out += " " + l.str();
  return out + ")";
}

struct TypedName {
  std::string name;
  std::string type = "object";
  bool operator==(const TypedName&) const = default;
};

struct TypeDecl {
  std::string name;
  std::string parent = "object";
  bool operator==(const TypeDecl&) const = default;
};

struct PredicateSig {
  std::string name;
  std::vector<TypedName> params;
  bool operator==(const PredicateSig&) const = default;
};

struct ActionSchema {
  std::string name;
  std::vector<TypedName> params;
  Conjunction precondition;
  Conjunction effect;
  bool operator==(const ActionSchema&) const = default;
};

struct DomainDef {
  std::string name;
  std::vector<std::string> requirements;
  std::vector<TypeDecl> types;
  std::vector<PredicateSig> predicates;
  std::vector<ActionSchema> actions;

  bool operator==(const DomainDef&) const = default;

  bool has_type(const std::string& t) const {
    return t == "object" ||
           std::any_of(types.begin(), types.end(), [&](const TypeDecl& d) { return d.name == t; });
  }

  const std::string* parent_of(const std::string& t) const {
    for (const auto& d : types)
      if (d.name == t) return &d.parent;
    return nullptr;
  }

  // True when `sub` equals `super` or descends from it. Assumes an acyclic hierarchy.
  bool is_subtype(std::string sub, const std::string& super) const {
    if (super == "object") return true;
    for (std::size_t guard = 0; guard <= types.size(); ++guard) {
      if (sub == super) return true;
      const std::string* p = parent_of(sub);
      if (!p) return false;
      sub = *p;
    }
    return false;
  }

  const PredicateSig* find_predicate(const std::string& n) const {
    for (const auto& p : predicates)
      if (p.name == n) return &p;
    return nullptr;
  }

  const ActionSchema* find_action(const std::string& n) const {
    for (const auto& a : actions)
      if (a.name == n) return &a;
    return nullptr;
  }
};

struct ProblemDef {
  std::string name;
  std::string domain_name;
  std::vector<TypedName> objects;
  std::vector<Atom> init;  // sorted, unique
  Conjunction goal;

  bool operator==(const ProblemDef&) const = default;

  const TypedName* find_object(const std::string& n) const {
    for (const auto& o : objects)
      if (o.name == n) return &o;
    return nullptr;
  }
};

}  // namespace deskagent::pddl
