#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "deskagent/pddl/ast.hpp"

namespace deskagent::planner {

using pddl::Atom;

// Sorted, duplicate-free atom list.
using AtomSet = std::vector<Atom>;

inline AtomSet make_atom_set(std::vector<Atom> atoms) {
  std::sort(atoms.begin(), atoms.end());
  atoms.erase(std::unique(atoms.begin(), atoms.end()), atoms.end());
  return atoms;
}

inline bool set_contains(const AtomSet& s, const Atom& a) {
  return std::binary_search(s.begin(), s.end(), a);
}

// Closed-world symbolic state: atoms absent from the set are false.
class SymbolicState {
 public:
  SymbolicState() = default;
  explicit SymbolicState(std::vector<Atom> atoms) : atoms_(make_atom_set(std::move(atoms))) {}

  const AtomSet& atoms() const noexcept { return atoms_; }
  std::size_t size() const noexcept { return atoms_.size(); }
  bool contains(const Atom& a) const { return set_contains(atoms_, a); }

  void insert(const Atom& a) {
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), a);
    if (it == atoms_.end() || *it != a) atoms_.insert(it, a);
  }
  void erase(const Atom& a) {
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), a);
    if (it != atoms_.end() && *it == a) atoms_.erase(it);
  }

  bool satisfies(const pddl::Literal& l) const { return contains(l.atom) != l.negated; }
  bool satisfies(const pddl::Conjunction& c) const {
    return std::all_of(c.begin(), c.end(), [&](const pddl::Literal& l) { return satisfies(l); });
  }

  bool operator==(const SymbolicState&) const = default;

 private:
  AtomSet atoms_;
};

struct GroundAction {
  std::string name;
  std::vector<std::string> args;
  AtomSet pre_pos;
  AtomSet pre_neg;
  AtomSet add;
  AtomSet del;

  bool operator==(const GroundAction&) const = default;

  std::string str() const {
    std::string out = "(" + name;
    for (const auto& a : args) out += " " + a;
    return out + ")";
  }

  pddl::Conjunction precondition() const {
    pddl::Conjunction c;
    for (const auto& a : pre_pos) c.push_back({a, false});
    for (const auto& a : pre_neg) c.push_back({a, true});
    return c;
  }

  pddl::Conjunction effect() const {
    pddl::Conjunction c;
    for (const auto& a : add) c.push_back({a, false});
    for (const auto& a : del) c.push_back({a, true});
    return c;
  }
};

class NotApplicable : public std::runtime_error {
 public:
  NotApplicable(const GroundAction& action, std::vector<pddl::Literal> violated)
      : std::runtime_error(message(action, violated)), violated_(std::move(violated)) {}
  const std::vector<pddl::Literal>& violated() const noexcept { return violated_; }

 private:
  static std::string message(const GroundAction& action, const std::vector<pddl::Literal>& v) {
    std::string m = action.str() + " not applicable; violated:";
    for (const auto& l : v) m += " " + l.str();
    return m;
  }
  std::vector<pddl::Literal> violated_;
};

inline std::vector<pddl::Literal> violated_preconditions(const SymbolicState& s, const GroundAction& a) {
  std::vector<pddl::Literal> v;
  for (const auto& p : a.pre_pos)
    if (!s.contains(p)) v.push_back({p, false});
  for (const auto& n : a.pre_neg)
    if (s.contains(n)) v.push_back({n, true});
  return v;
}

inline bool applicable(const SymbolicState& s, const GroundAction& a) {
  return violated_preconditions(s, a).empty();
}

// (state \ del) ∪ add. Throws NotApplicable listing violated precondition literals.
inline SymbolicState apply(const SymbolicState& s, const GroundAction& a) {
  auto v = violated_preconditions(s, a);
  if (!v.empty()) throw NotApplicable(a, std::move(v));
  SymbolicState out = s;
  for (const auto& d : a.del) out.erase(d);
  for (const auto& x : a.add) out.insert(x);
  return out;
}

}  // namespace deskagent::planner
