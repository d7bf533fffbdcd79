#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "deskagent/pddl/ast.hpp"
#include "deskagent/planner/state.hpp"

namespace deskagent::pddl {

class GroundingExplosion : public std::runtime_error {
 public:
  GroundingExplosion(std::size_t limit, std::size_t required)
      : std::runtime_error("grounding would produce " + std::to_string(required) +
                           " actions, over the cap of " + std::to_string(limit)),
        limit_(limit) {}
  std::size_t limit() const noexcept { return limit_; }

 private:
  std::size_t limit_;
};

inline constexpr std::size_t kDefaultGroundingCap = 100'000;

struct GroundTask {
  std::vector<TypedName> objects;
  std::vector<planner::GroundAction> actions;  // schema order, then lexicographic args
  planner::SymbolicState init;
  Conjunction goal;

  bool goal_satisfied(const planner::SymbolicState& s) const { return s.satisfies(goal); }
};

// Objects admissible for each type, sorted by name.
inline std::vector<std::string> objects_of_type(const DomainDef& d, const ProblemDef& p,
                                                const std::string& type) {
  std::vector<std::string> out;
  for (const auto& o : p.objects)
    if (d.is_subtype(o.type, type)) out.push_back(o.name);
  std::sort(out.begin(), out.end());
  return out;
}

inline Atom substitute(const Atom& a, const std::map<std::string, std::string>& binding) {
  Atom out{a.predicate, {}};
  out.args.reserve(a.args.size());
  for (const auto& t : a.args) {
    auto it = binding.find(t);
    out.args.push_back(it == binding.end() ? t : it->second);
  }
  return out;
}

// Instantiates one schema under a full binding. When a grounded effect both deletes
// and adds the same atom the add wins (delete-then-add semantics), keeping add ∩ del empty.
inline planner::GroundAction instantiate(const ActionSchema& s, const std::vector<std::string>& args) {
  std::map<std::string, std::string> binding;
  for (std::size_t i = 0; i < s.params.size(); ++i) binding[s.params[i].name] = args[i];
  planner::GroundAction g{s.name, args, {}, {}, {}, {}};
  for (const auto& l : s.precondition) (l.negated ? g.pre_neg : g.pre_pos).push_back(substitute(l.atom, binding));
  for (const auto& l : s.effect) (l.negated ? g.del : g.add).push_back(substitute(l.atom, binding));
  g.pre_pos = planner::make_atom_set(std::move(g.pre_pos));
  g.pre_neg = planner::make_atom_set(std::move(g.pre_neg));
  g.add = planner::make_atom_set(std::move(g.add));
  g.del = planner::make_atom_set(std::move(g.del));
  std::erase_if(g.del, [&](const Atom& a) { return planner::set_contains(g.add, a); });
  return g;
}

// Exhaustive typed instantiation of every schema. The action count equals the product
// of admissible-object counts per parameter, summed over schemas.
inline GroundTask ground(const DomainDef& d, const ProblemDef& p, std::size_t cap = kDefaultGroundingCap) {
  std::vector<std::vector<std::vector<std::string>>> domains_per_schema;
  std::size_t total = 0;
  for (const auto& s : d.actions) {
    std::vector<std::vector<std::string>> dom;
    std::size_t count = 1;
    for (const auto& prm : s.params) {
      dom.push_back(objects_of_type(d, p, prm.type));
      count = dom.back().empty() ? 0 : (count > cap ? count : count * dom.back().size());
    }
    total += count;
    if (total > cap) throw GroundingExplosion(cap, total);
    domains_per_schema.push_back(std::move(dom));
  }

  GroundTask task;
  task.objects = p.objects;
  task.init = planner::SymbolicState(p.init);
  task.goal = p.goal;
  task.actions.reserve(total);
  for (std::size_t si = 0; si < d.actions.size(); ++si) {
    const auto& s = d.actions[si];
    const auto& dom = domains_per_schema[si];
    if (std::any_of(dom.begin(), dom.end(), [](const auto& v) { return v.empty(); })) continue;
    std::vector<std::size_t> idx(dom.size(), 0);
    std::vector<std::string> args(dom.size());
    while (true) {
      for (std::size_t k = 0; k < dom.size(); ++k) args[k] = dom[k][idx[k]];
      task.actions.push_back(instantiate(s, args));
      // Odometer with the last parameter fastest gives lexicographic argument order.
      std::size_t k = dom.size();
      while (k > 0) {
        --k;
        if (++idx[k] < dom[k].size()) break;
        idx[k] = 0;
        if (k == 0) {
          k = dom.size() + 1;
          break;
        }
      }
      if (dom.empty() || k == dom.size() + 1) break;
    }
  }
  return task;
}

}  // namespace deskagent::pddl
