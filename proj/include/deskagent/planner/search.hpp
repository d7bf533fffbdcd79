#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "deskagent/pddl/ground.hpp"
#include "deskagent/planner/state.hpp"

namespace deskagent::planner {

enum class SearchAlgorithm { AStar, BreadthFirst };
enum class Heuristic { Additive, Blind };

struct SearchConfig {
  SearchAlgorithm algorithm = SearchAlgorithm::AStar;
  Heuristic heuristic = Heuristic::Additive;
  // f = h instead of g + h.
  bool greedy = false;
  std::size_t max_expansions = 1'000'000;
  double max_seconds = 30.0;
};

struct Plan {
  std::vector<GroundAction> steps;
  std::size_t cost() const noexcept { return steps.size(); }
  bool operator==(const Plan&) const = default;
};

enum class PlanStatus { Found, NoPlan, Timeout };

inline const char* to_string(PlanStatus s) {
  switch (s) {
    case PlanStatus::Found: return "found";
    case PlanStatus::NoPlan: return "no-plan";
    case PlanStatus::Timeout: return "timeout";
  }
  return "?";
}

struct PlanResult {
  PlanStatus status = PlanStatus::NoPlan;
  Plan plan;
  std::size_t expanded = 0;
  bool found() const noexcept { return status == PlanStatus::Found; }
};

inline nlohmann::json plan_to_json(const Plan& plan) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : plan.steps) steps.push_back({{"name", s.name}, {"args", s.args}});
  return {{"steps", steps}, {"cost", plan.cost()}};
}

namespace detail {

// Ground task with atoms interned to indices and states as bitsets.
class CompiledTask {
 public:
  using Bits = std::vector<std::uint64_t>;

  struct Op {
    std::vector<std::uint32_t> pre_pos, pre_neg, add, del;
  };

  explicit CompiledTask(const pddl::GroundTask& task) {
    for (const auto& a : task.init.atoms()) intern(a);
    for (const auto& l : task.goal) intern(l.atom);
    for (const auto& act : task.actions) {
      Op op;
      for (const auto& a : act.pre_pos) op.pre_pos.push_back(intern(a));
      for (const auto& a : act.pre_neg) op.pre_neg.push_back(intern(a));
      for (const auto& a : act.add) op.add.push_back(intern(a));
      for (const auto& a : act.del) op.del.push_back(intern(a));
      ops_.push_back(std::move(op));
    }
    words_ = (atoms_.size() + 63) / 64;
    init_ = Bits(words_, 0);
    for (const auto& a : task.init.atoms()) set(init_, index_.at(a));
    for (const auto& l : task.goal) (l.negated ? goal_neg_ : goal_pos_).push_back(index_.at(l.atom));
  }

  const Bits& init() const { return init_; }
  const std::vector<Op>& ops() const { return ops_; }

  static bool test(const Bits& b, std::uint32_t i) { return (b[i >> 6] >> (i & 63)) & 1ULL; }
  static void set(Bits& b, std::uint32_t i) { b[i >> 6] |= (1ULL << (i & 63)); }
  static void clear(Bits& b, std::uint32_t i) { b[i >> 6] &= ~(1ULL << (i & 63)); }

  bool applicable(const Bits& s, const Op& op) const {
    for (auto i : op.pre_pos)
      if (!test(s, i)) return false;
    for (auto i : op.pre_neg)
      if (test(s, i)) return false;
    return true;
  }

  Bits successor(const Bits& s, const Op& op) const {
    Bits n = s;
    for (auto i : op.del) clear(n, i);
    for (auto i : op.add) set(n, i);
    return n;
  }

  bool is_goal(const Bits& s) const {
    for (auto i : goal_pos_)
      if (!test(s, i)) return false;
    for (auto i : goal_neg_)
      if (test(s, i)) return false;
    return true;
  }

  // h_add over the delete relaxation (negative preconditions ignored). Each violated
  // negative goal contributes 1. Returns max() for relaxed-unreachable goals.
  std::size_t h_add(const Bits& s) const {
    constexpr std::size_t inf = std::numeric_limits<std::size_t>::max() / 4;
    std::vector<std::size_t> cost(atoms_.size(), inf);
    for (std::uint32_t i = 0; i < atoms_.size(); ++i)
      if (test(s, i)) cost[i] = 0;
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& op : ops_) {
        std::size_t c = 1;
        for (auto i : op.pre_pos) {
          if (cost[i] >= inf) {
            c = inf;
            break;
          }
          c += cost[i];
        }
        if (c >= inf) continue;
        for (auto i : op.add) {
          if (c < cost[i]) {
            cost[i] = c;
            changed = true;
          }
        }
      }
    }
    std::size_t h = 0;
    for (auto i : goal_pos_) {
      if (cost[i] >= inf) return std::numeric_limits<std::size_t>::max();
      h += cost[i];
    }
    for (auto i : goal_neg_)
      if (test(s, i)) ++h;
    return h;
  }

 private:
  std::uint32_t intern(const pddl::Atom& a) {
    auto [it, inserted] = index_.try_emplace(a, static_cast<std::uint32_t>(atoms_.size()));
    if (inserted) atoms_.push_back(a);
    return it->second;
  }

  std::map<pddl::Atom, std::uint32_t> index_;
  std::vector<pddl::Atom> atoms_;
  std::vector<Op> ops_;
  std::vector<std::uint32_t> goal_pos_, goal_neg_;
  std::size_t words_ = 0;
  Bits init_;
};

struct BitsHash {
  std::size_t operator()(const CompiledTask::Bits& b) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto w : b) {
      h ^= w;
      h *= 1099511628211ULL;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

struct Node {
  CompiledTask::Bits state;
  std::int64_t parent;
  std::uint32_t op;
  std::size_t g;
};

inline Plan extract(const std::vector<Node>& nodes, std::int64_t at, const pddl::GroundTask& task) {
  Plan plan;
  while (at >= 0 && nodes[static_cast<std::size_t>(at)].parent >= 0) {
    plan.steps.push_back(task.actions[nodes[static_cast<std::size_t>(at)].op]);
    at = nodes[static_cast<std::size_t>(at)].parent;
  }
  std::reverse(plan.steps.begin(), plan.steps.end());
  return plan;
}

class Deadline {
 public:
  explicit Deadline(double seconds)
      : end_(std::chrono::steady_clock::now() +
             std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(seconds))) {}
  bool passed() const { return std::chrono::steady_clock::now() > end_; }

 private:
  std::chrono::steady_clock::time_point end_;
};

inline PlanResult breadth_first(const pddl::GroundTask& task, const CompiledTask& ct, const SearchConfig& cfg) {
  PlanResult r;
  std::vector<Node> nodes{{ct.init(), -1, 0, 0}};
  if (ct.is_goal(ct.init())) {
    r.status = PlanStatus::Found;
    return r;
  }
  std::unordered_map<CompiledTask::Bits, bool, BitsHash> seen{{ct.init(), true}};
  std::deque<std::size_t> frontier{0};
  Deadline deadline(cfg.max_seconds);
  while (!frontier.empty()) {
    if (r.expanded >= cfg.max_expansions || ((r.expanded & 1023) == 0 && deadline.passed())) {
      r.status = PlanStatus::Timeout;
      return r;
    }
    const std::size_t cur = frontier.front();
    frontier.pop_front();
    ++r.expanded;
    const auto& ops = ct.ops();
    for (std::uint32_t oi = 0; oi < ops.size(); ++oi) {
      if (!ct.applicable(nodes[cur].state, ops[oi])) continue;
      auto next = ct.successor(nodes[cur].state, ops[oi]);
      if (!seen.emplace(next, true).second) continue;
      nodes.push_back({std::move(next), static_cast<std::int64_t>(cur), oi, nodes[cur].g + 1});
      if (ct.is_goal(nodes.back().state)) {
        r.status = PlanStatus::Found;
        r.plan = extract(nodes, static_cast<std::int64_t>(nodes.size() - 1), task);
        return r;
      }
      frontier.push_back(nodes.size() - 1);
    }
  }
  r.status = PlanStatus::NoPlan;
  return r;
}

inline PlanResult astar(const pddl::GroundTask& task, const CompiledTask& ct, const SearchConfig& cfg) {
  using Key = std::pair<std::size_t, std::size_t>;  // (f, insertion index)
  PlanResult r;
  constexpr std::size_t unreachable = std::numeric_limits<std::size_t>::max();
  auto h_of = [&](const CompiledTask::Bits& s) -> std::size_t {
    if (cfg.heuristic == Heuristic::Blind) return ct.is_goal(s) ? 0 : 1;
    return ct.h_add(s);
  };
  auto f_of = [&](std::size_t g, std::size_t h) { return cfg.greedy ? h : g + h; };

  std::vector<Node> nodes;
  std::priority_queue<Key, std::vector<Key>, std::greater<Key>> open;
  std::unordered_map<CompiledTask::Bits, std::size_t, BitsHash> best_g;

  const std::size_t h0 = h_of(ct.init());
  if (h0 == unreachable) return r;
  nodes.push_back({ct.init(), -1, 0, 0});
  best_g[ct.init()] = 0;
  open.push({f_of(0, h0), 0});
  Deadline deadline(cfg.max_seconds);
  while (!open.empty()) {
    const auto [f, idx] = open.top();
    open.pop();
    const Node& node = nodes[idx];
    if (best_g.at(node.state) < node.g) continue;  // stale entry
    if (ct.is_goal(node.state)) {
      r.status = PlanStatus::Found;
      r.plan = extract(nodes, static_cast<std::int64_t>(idx), task);
      return r;
    }
    if (r.expanded >= cfg.max_expansions || ((r.expanded & 1023) == 0 && deadline.passed())) {
      r.status = PlanStatus::Timeout;
      return r;
    }
    ++r.expanded;
    const auto& ops = ct.ops();
    for (std::uint32_t oi = 0; oi < ops.size(); ++oi) {
      if (!ct.applicable(nodes[idx].state, ops[oi])) continue;
      auto next = ct.successor(nodes[idx].state, ops[oi]);
      const std::size_t g = nodes[idx].g + 1;
      auto it = best_g.find(next);
      if (it != best_g.end() && it->second <= g) continue;
      const std::size_t h = h_of(next);
      if (h == unreachable) continue;
      best_g[next] = g;
      nodes.push_back({std::move(next), static_cast<std::int64_t>(idx), oi, g});
      open.push({f_of(g, h), nodes.size() - 1});
    }
  }
  r.status = PlanStatus::NoPlan;
  return r;
}

}  // namespace detail

// Forward state-space search. Deterministic: successors are generated in grounding
// order and equal-f entries expand in insertion order.
inline PlanResult plan(const pddl::GroundTask& task, const SearchConfig& cfg = {}) {
  const detail::CompiledTask ct(task);
  return cfg.algorithm == SearchAlgorithm::BreadthFirst ? detail::breadth_first(task, ct, cfg)
                                                        : detail::astar(task, ct, cfg);
}

struct ValidationReport {
  bool all_applicable = true;
  std::optional<std::size_t> first_failure;
  std::vector<pddl::Literal> violated;
  bool goal_satisfied = false;
  SymbolicState final_state;

  bool valid() const noexcept { return all_applicable && goal_satisfied; }
};

// Replays `steps` from `init`; stops at the first inapplicable step.
inline ValidationReport validate(const SymbolicState& init, const std::vector<GroundAction>& steps,
                                 const pddl::Conjunction& goal) {
  ValidationReport r;
  SymbolicState s = init;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    auto v = violated_preconditions(s, steps[i]);
    if (!v.empty()) {
      r.all_applicable = false;
      r.first_failure = i;
      r.violated = std::move(v);
      break;
    }
    s = apply(s, steps[i]);
  }
  r.goal_satisfied = r.all_applicable && s.satisfies(goal);
  r.final_state = std::move(s);
  return r;
}

}  // namespace deskagent::planner
