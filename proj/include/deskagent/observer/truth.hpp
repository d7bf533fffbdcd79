#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deskagent/grasp/generate.hpp"
#include "deskagent/observer/tasks.hpp"
#include "deskagent/pddl/ast.hpp"
#include "deskagent/planner/state.hpp"
#include "deskagent/sim/world.hpp"

// Ground-truth answers to observer queries. The oracle observer builds its verdicts
// from these; the agent uses them to annotate traces for failure attribution.
namespace deskagent::obs {

inline constexpr double kShoulderDetectMargin = 2.0;  // cm added on each side of a detected box
inline constexpr double kWristDetectMargin = 0.5;
inline constexpr double kGraspTolerance = 0.0;  // a good grasp touches nothing but the target

inline double detect_margin(sim::View v) { return v == sim::View::Shoulder ? kShoulderDetectMargin : kWristDetectMargin; }

inline std::vector<bool> leaf_truth(const planner::SymbolicState& s, const pddl::Conjunction& c) {
  std::vector<bool> out;
  out.reserve(c.size());
  for (const auto& l : c) out.push_back(s.satisfies(l));
  return out;
}

inline bool conditions_hold(const sim::WorldState& w, const pddl::Conjunction& c) {
  return planner::SymbolicState(sim::relations(w)).satisfies(c);
}

inline bool goal_holds(const sim::WorldState& w, const std::string& instruction) {
  Catalog catalog;
  for (const auto& [n, o] : w.objects) catalog[n] = o.category;
  return conditions_hold(w, true_goal(instruction, catalog));
}

// A grasp is good when the jaws close on the intended object and sweep clear of
// everything else (up to `tolerance` of the free sweep).
inline bool grasp_is_good(const sim::World& world, const grasp::GraspCandidate& c, const std::string& target,
                          double tolerance) {
  const auto hit = sim::topmost_at(world.state(), c.pose);
  if (!hit || *hit != target) return false;
  return world.true_collision(target, c.pose, c.yaw, c.width) <= tolerance;
}

// Same judgement made from an observation alone.
inline bool grasp_looks_good(const sim::Observation& obs, const grasp::GraspCandidate& c, const std::string& target,
                             double tolerance) {
  const sim::ObservedObject* top = nullptr;
  for (const auto& o : obs.objects)
    if (!o.held && o.footprint().contains(c.pose) && (!top || o.level > top->level)) top = &o;
  if (!top || top->name != target) return false;
  return grasp::collision_score(c, obs) <= tolerance;
}

inline bool point_on_object(const sim::WorldState& w, const std::string& name, Vec2 p) {
  auto it = w.objects.find(name);
  return it != w.objects.end() && !w.occluded(name) && it->second.footprint().contains(p);
}

// A detection identifies `name` when its point is nearer to that object's true centre
// than to any other reachable object of the same graspability; pose noise alone does
// not make it wrong.
inline bool detection_identifies(const sim::WorldState& w, const std::string& name, Vec2 p) {
  auto it = w.objects.find(name);
  if (it == w.objects.end() || w.occluded(name)) return false;
  const double mine = distance(it->second.pose, p);
  for (const auto& [n, o] : w.objects)
    if (n != name && o.graspable == it->second.graspable && sim::reachable(w, n) && distance(o.pose, p) < mine)
      return false;
  return true;
}

// Goals agree when they contain the same literals.
inline bool same_goal(pddl::Conjunction a, pddl::Conjunction b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return a == b;
}

}  // namespace deskagent::obs
