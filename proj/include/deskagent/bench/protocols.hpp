#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deskagent/sim/world.hpp"

namespace deskagent::bench {

// Disturbance protocols of the checker ablation:
//   0  none (any task)
//   1  sorting, no disturbance
//   2  sorting, the first pick's object is moved as the gripper closes
//   3  protocol 2 plus the final place's destination moved before release
//   4  stacking, the first pick's block is moved as the gripper closes
struct ProtocolPlan {
  std::vector<sim::Disturbance> disturbances;
};

class UnknownProtocol : public std::invalid_argument {
 public:
  explicit UnknownProtocol(int id) : std::invalid_argument("unknown disturbance protocol " + std::to_string(id)) {}
};

namespace detail {

inline std::string arg_of(const std::string& ground_action, std::size_t i) {
  // "(name a b)" -> args
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : ground_action) {
    if (ch == '(' || ch == ')' || ch == ' ') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return i + 1 < parts.size() ? parts[i + 1] : "";
}

inline bool starts_with(const std::string& ground_action, const char* prefix) {
  return ground_action.rfind(std::string("(") + prefix, 0) == 0;
}

// A spot for `name` on the far side of the table, clear of every other object.
inline Vec2 displaced_pose(const sim::WorldState& w, const std::string& name) {
  const auto& o = w.at(name);
  std::vector<Box> obstacles;
  for (const auto& [n, x] : w.objects)
    if (n != name && x.placement.kind == sim::Placement::Kind::Table) obstacles.push_back(x.footprint());
  const Vec2 preferred{w.table.w - o.pose.x, w.table.d - o.pose.y};
  const auto spot = sim::find_free_spot(obstacles, o.w, o.d, w.table, preferred, 2.0);
  if (!spot) throw std::runtime_error("no room to displace " + name);
  return *spot;
}

}  // namespace detail

// `reference` is the validated plan for the scene; triggers refer to its step indices.
inline ProtocolPlan make_protocol(int id, const sim::WorldState& w, const std::vector<std::string>& reference) {
  ProtocolPlan out;
  if (id == 0 || id == 1) return out;
  if (id < 0 || id > 4) throw UnknownProtocol(id);
  auto first_pick = std::find_if(reference.begin(), reference.end(),
                                 [](const std::string& a) { return detail::starts_with(a, "pick"); });
  if (first_pick == reference.end()) throw std::runtime_error("protocol needs a plan with a pick");
  const std::string subject = detail::arg_of(*first_pick, 0);
  out.disturbances.push_back({static_cast<std::size_t>(first_pick - reference.begin()), sim::Phase::Pre,
                              sim::Disturbance::Kind::MoveObject, subject, detail::displaced_pose(w, subject)});
  if (id == 3) {
    auto last_place = std::find_if(reference.rbegin(), reference.rend(), [](const std::string& a) {
      return detail::starts_with(a, "place") && !detail::arg_of(a, 1).empty();
    });
    if (last_place == reference.rend()) throw std::runtime_error("protocol 3 needs a place onto an object");
    const std::string dest = detail::arg_of(*last_place, 1);
    const auto index = static_cast<std::size_t>(reference.rend() - last_place - 1);
    out.disturbances.push_back(
        {index, sim::Phase::Pre, sim::Disturbance::Kind::MoveTarget, dest, detail::displaced_pose(w, dest)});
  }
  return out;
}

}  // namespace deskagent::bench
