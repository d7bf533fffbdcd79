#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deskagent/geometry.hpp"
#include "deskagent/grasp/collision.hpp"
#include "deskagent/rng.hpp"
#include "deskagent/sim/world.hpp"

namespace deskagent::grasp {

struct BoundingRegion {
  Box box;
  sim::View source = sim::View::Shoulder;
};

struct GraspCandidate {
  std::string hypothesis;
  Vec2 pose;
  double yaw = 0.0;  // radians; the jaws close along this direction
  double width = 0.0;
  double collision = 0.0;
  bool semantic_match = false;  // filled in from the observer's verdict
  std::size_t index = 0;        // sampling order, the final tie-break
};

inline nlohmann::json candidate_to_json(const GraspCandidate& c) {
  return {{"hypothesis", c.hypothesis},
          {"pose_cm", {c.pose.x, c.pose.y}},
          {"yaw_deg", std::round(c.yaw * 180.0 / std::numbers::pi)},
          {"width_cm", c.width},
          {"collision", c.collision}};
}

inline GraspCandidate candidate_from_json(const nlohmann::json& j) {
  GraspCandidate c;
  c.hypothesis = j.at("hypothesis").get<std::string>();
  c.pose = {j.at("pose_cm").at(0).get<double>(), j.at("pose_cm").at(1).get<double>()};
  c.yaw = deg2rad(j.at("yaw_deg").get<double>());
  c.width = j.at("width_cm").get<double>();
  c.collision = j.at("collision").get<double>();
  return c;
}

class EmptyRegion : public std::runtime_error {
 public:
  EmptyRegion() : std::runtime_error("no visible graspable object intersects the region") {}
};

struct GraspConfig {
  std::size_t k = 16;
  double jitter = 0.2;  // fraction of the footprint extent
};

inline constexpr double kYawChoicesDeg[] = {0.0, 45.0, 90.0, 135.0};

// Footprint extent along a direction.
inline double extent_along(double w, double d, double yaw) {
  return w * std::abs(std::cos(yaw)) + d * std::abs(std::sin(yaw));
}

// Footprints the gripper could hit when grasping `target`: everything observed except
// the target, whatever supports or contains it, and the held object.
inline std::vector<Box> observed_obstacles(const sim::Observation& obs, const std::string& target) {
  std::set<std::string> skip{target};
  std::string cur = target;
  for (std::size_t guard = 0; guard < obs.relations.size(); ++guard) {
    auto it = std::find_if(obs.relations.begin(), obs.relations.end(), [&](const pddl::Atom& a) {
      return (a.predicate == "on-top-of" || a.predicate == "in-container") && a.args.size() == 2 && a.args[0] == cur;
    });
    if (it == obs.relations.end() || !skip.insert(it->args[1]).second) break;
    cur = it->args[1];
  }
  std::vector<Box> out;
  for (const auto& o : obs.objects)
    if (!skip.count(o.name) && !o.held) out.push_back(o.footprint());
  return out;
}

inline double collision_score(const GraspCandidate& c, const sim::Observation& obs) {
  const auto* t = obs.find(c.hypothesis);
  if (!t) return 0.0;
  return collision_fraction(gripper_sweep(c.pose, c.yaw, c.width), t->footprint(), observed_obstacles(obs, c.hypothesis));
}

inline const sim::ObservedObject* nearest_graspable(const sim::Observation& obs, Vec2 p) {
  const sim::ObservedObject* best = nullptr;
  double best_d = 0.0;
  for (const auto& o : obs.objects) {
    if (!o.graspable || o.held) continue;
    const double dd = distance(o.pose, p);
    if (!best || dd < best_d) {
      best = &o;
      best_d = dd;
    }
  }
  return best;
}

// Samples k candidates over the visible, graspable, clear objects touching the region
// and returns them best first.
inline std::vector<GraspCandidate> generate(const sim::Observation& obs, const BoundingRegion& region, Rng& rng,
                                            const GraspConfig& cfg = {}) {
  std::vector<const sim::ObservedObject*> pool;
  for (const auto& o : obs.objects)
    if (o.graspable && o.clear && !o.held && overlaps(o.footprint(), region.box)) pool.push_back(&o);
  if (pool.empty()) throw EmptyRegion();

  std::vector<GraspCandidate> out;
  out.reserve(cfg.k);
  for (std::size_t i = 0; i < cfg.k; ++i) {
    const auto* o = pool[rng.index(pool.size())];
    const double yaw = deg2rad(kYawChoicesDeg[rng.index(std::size(kYawChoicesDeg))]);
    const Vec2 pose = o->pose + Vec2{rng.uniform(-cfg.jitter, cfg.jitter) * o->w,
                                      rng.uniform(-cfg.jitter, cfg.jitter) * o->d};
    GraspCandidate c;
    c.index = i;
    c.pose = pose;
    c.yaw = yaw;
    c.hypothesis = nearest_graspable(obs, pose)->name;
    const auto* h = obs.find(c.hypothesis);
    c.width = extent_along(h->w, h->d, yaw) + 1.0;
    c.collision = collision_score(c, obs);
    out.push_back(c);
  }
  const Vec2 center = region.box.center;
  std::stable_sort(out.begin(), out.end(), [&](const GraspCandidate& a, const GraspCandidate& b) {
    if (a.collision != b.collision) return a.collision < b.collision;
    const double da = distance(a.pose, center), db = distance(b.pose, center);
    if (da != db) return da < db;
    return a.index < b.index;
  });
  return out;
}

}  // namespace deskagent::grasp
