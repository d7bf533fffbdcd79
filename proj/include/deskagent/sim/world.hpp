#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deskagent/geometry.hpp"
#include "deskagent/grasp/collision.hpp"
#include "deskagent/pddl/ast.hpp"
#include "deskagent/pddl/parser.hpp"
#include "deskagent/planner/state.hpp"
#include "deskagent/rng.hpp"

namespace deskagent::sim {

enum class Category { Fruit, Block, Toy, Tool, Food, Container, Surface, Drawer };

inline const char* to_string(Category c) {
  switch (c) {
    case Category::Fruit: return "fruit";
    case Category::Block: return "block";
    case Category::Toy: return "toy";
    case Category::Tool: return "tool";
    case Category::Food: return "food";
    case Category::Container: return "container";
    case Category::Surface: return "surface";
    case Category::Drawer: return "drawer";
  }
  return "?";
}

inline Category category_from_string(const std::string& s) {
  for (auto c : {Category::Fruit, Category::Block, Category::Toy, Category::Tool, Category::Food, Category::Container,
                 Category::Surface, Category::Drawer})
    if (s == to_string(c)) return c;
  throw std::invalid_argument("unknown category '" + s + "'");
}

// Items can be picked; containers, surfaces and the drawer stay put.
inline bool default_graspable(Category c) {
  return c != Category::Container && c != Category::Surface && c != Category::Drawer;
}

struct Placement {
  enum class Kind { Table, OnObject, InContainer, InGripper };
  Kind kind = Kind::Table;
  std::string ref;
  bool operator==(const Placement&) const = default;
};

struct ObjectInstance {
  std::string name;
  Category category = Category::Block;
  double w = 4.0;
  double d = 4.0;
  Vec2 pose;
  Placement placement;
  bool graspable = true;

  Box footprint() const { return {pose, w, d}; }
  bool operator==(const ObjectInstance&) const = default;
};

struct TableBounds {
  double w = 80.0;
  double d = 60.0;
  bool operator==(const TableBounds&) const = default;
};

class InvalidScene : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ExecutionError : public std::runtime_error {
 public:
  enum class Kind { GripperConflict, InvalidTarget };
  ExecutionError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct WorldState {
  std::map<std::string, ObjectInstance> objects;
  std::optional<std::string> holding;
  std::string drawer;  // empty when the scene has none
  bool drawer_open = false;
  TableBounds table;
  std::uint64_t rng_seed = 0;
  std::uint64_t step_clock = 0;
  std::vector<std::string> warnings;

  bool operator==(const WorldState&) const = default;

  const ObjectInstance& at(const std::string& name) const {
    auto it = objects.find(name);
    if (it == objects.end()) throw ExecutionError(ExecutionError::Kind::InvalidTarget, "unknown object '" + name + "'");
    return it->second;
  }
  ObjectInstance& at(const std::string& name) {
    return const_cast<ObjectInstance&>(static_cast<const WorldState&>(*this).at(name));
  }

  std::optional<std::string> object_on(const std::string& name) const {
    for (const auto& [n, o] : objects)
      if (o.placement.kind == Placement::Kind::OnObject && o.placement.ref == name) return n;
    return std::nullopt;
  }

  bool clear(const std::string& name) const {
    return at(name).placement.kind != Placement::Kind::InGripper && !object_on(name);
  }

  std::vector<std::string> contents(const std::string& container) const {
    std::vector<std::string> out;
    for (const auto& [n, o] : objects)
      if (o.placement.kind == Placement::Kind::InContainer && o.placement.ref == container) out.push_back(n);
    return out;
  }

  // Hidden when inside a closed drawer.
  bool occluded(const std::string& name) const {
    const auto& p = at(name).placement;
    return p.kind == Placement::Kind::InContainer && p.ref == drawer && !drawer_open;
  }

  // 0 on the table; one more per object underneath; contents sit one above their container.
  int stack_level(const std::string& name) const {
    int level = 0;
    const ObjectInstance* o = &at(name);
    for (std::size_t guard = 0; guard <= objects.size(); ++guard) {
      if (o->placement.kind == Placement::Kind::Table || o->placement.kind == Placement::Kind::InGripper) return level;
      ++level;
      o = &at(o->placement.ref);
    }
    return level;
  }

  // Empty when every structural invariant holds.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    std::size_t in_gripper = 0;
    std::map<std::string, int> on_count;
    for (const auto& [n, o] : objects) {
      if (o.name != n) v.push_back(n + ": key mismatch");
      if (o.w <= 0 || o.d <= 0) v.push_back(n + ": non-positive footprint");
      switch (o.placement.kind) {
        case Placement::Kind::Table: break;
        case Placement::Kind::InGripper:
          ++in_gripper;
          if (holding != n) v.push_back(n + ": in gripper but gripper holds another");
          break;
        case Placement::Kind::OnObject:
        case Placement::Kind::InContainer: {
          auto it = objects.find(o.placement.ref);
          if (it == objects.end()) {
            v.push_back(n + ": refers to missing " + o.placement.ref);
          } else if (it->second.placement.kind == Placement::Kind::InGripper) {
            v.push_back(n + ": rests on held object");
          }
          if (o.placement.kind == Placement::Kind::OnObject && ++on_count[o.placement.ref] > 1)
            v.push_back(o.placement.ref + ": supports more than one object");
          break;
        }
      }
      if (o.pose.x < -1e-9 || o.pose.x > table.w + 1e-9 || o.pose.y < -1e-9 || o.pose.y > table.d + 1e-9)
        v.push_back(n + ": pose outside table");
    }
    if (holding && (!objects.count(*holding) || objects.at(*holding).placement.kind != Placement::Kind::InGripper))
      v.push_back("gripper holds " + *holding + " which is not in the gripper");
    if (in_gripper > 1) v.push_back("more than one object in the gripper");
    for (const auto& [n, o] : objects) {
      const ObjectInstance* cur = &o;
      std::size_t steps = 0;
      while (cur->placement.kind == Placement::Kind::OnObject || cur->placement.kind == Placement::Kind::InContainer) {
        auto it = objects.find(cur->placement.ref);
        if (it == objects.end()) break;
        cur = &it->second;
        if (++steps > objects.size()) {
          v.push_back(n + ": cyclic support");
          break;
        }
      }
    }
    return v;
  }
};

// Ground-truth relations in the shared predicate vocabulary.
inline std::vector<pddl::Atom> relations(const WorldState& w) {
  std::vector<pddl::Atom> out;
  if (w.holding)
    out.push_back({"holding", {*w.holding}});
  else
    out.push_back({"hand-empty", {}});
  if (!w.drawer.empty() && w.drawer_open) out.push_back({"drawer-open", {w.drawer}});
  for (const auto& [n, o] : w.objects) {
    if (o.category == Category::Drawer) continue;
    switch (o.placement.kind) {
      case Placement::Kind::Table: out.push_back({"on-table", {n}}); break;
      case Placement::Kind::OnObject: out.push_back({"on-top-of", {n, o.placement.ref}}); break;
      case Placement::Kind::InContainer: out.push_back({"in-container", {n, o.placement.ref}}); break;
      case Placement::Kind::InGripper: break;
    }
    if (w.clear(n)) out.push_back({"clear", {n}});
  }
  return planner::make_atom_set(std::move(out));
}

// Neither held nor hidden inside the closed drawer.
inline bool reachable(const WorldState& w, const std::string& n) {
  return w.at(n).placement.kind != Placement::Kind::InGripper && !w.occluded(n);
}

// Top-most reachable object whose footprint contains p.
inline std::optional<std::string> topmost_at(const WorldState& w, Vec2 p,
                                             const std::optional<std::string>& exclude = std::nullopt) {
  std::optional<std::string> best;
  int best_level = -1;
  for (const auto& [n, o] : w.objects) {
    if (exclude && n == *exclude) continue;
    if (!reachable(w, n) || !o.footprint().contains(p)) continue;
    const int lvl = w.stack_level(n);
    if (lvl > best_level) {
      best = n;
      best_level = lvl;
    }
  }
  return best;
}

// ---- scenes ---------------------------------------------------------------

struct Scene {
  std::string name;
  WorldState state;
};

inline Vec2 clamp_to_table(Vec2 p, double w, double d, const TableBounds& t) {
  return {std::clamp(p.x, std::min(w / 2, t.w / 2), std::max(t.w - w / 2, t.w / 2)),
          std::clamp(p.y, std::min(d / 2, t.d / 2), std::max(t.d - d / 2, t.d / 2))};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.name = j.value("name", "scene");
  auto& w = s.state;
  if (j.contains("table_cm")) w.table = {j["table_cm"].at(0).get<double>(), j["table_cm"].at(1).get<double>()};
  for (const auto& jo : j.at("objects")) {
    ObjectInstance o;
    o.name = jo.at("name").get<std::string>();
    o.category = category_from_string(jo.at("category").get<std::string>());
    o.w = jo.at("footprint_cm").at(0).get<double>();
    o.d = jo.at("footprint_cm").at(1).get<double>();
    o.pose = {jo.at("pose_cm").at(0).get<double>(), jo.at("pose_cm").at(1).get<double>()};
    o.graspable = jo.value("graspable", default_graspable(o.category));
    if (jo.contains("on")) o.placement = {Placement::Kind::OnObject, jo["on"].get<std::string>()};
    if (!w.objects.emplace(o.name, o).second) throw InvalidScene("duplicate object '" + o.name + "'");
  }
  if (j.contains("containers")) {
    for (const auto& [c, items] : j["containers"].items()) {
      for (const auto& it : items) {
        auto found = w.objects.find(it.get<std::string>());
        if (found == w.objects.end()) throw InvalidScene("container content '" + it.get<std::string>() + "' unknown");
        found->second.placement = {Placement::Kind::InContainer, c};
      }
    }
  }
  if (j.contains("drawer")) {
    const auto& jd = j["drawer"];
    w.drawer = jd.value("name", "top-drawer");
    w.drawer_open = jd.value("state", "closed") == "open";
    for (const auto& it : jd.value("contents", nlohmann::json::array())) {
      auto found = w.objects.find(it.get<std::string>());
      if (found == w.objects.end()) throw InvalidScene("drawer content '" + it.get<std::string>() + "' unknown");
      found->second.placement = {Placement::Kind::InContainer, w.drawer};
    }
    if (!w.objects.count(w.drawer)) throw InvalidScene("drawer object '" + w.drawer + "' missing from objects");
  }
  if (j.contains("holding") && !j["holding"].is_null()) {
    w.holding = j["holding"].get<std::string>();
    w.at(*w.holding).placement = {Placement::Kind::InGripper, ""};
  }
  for (auto& [n, o] : w.objects) {
    const Vec2 c = clamp_to_table(o.pose, o.w, o.d, w.table);
    if (c != o.pose) {
      w.warnings.push_back(n + ": pose clamped to table");
      o.pose = c;
    }
  }
  for (const auto& [n, o] : w.objects) {
    if (o.placement.kind == Placement::Kind::OnObject || o.placement.kind == Placement::Kind::InContainer)
      if (!w.objects.count(o.placement.ref)) throw InvalidScene(n + ": unknown support '" + o.placement.ref + "'");
  }
  if (auto v = w.violations(); !v.empty()) throw InvalidScene(v.front());
  return s;
}

inline nlohmann::json scene_to_json(const Scene& s) {
  const auto& w = s.state;
  nlohmann::json objs = nlohmann::json::array();
  nlohmann::json containers = nlohmann::json::object();
  nlohmann::json drawer_contents = nlohmann::json::array();
  for (const auto& [n, o] : w.objects) {
    nlohmann::json jo{{"name", n},
                      {"category", to_string(o.category)},
                      {"footprint_cm", {o.w, o.d}},
                      {"pose_cm", {o.pose.x, o.pose.y}}};
    if (o.graspable != default_graspable(o.category)) jo["graspable"] = o.graspable;
    if (o.placement.kind == Placement::Kind::OnObject) jo["on"] = o.placement.ref;
    if (o.placement.kind == Placement::Kind::InContainer) {
      if (o.placement.ref == w.drawer)
        drawer_contents.push_back(n);
      else
        containers[o.placement.ref].push_back(n);
    }
    objs.push_back(jo);
  }
  nlohmann::json j{{"name", s.name}, {"table_cm", {w.table.w, w.table.d}}, {"objects", objs}};
  if (!containers.empty()) j["containers"] = containers;
  if (!w.drawer.empty())
    j["drawer"] = {{"name", w.drawer}, {"state", w.drawer_open ? "open" : "closed"}, {"contents", drawer_contents}};
  if (w.holding) j["holding"] = *w.holding;
  return j;
}

// ---- observation ----------------------------------------------------------

enum class View { Shoulder, Wrist };
inline const char* to_string(View v) { return v == View::Shoulder ? "shoulder" : "wrist"; }

struct ObservationConfig {
  double shoulder_sigma = 1.0;
  double wrist_sigma = 0.2;
  double wrist_radius = 12.0;
};

struct ObservedObject {
  std::string name;
  Category category = Category::Block;
  double w = 0.0;
  double d = 0.0;
  Vec2 pose;
  int level = 0;
  bool graspable = true;
  bool clear = true;
  bool held = false;

  Box footprint() const { return {pose, w, d}; }
  bool operator==(const ObservedObject&) const = default;
};

struct Observation {
  View view = View::Shoulder;
  std::optional<Vec2> focus;
  std::vector<ObservedObject> objects;
  std::vector<std::string> occluded;
  std::vector<pddl::Atom> relations;
  std::map<std::string, Category> catalog;  // every known object, visible or not
  TableBounds table;
  std::optional<std::string> holding;
  std::string drawer;
  bool drawer_open = false;

  const ObservedObject* find(const std::string& name) const {
    for (const auto& o : objects)
      if (o.name == name) return &o;
    return nullptr;
  }
  bool operator==(const Observation&) const = default;
};

inline planner::SymbolicState to_symbolic(const Observation& o) { return planner::SymbolicState(o.relations); }

inline nlohmann::json observation_to_json(const Observation& o) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& x : o.objects)
    objs.push_back({{"name", x.name},
                    {"category", to_string(x.category)},
                    {"footprint_cm", {x.w, x.d}},
                    {"pose_cm", {x.pose.x, x.pose.y}},
                    {"level", x.level},
                    {"graspable", x.graspable},
                    {"clear", x.clear},
                    {"held", x.held}});
  nlohmann::json rel = nlohmann::json::array();
  for (const auto& a : o.relations) rel.push_back(a.str());
  nlohmann::json catalog = nlohmann::json::object();
  for (const auto& [n, c] : o.catalog) catalog[n] = to_string(c);
  nlohmann::json j{{"view", to_string(o.view)}, {"objects", objs},   {"occluded", o.occluded},
                   {"relations", rel},          {"catalog", catalog}, {"table_cm", {o.table.w, o.table.d}}};
  if (o.focus) j["focus_cm"] = {o.focus->x, o.focus->y};
  j["holding"] = o.holding ? nlohmann::json(*o.holding) : nlohmann::json();
  if (!o.drawer.empty()) j["drawer"] = {{"name", o.drawer}, {"open", o.drawer_open}};
  return j;
}

inline Observation observation_from_json(const nlohmann::json& j) {
  Observation o;
  o.view = j.at("view").get<std::string>() == "wrist" ? View::Wrist : View::Shoulder;
  if (j.contains("focus_cm")) o.focus = Vec2{j["focus_cm"].at(0).get<double>(), j["focus_cm"].at(1).get<double>()};
  for (const auto& x : j.at("objects")) {
    ObservedObject ob;
    ob.name = x.at("name").get<std::string>();
    ob.category = category_from_string(x.at("category").get<std::string>());
    ob.w = x.at("footprint_cm").at(0).get<double>();
    ob.d = x.at("footprint_cm").at(1).get<double>();
    ob.pose = {x.at("pose_cm").at(0).get<double>(), x.at("pose_cm").at(1).get<double>()};
    ob.level = x.at("level").get<int>();
    ob.graspable = x.at("graspable").get<bool>();
    ob.clear = x.at("clear").get<bool>();
    ob.held = x.at("held").get<bool>();
    o.objects.push_back(ob);
  }
  o.occluded = j.at("occluded").get<std::vector<std::string>>();
  for (const auto& r : j.at("relations")) {
    const auto lits = pddl::parse_formula(r.get<std::string>());
    if (lits.size() != 1 || lits[0].negated) throw std::invalid_argument("bad relation " + r.dump());
    o.relations.push_back(lits[0].atom);
  }
  for (const auto& [n, c] : j.at("catalog").items()) o.catalog[n] = category_from_string(c.get<std::string>());
  o.table = {j.at("table_cm").at(0).get<double>(), j.at("table_cm").at(1).get<double>()};
  if (j.contains("holding") && !j["holding"].is_null()) o.holding = j["holding"].get<std::string>();
  if (j.contains("drawer")) {
    o.drawer = j["drawer"].at("name").get<std::string>();
    o.drawer_open = j["drawer"].at("open").get<bool>();
  }
  return o;
}

// ---- execution ------------------------------------------------------------

struct FailureModel {
  double p_missed_grasp = 0.05;
  double p_slip_during_transfer = 0.02;
  double p_wrong_object_when_crowded = 0.15;
  double crowd_radius = 6.0;

  static FailureModel none() { return {0.0, 0.0, 0.0, 6.0}; }
  void validate() const {
    for (double p : {p_missed_grasp, p_slip_during_transfer, p_wrong_object_when_crowded})
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("failure probability outside [0,1]");
    if (!(crowd_radius >= 0.0)) throw std::invalid_argument("crowd radius must be non-negative");
  }
};

enum class PrimitiveKind { Pick, Place, OpenDrawer, CloseDrawer };

inline const char* to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::Pick: return "pick";
    case PrimitiveKind::Place: return "place";
    case PrimitiveKind::OpenDrawer: return "open-drawer";
    case PrimitiveKind::CloseDrawer: return "close-drawer";
  }
  return "?";
}

inline constexpr const char* kTable = "table";

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Pick;
  std::string target;       // object to pick or place, or the drawer
  std::string destination;  // place only: object, container, drawer or "table"
  Vec2 pose;                // approach point (pick) or release point (place)
  double yaw = 0.0;
  double width = 0.0;
  std::size_t step = 0;  // index of the action within the plan being executed
};

enum class Outcome { Success, MissedGrasp, WrongObject, Slipped, Misplaced };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::MissedGrasp: return "missed-grasp";
    case Outcome::WrongObject: return "wrong-object";
    case Outcome::Slipped: return "slipped";
    case Outcome::Misplaced: return "misplaced";
  }
  return "?";
}

enum class Phase { Pre, Mid };

struct Disturbance {
  enum class Kind { MoveObject, MoveTarget };
  std::size_t index = 0;
  Phase phase = Phase::Pre;
  Kind kind = Kind::MoveObject;
  std::string subject;
  Vec2 new_pose;
  bool operator==(const Disturbance&) const = default;
};

inline nlohmann::json disturbance_to_json(const Disturbance& d) {
  return {{"index", d.index},
          {"phase", d.phase == Phase::Pre ? "pre" : "mid"},
          {"kind", d.kind == Disturbance::Kind::MoveObject ? "move-object" : "move-target"},
          {"subject", d.subject},
          {"new_pose_cm", {d.new_pose.x, d.new_pose.y}}};
}

class DuplicateTrigger : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExecResult {
  Outcome outcome = Outcome::Success;
  std::string affected;  // object grasped or released, if any
  Placement landed;      // place only
  std::vector<Disturbance> fired;
};

// Free spot on the table for a w x d footprint, nearest to `preferred` with `clearance`
// cm kept from every obstacle. Scans a 1 cm lattice so results are reproducible.
inline std::optional<Vec2> find_free_spot(const std::vector<Box>& obstacles, double w, double d,
                                          const TableBounds& table, Vec2 preferred, double clearance = 1.0) {
  std::optional<Vec2> best;
  double best_dist = 0.0;
  for (double x = w / 2 + 1.0; x <= table.w - w / 2 - 1.0 + 1e-9; x += 1.0) {
    for (double y = d / 2 + 1.0; y <= table.d - d / 2 - 1.0 + 1e-9; y += 1.0) {
      const Box cand{{x, y}, w + 2 * clearance, d + 2 * clearance};
      if (std::any_of(obstacles.begin(), obstacles.end(), [&](const Box& o) { return overlaps(cand, o); })) continue;
      const double dist = distance({x, y}, preferred);
      if (!best || dist < best_dist - 1e-12) {
        best = Vec2{x, y};
        best_dist = dist;
      }
    }
  }
  return best;
}

// Free spot for a w x d footprint lying wholly inside `region`, nearest to `preferred`.
inline std::optional<Vec2> find_free_spot_in(const Box& region, const std::vector<Box>& obstacles, double w, double d,
                                             Vec2 preferred, double clearance = 0.5) {
  std::optional<Vec2> best;
  double best_dist = 0.0;
  for (double x = region.min_x() + w / 2; x <= region.max_x() - w / 2 + 1e-9; x += 1.0) {
    for (double y = region.min_y() + d / 2; y <= region.max_y() - d / 2 + 1e-9; y += 1.0) {
      const Box cand{{x, y}, w + 2 * clearance, d + 2 * clearance};
      if (std::any_of(obstacles.begin(), obstacles.end(), [&](const Box& o) { return overlaps(cand, o); })) continue;
      const double dist = distance({x, y}, preferred);
      if (!best || dist < best_dist - 1e-12) {
        best = Vec2{x, y};
        best_dist = dist;
      }
    }
  }
  return best;
}

class World {
 public:
  World(Scene scene, FailureModel failures = {}, std::uint64_t seed = 0, ObservationConfig obs = {})
      : state_(std::move(scene.state)),
        failures_(failures),
        obs_cfg_(obs),
        exec_rng_(mix_seed(seed, 0)),
        obs_rng_(mix_seed(seed, 3)),
        name_(std::move(scene.name)) {
    failures_.validate();
    state_.rng_seed = seed;
  }

  const WorldState& state() const noexcept { return state_; }
  const std::string& scene_name() const noexcept { return name_; }
  const FailureModel& failures() const noexcept { return failures_; }
  const ObservationConfig& observation_config() const noexcept { return obs_cfg_; }
  const std::vector<Disturbance>& pending_disturbances() const noexcept { return pending_; }

  void schedule_disturbances(std::vector<Disturbance> ds) {
    std::set<std::pair<std::size_t, int>> seen;
    for (const auto& d : pending_) seen.insert({d.index, static_cast<int>(d.phase)});
    for (const auto& d : ds) {
      if (!seen.insert({d.index, static_cast<int>(d.phase)}).second)
        throw DuplicateTrigger("two disturbances share trigger index " + std::to_string(d.index));
      state_.at(d.subject);
    }
    pending_.insert(pending_.end(), ds.begin(), ds.end());
  }

  ExecResult execute(const Primitive& p) {
    ExecResult r;
    switch (p.kind) {
      case PrimitiveKind::Pick: r = pick(p); break;
      case PrimitiveKind::Place: r = place(p); break;
      case PrimitiveKind::OpenDrawer:
      case PrimitiveKind::CloseDrawer: r = drawer(p); break;
    }
    ++state_.step_clock;
    return r;
  }

  Observation observe(View view, std::optional<Vec2> focus = std::nullopt) {
    if (view == View::Wrist && !focus) throw std::invalid_argument("wrist view requires a focus point");
    Observation o;
    o.view = view;
    o.focus = focus;
    o.table = state_.table;
    o.holding = state_.holding;
    o.drawer = state_.drawer;
    o.drawer_open = state_.drawer_open;
    o.relations = relations(state_);
    for (const auto& [n, x] : state_.objects) o.catalog[n] = x.category;
    const double sigma = view == View::Shoulder ? obs_cfg_.shoulder_sigma : obs_cfg_.wrist_sigma;
    for (const auto& [n, x] : state_.objects) {
      if (state_.occluded(n)) {
        o.occluded.push_back(n);
        continue;
      }
      const bool held = x.placement.kind == Placement::Kind::InGripper;
      if (view == View::Wrist && (held || distance(x.pose, *focus) > obs_cfg_.wrist_radius)) continue;
      ObservedObject ob{n, x.category, x.w, x.d, x.pose, state_.stack_level(n), x.graspable, state_.clear(n), held};
      if (sigma > 0) ob.pose = ob.pose + Vec2{obs_rng_.normal(0, sigma), obs_rng_.normal(0, sigma)};
      o.objects.push_back(ob);
    }
    return o;
  }

  // Noise-free shoulder view; consumes no randomness.
  Observation observe_truth() const {
    World copy = *this;
    copy.obs_cfg_.shoulder_sigma = 0.0;
    return copy.observe(View::Shoulder);
  }

  bool crowded(const std::string& target) const {
    const auto& t = state_.at(target);
    std::size_t n = 0;
    for (const auto& [name, o] : state_.objects)
      if (o.graspable && o.placement.kind != Placement::Kind::InGripper && !state_.occluded(name) &&
          distance(o.pose, t.pose) <= failures_.crowd_radius)
        ++n;
    return n >= 2;
  }

  // True collision fraction of a gripper sweep against every other visible footprint,
  // excluding the target's own support chain and the held object.
  double true_collision(const std::string& target, Vec2 pose, double yaw, double width) const {
    return grasp::collision_fraction(grasp::gripper_sweep(pose, yaw, width), state_.at(target).footprint(),
                                     obstacles_for(target));
  }

  std::vector<Box> obstacles_for(const std::string& target) const {
    std::set<std::string> skip{target};
    for (const auto* o = &state_.at(target);
         o->placement.kind == Placement::Kind::OnObject || o->placement.kind == Placement::Kind::InContainer;
         o = &state_.at(o->placement.ref))
      if (!skip.insert(o->placement.ref).second) break;
    std::vector<Box> out;
    for (const auto& [n, o] : state_.objects) {
      if (skip.count(n) || o.placement.kind == Placement::Kind::InGripper || state_.occluded(n)) continue;
      out.push_back(o.footprint());
    }
    return out;
  }

 private:
  std::vector<Disturbance> take_disturbances(const Primitive& p, Phase phase) {
    std::vector<Disturbance> fired;
    for (auto it = pending_.begin(); it != pending_.end();) {
      const bool involves =
          (it->kind == Disturbance::Kind::MoveObject && p.kind == PrimitiveKind::Pick && p.target == it->subject) ||
          (it->kind == Disturbance::Kind::MoveTarget && p.kind == PrimitiveKind::Place &&
           p.destination == it->subject);
      if (involves && it->phase == phase && p.step >= it->index) {
        fired.push_back(*it);
        it = pending_.erase(it);
      } else {
        ++it;
      }
    }
    for (const auto& d : fired) move_object(d.subject, d.new_pose);
    return fired;
  }

  // Moves an object with everything resting on or inside it. A moved object that was
  // held or stacked ends up on the table.
  void move_object(const std::string& name, Vec2 to) {
    auto& o = state_.at(name);
    to = clamp_to_table(to, o.w, o.d, state_.table);
    const Vec2 delta = to - o.pose;
    if (o.placement.kind == Placement::Kind::InGripper) state_.holding.reset();
    o.placement = {Placement::Kind::Table, ""};
    std::vector<std::string> frontier{name};
    std::set<std::string> moved{name};
    while (!frontier.empty()) {
      const auto cur = frontier.back();
      frontier.pop_back();
      auto& c = state_.at(cur);
      c.pose = clamp_to_table(c.pose + delta, c.w, c.d, state_.table);
      for (const auto& [n, x] : state_.objects)
        if ((x.placement.kind == Placement::Kind::OnObject || x.placement.kind == Placement::Kind::InContainer) &&
            x.placement.ref == cur && moved.insert(n).second)
          frontier.push_back(n);
    }
  }

  bool pickable(const std::string& n) const { return sim::reachable(state_, n); }

  std::optional<std::string> topmost_at(Vec2 p, const std::optional<std::string>& exclude = std::nullopt) const {
    return sim::topmost_at(state_, p, exclude);
  }

  void grasp(const std::string& n) {
    state_.at(n).placement = {Placement::Kind::InGripper, ""};
    state_.holding = n;
  }

  ExecResult pick(const Primitive& p) {
    if (state_.holding)
      throw ExecutionError(ExecutionError::Kind::GripperConflict, "pick while holding " + *state_.holding);
    const auto& target = state_.at(p.target);
    if (!target.graspable)
      throw ExecutionError(ExecutionError::Kind::InvalidTarget, p.target + " is not graspable");
    ExecResult r;
    r.fired = take_disturbances(p, Phase::Pre);

    auto hit = topmost_at(p.pose);
    if (!hit || !state_.at(*hit).graspable || !state_.clear(*hit)) {
      r.outcome = Outcome::MissedGrasp;
    } else if (*hit != p.target) {
      r.outcome = Outcome::WrongObject;
      r.affected = *hit;
    } else if (exec_rng_.bernoulli(failures_.p_missed_grasp)) {
      r.outcome = Outcome::MissedGrasp;
    } else if (crowded(p.target) && true_collision(p.target, p.pose, p.yaw, std::max(p.width, 0.1)) > 0.0 &&
               exec_rng_.bernoulli(failures_.p_wrong_object_when_crowded)) {
      std::optional<std::string> neighbor;
      double best = 0.0;
      for (const auto& [n, o] : state_.objects) {
        if (n == p.target || !o.graspable || !pickable(n) || !state_.clear(n)) continue;
        const double dist = distance(o.pose, state_.at(p.target).pose);
        if (dist <= failures_.crowd_radius && (!neighbor || dist < best)) {
          neighbor = n;
          best = dist;
        }
      }
      r.outcome = neighbor ? Outcome::WrongObject : Outcome::MissedGrasp;
      if (neighbor) r.affected = *neighbor;
    } else {
      r.outcome = Outcome::Success;
      r.affected = p.target;
    }
    if (!r.affected.empty()) grasp(r.affected);

    const bool held_target = state_.holding == p.target;
    auto mid = take_disturbances(p, Phase::Mid);
    if (!mid.empty() && held_target) {
      r.outcome = Outcome::MissedGrasp;
      r.affected.clear();
    }
    r.fired.insert(r.fired.end(), mid.begin(), mid.end());
    return r;
  }

  Placement land(const std::string& held, Vec2 at) {
    auto& o = state_.at(held);
    const Vec2 clamped = clamp_to_table(at, o.w, o.d, state_.table);
    if (clamped != at) state_.warnings.push_back(held + ": release point clamped to table");
    Placement pl{Placement::Kind::Table, ""};
    if (auto under = topmost_at(clamped, held)) {
      const auto& u = state_.at(*under);
      if (u.category == Category::Drawer) {
        if (state_.drawer_open) pl = {Placement::Kind::InContainer, *under};
      } else if (u.category == Category::Container) {
        pl = {Placement::Kind::InContainer, *under};
      } else if (u.placement.kind == Placement::Kind::InContainer) {
        pl = {Placement::Kind::InContainer, u.placement.ref};
      } else {
        std::string top = *under;
        while (auto above = state_.object_on(top)) top = *above;
        pl = {Placement::Kind::OnObject, top};
      }
    }
    o.placement = pl;
    o.pose = clamped;
    state_.holding.reset();
    return pl;
  }

  ExecResult place(const Primitive& p) {
    if (!state_.holding) throw ExecutionError(ExecutionError::Kind::GripperConflict, "place with an empty gripper");
    if (p.destination != kTable) state_.at(p.destination);
    ExecResult r;
    r.fired = take_disturbances(p, Phase::Pre);
    const std::string held = *state_.holding;
    Vec2 release = p.pose;
    const bool slipped = exec_rng_.bernoulli(failures_.p_slip_during_transfer);
    if (slipped) {
      const double angle = exec_rng_.uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = exec_rng_.uniform(4.0, 8.0);
      release = release + Vec2{std::cos(angle) * dist, std::sin(angle) * dist};
    }
    r.landed = land(held, release);
    r.affected = held;
    const bool at_destination = p.destination == kTable ? r.landed.kind == Placement::Kind::Table
                                                        : r.landed.kind != Placement::Kind::Table &&
                                                              r.landed.ref == p.destination;
    if (slipped)
      r.outcome = Outcome::Slipped;
    else if (held == p.target && at_destination)
      r.outcome = Outcome::Success;
    else
      r.outcome = Outcome::Misplaced;
    auto mid = take_disturbances(p, Phase::Mid);
    r.fired.insert(r.fired.end(), mid.begin(), mid.end());
    return r;
  }

  ExecResult drawer(const Primitive& p) {
    if (state_.drawer.empty() || p.target != state_.drawer)
      throw ExecutionError(ExecutionError::Kind::InvalidTarget, "'" + p.target + "' is not the drawer");
    if (state_.holding)
      throw ExecutionError(ExecutionError::Kind::GripperConflict, "drawer operation while holding " + *state_.holding);
    state_.drawer_open = p.kind == PrimitiveKind::OpenDrawer;
    return {Outcome::Success, p.target, {}, {}};
  }

  WorldState state_;
  FailureModel failures_;
  ObservationConfig obs_cfg_;
  Rng exec_rng_;
  Rng obs_rng_;
  std::string name_;
  std::vector<Disturbance> pending_;
};

}  // namespace deskagent::sim
