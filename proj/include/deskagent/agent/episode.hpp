#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deskagent/agent/trace.hpp"
#include "deskagent/bench/score.hpp"
#include "deskagent/grasp/generate.hpp"
#include "deskagent/observer/messages.hpp"
#include "deskagent/observer/tasks.hpp"
#include "deskagent/observer/truth.hpp"
#include "deskagent/pddl/ground.hpp"
#include "deskagent/pddl/parser.hpp"
#include "deskagent/planner/search.hpp"
#include "deskagent/rng.hpp"
#include "deskagent/sim/world.hpp"

namespace deskagent::agent {

enum class CheckerMode { None, GoalOnly, Full };

inline const char* to_string(CheckerMode m) {
  switch (m) {
    case CheckerMode::None: return "none";
    case CheckerMode::GoalOnly: return "goal";
    case CheckerMode::Full: return "full";
  }
  return "?";
}

inline CheckerMode checker_from_string(const std::string& s) {
  if (s == "none") return CheckerMode::None;
  if (s == "goal" || s == "goal-only") return CheckerMode::GoalOnly;
  if (s == "full") return CheckerMode::Full;
  throw std::invalid_argument("unknown checker mode '" + s + "'");
}

struct AgentConfig {
  CheckerMode checker = CheckerMode::Full;
  bool grasp_eval = true;
  std::size_t max_action_retries = 2;
  std::size_t max_replans = 3;
  bool effect_check_only = true;
  grasp::GraspConfig grasp;
  planner::SearchConfig search;
};

inline nlohmann::json config_to_json(const AgentConfig& c) {
  return {{"checker", to_string(c.checker)},
          {"grasp_eval", c.grasp_eval},
          {"max_action_retries", c.max_action_retries},
          {"max_replans", c.max_replans},
          {"effect_check_only", c.effect_check_only},
          {"grasp_candidates", c.grasp.k}};
}

struct EpisodeInputs {
  const pddl::DomainDef* domain = nullptr;
  std::string domain_text;
  std::string instruction;
  std::uint64_t seed = 0;  // the agent's own stream (grasp sampling)
};

inline obs::Catalog catalog_of(const sim::WorldState& w) {
  obs::Catalog c;
  for (const auto& [n, o] : w.objects) c[n] = o.category;
  return c;
}

// Plan from the true state to the true goal; the yardstick for progress scoring.
// Throws UnknownTask when the instruction is not a registered task.
inline std::optional<std::vector<std::string>> reference_plan(const pddl::DomainDef& domain, const sim::WorldState& w,
                                                              const std::string& instruction,
                                                              const planner::SearchConfig& search = {}) {
  const auto catalog = catalog_of(w);
  const auto problem =
      obs::build_problem(domain, "reference", catalog, sim::relations(w), obs::true_goal(instruction, catalog));
  const auto pr = planner::plan(pddl::ground(domain, problem), search);
  if (!pr.found()) return std::nullopt;
  std::vector<std::string> out;
  for (const auto& s : pr.plan.steps) out.push_back(s.str());
  return out;
}

namespace detail {

enum class ActionKind { Pick, Place, OpenDrawer, CloseDrawer, Unknown };

inline ActionKind action_kind(const planner::GroundAction& a) {
  if (a.name == "open-drawer") return ActionKind::OpenDrawer;
  if (a.name == "close-drawer") return ActionKind::CloseDrawer;
  if (a.name.rfind("pick", 0) == 0 && !a.args.empty()) return ActionKind::Pick;
  if (a.name.rfind("place", 0) == 0 && !a.args.empty()) return ActionKind::Place;
  return ActionKind::Unknown;
}

class Episode {
 public:
  Episode(sim::World& world, obs::Observer& observer, const EpisodeInputs& in, const AgentConfig& cfg)
      : world_(world), observer_(observer), in_(in), cfg_(cfg), rng_(in.seed) {}

  EpisodeTrace run() {
    const auto t0 = std::chrono::steady_clock::now();
    compute_reference();
    finish(run_loop());
    trace_.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return std::move(trace_);
  }

 private:
  struct Ending {
    bool claimed = false;
    std::string reason;
  };

  Ending run_loop() {
    auto problem = parse_task();
    if (!problem) return {false, "parse-failed"};
    goal_ = problem->goal;
    std::size_t replans = 0;
    for (;;) {
      std::optional<planner::PlanResult> pr;
      nlohmann::json payload{{"replan", replans}};
      try {
        pr = planner::plan(pddl::ground(*in_.domain, *problem), cfg_.search);
      } catch (const std::exception& e) {
        payload["status"] = "error";
        payload["error"] = e.what();
        trace_.add(EventKind::PlanProduced, payload);
        return {false, "plan-failed"};
      }
      payload["status"] = planner::to_string(pr->status);
      payload["expanded"] = pr->expanded;
      nlohmann::json steps = nlohmann::json::array();
      for (const auto& s : pr->plan.steps) steps.push_back(s.str());
      payload["steps"] = steps;
      trace_.add(EventKind::PlanProduced, payload);
      if (!pr->found()) return {false, "no-plan"};

      std::string why;
      for (std::size_t k = 0; k < pr->plan.steps.size() && why.empty(); ++k)
        if (!run_action(pr->plan.steps[k], k)) why = "action-failed";
      if (why.empty()) {
        if (cfg_.checker == CheckerMode::None) return {true, "plan-complete"};
        if (goal_check()) return {true, "goal-verified"};
        why = "goal-check-failed";
      }
      if (replans >= cfg_.max_replans) return {false, "budget"};
      ++replans;
      const auto o = world_.observe(sim::View::Shoulder);
      try {
        problem = obs::build_problem(*in_.domain, problem->name, o.catalog, o.relations, goal_);
      } catch (const std::exception& e) {
        trace_.add(EventKind::Replan, {{"reason", why}, {"replan", replans}, {"error", e.what()}});
        return {false, "replan-failed"};
      }
      trace_.add(EventKind::Replan, {{"reason", why}, {"replan", replans}});
    }
  }

  // ---- observer plumbing ----

  // Model-side schema failures are episode outcomes; transport and script errors propagate.
  std::optional<obs::ObserverVerdict> ask(const obs::ObserverRequest& req, nlohmann::json& queries) {
    ++trace_.calls[obs::to_string(req.kind)];
    try {
      auto v = observer_.query(req);
      trace_.tokens += v.cost.tokens;
      trace_.observer_ms += v.cost.latency_ms;
      queries.push_back({{"kind", obs::to_string(req.kind)},
                         {"verdict", obs::verdict_to_json(v)},
                         {"latency_ms", v.cost.latency_ms},
                         {"tokens", v.cost.tokens}});
      return v;
    } catch (const obs::SchemaError& e) {
      queries.push_back({{"kind", obs::to_string(req.kind)}, {"schema_error", e.what()}});
      return std::nullopt;
    }
  }

  obs::ObserverRequest request(obs::RequestKind kind, sim::Observation o) const {
    obs::ObserverRequest r;
    r.kind = kind;
    r.instruction = in_.instruction;
    r.observation = std::move(o);
    return r;
  }

  // ---- stages ----

  std::optional<pddl::ProblemDef> parse_task() {
    auto req = request(obs::RequestKind::ParseTask, world_.observe(sim::View::Shoulder));
    req.domain_text = in_.domain_text;
    nlohmann::json payload{{"instruction", in_.instruction}, {"queries", nlohmann::json::array()}};
    auto v = ask(req, payload["queries"]);
    std::optional<pddl::ProblemDef> problem;
    if (v) {
      try {
        problem = pddl::parse_problem(v->as<obs::ParseTaskVerdict>().problem_pddl, *in_.domain);
        payload["goal"] = pddl::to_string(problem->goal);
        if (true_goal_) payload["truth"] = obs::same_goal(problem->goal, *true_goal_);
      } catch (const pddl::PddlError& e) {
        payload["error"] = e.what();
      }
    }
    if (!problem && true_goal_) payload["truth"] = false;
    trace_.add(EventKind::ParseRequested, payload);
    return problem;
  }

  bool check_conditions(EventKind kind, const planner::GroundAction& a, std::size_t k) {
    const bool pre = kind == EventKind::PrecondCheck;
    const auto conds = pre ? a.precondition() : a.effect();
    auto req = request(obs::RequestKind::CheckConditions, world_.observe(sim::View::Shoulder));
    req.conditions = conds;
    req.action = a.str();
    req.phase = pre ? "pre" : "effect";
    nlohmann::json payload{{"step", k}, {"action", a.str()}, {"queries", nlohmann::json::array()}};
    auto v = ask(req, payload["queries"]);
    const bool ok = v && v->as<obs::CheckConditionsVerdict>().success;
    payload["success"] = ok;
    payload["truth"] = obs::conditions_hold(world_.state(), conds);
    trace_.add(kind, payload);
    return ok;
  }

  bool goal_check() {
    auto req = request(obs::RequestKind::CheckGoal, world_.observe(sim::View::Shoulder));
    nlohmann::json payload{{"queries", nlohmann::json::array()}};
    auto v = ask(req, payload["queries"]);
    const bool ok = v && v->as<obs::CheckGoalVerdict>().satisfied;
    payload["satisfied"] = ok;
    payload["truth"] = true_goal_ ? nlohmann::json(obs::conditions_hold(world_.state(), *true_goal_)) : nlohmann::json();
    trace_.add(EventKind::GoalCheck, payload);
    return ok;
  }

  // Runs one plan step with its retries. False asks for a replan.
  bool run_action(const planner::GroundAction& a, std::size_t k) {
    const bool full = cfg_.checker == CheckerMode::Full;
    std::size_t failures = 0;
    for (bool first = true;; first = false) {
      if (full && (!cfg_.effect_check_only || !first))
        if (!check_conditions(EventKind::PrecondCheck, a, k)) return false;
      const bool executed = attempt(a, k);
      if (executed && !full) return true;
      if (executed && check_conditions(EventKind::EffectCheck, a, k)) return true;
      if (++failures > cfg_.max_action_retries) return !full;
    }
  }

  bool attempt(const planner::GroundAction& a, std::size_t k) {
    switch (action_kind(a)) {
      case ActionKind::Pick: return attempt_pick(a, k);
      case ActionKind::Place: return attempt_place(a, k);
      case ActionKind::OpenDrawer:
        return execute(a, {sim::PrimitiveKind::OpenDrawer, a.args.at(0), "", {}, 0.0, 0.0, k}, nullptr);
      case ActionKind::CloseDrawer:
        return execute(a, {sim::PrimitiveKind::CloseDrawer, a.args.at(0), "", {}, 0.0, 0.0, k}, nullptr);
      case ActionKind::Unknown: break;
    }
    return not_attempted(a, k, "no primitive implements " + a.name, nullptr);
  }

  std::optional<grasp::GraspCandidate> propose(const sim::Observation& o, const std::string& target,
                                               const planner::GroundAction& a, std::size_t k) {
    auto req = request(obs::RequestKind::DetectObject, o);
    req.query_object = target;
    nlohmann::json payload{{"step", k}, {"action", a.str()}, {"view", sim::to_string(o.view)},
                           {"queries", nlohmann::json::array()}, {"candidate", nullptr}};
    auto v = ask(req, payload["queries"]);
    std::optional<grasp::GraspCandidate> best;
    if (!v || !v->as<obs::DetectObjectVerdict>().found) {
      payload["reason"] = "target not detected";
    } else {
      const auto& d = v->as<obs::DetectObjectVerdict>();
      payload["detect_truth"] = obs::detection_identifies(world_.state(), target, d.point);
      try {
        auto cands = grasp::generate(o, {d.box(), o.view}, rng_, cfg_.grasp);
        best = cands.front();
        payload["candidate"] = grasp::candidate_to_json(*best);
        payload["candidates"] = cands.size();
      } catch (const grasp::EmptyRegion&) {
        payload["reason"] = "no graspable object in the detected region";
      }
    }
    trace_.add(EventKind::GraspProposed, payload);
    return best;
  }

  bool evaluate(const sim::Observation& o, const grasp::GraspCandidate& c, const std::string& target, std::size_t k) {
    auto req = request(obs::RequestKind::EvaluateGrasp, o);
    req.candidate = c;
    req.query_object = target;
    nlohmann::json payload{{"step", k}, {"view", sim::to_string(o.view)}, {"queries", nlohmann::json::array()}};
    auto v = ask(req, payload["queries"]);
    const bool ok = v && v->as<obs::EvaluateGraspVerdict>().accept;
    payload["accept"] = ok;
    payload["truth"] = obs::grasp_is_good(world_, c, target, obs::kGraspTolerance);
    trace_.add(EventKind::GraspVerdict, payload);
    return ok;
  }

  bool attempt_pick(const planner::GroundAction& a, std::size_t k) {
    const std::string& target = a.args[0];
    auto o = world_.observe(sim::View::Shoulder);
    auto c = propose(o, target, a, k);
    if (!c) return not_attempted(a, k, "no grasp candidate", nullptr);
    if (cfg_.grasp_eval && !evaluate(o, *c, target, k)) {
      trace_.add(EventKind::ViewSwitch, {{"step", k}, {"from", "shoulder"}, {"to", "wrist"},
                                         {"focus_cm", {c->pose.x, c->pose.y}}});
      o = world_.observe(sim::View::Wrist, c->pose);
      c = propose(o, target, a, k);
      if (!c) return not_attempted(a, k, "no grasp candidate in the wrist view", nullptr);
      if (!evaluate(o, *c, target, k)) return not_attempted(a, k, "grasp rejected twice", nullptr);
    }
    return execute(a, {sim::PrimitiveKind::Pick, target, "", c->pose, c->yaw, c->width, k}, nullptr);
  }

  bool attempt_place(const planner::GroundAction& a, std::size_t k) {
    const std::string& held = a.args[0];
    const std::string dest = a.args.size() >= 2 ? a.args[1] : sim::kTable;
    const auto o = world_.observe(sim::View::Shoulder);
    nlohmann::json queries = nlohmann::json::array();
    Vec2 release;
    if (dest == sim::kTable) {
      const auto* h = o.find(held);
      const double w = h ? h->w : 5.0, d = h ? h->d : 5.0;
      std::vector<Box> obstacles;
      for (const auto& x : o.objects)
        if (x.name != held) obstacles.push_back(x.footprint());
      const Vec2 preferred = h ? h->pose : Vec2{o.table.w / 2, o.table.d / 2};
      const auto spot = sim::find_free_spot(obstacles, w, d, o.table, preferred);
      if (!spot) return not_attempted(a, k, "no free spot on the table", &queries);
      release = *spot;
    } else {
      auto req = request(obs::RequestKind::DetectObject, o);
      req.query_object = dest;
      auto v = ask(req, queries);
      if (!v || !v->as<obs::DetectObjectVerdict>().found)
        return not_attempted(a, k, "destination not detected", &queries);
      const auto& det = v->as<obs::DetectObjectVerdict>();
      release = det.point;
      // Settle beside anything already inside the destination rather than on top of it.
      const Box region = det.box();
      const auto* h = o.find(held);
      std::vector<Box> contents;
      for (const auto& x : o.objects)
        if (x.name != held && x.name != dest && overlaps(x.footprint(), region)) contents.push_back(x.footprint());
      if (h && !contents.empty())
        if (auto spot = sim::find_free_spot_in(region, contents, h->w, h->d, det.point)) release = *spot;
    }
    return execute(a, {sim::PrimitiveKind::Place, held, dest, release, 0.0, 0.0, k}, &queries);
  }

  bool not_attempted(const planner::GroundAction& a, std::size_t k, const std::string& reason, nlohmann::json* queries) {
    nlohmann::json payload{{"step", k}, {"action", a.str()}, {"outcome", "not-attempted"}, {"counted", false},
                           {"reason", reason}};
    if (queries) payload["queries"] = *queries;
    trace_.add(EventKind::Executed, payload);
    return false;
  }

  bool execute(const planner::GroundAction& a, const sim::Primitive& p, nlohmann::json* queries) {
    nlohmann::json payload{{"step", p.step}, {"action", a.str()},
                           {"primitive",
                            {{"kind", sim::to_string(p.kind)},
                             {"target", p.target},
                             {"destination", p.destination},
                             {"pose_cm", {p.pose.x, p.pose.y}},
                             {"yaw_deg", std::round(p.yaw * 180.0 / std::numbers::pi)},
                             {"width_cm", p.width}}}};
    if (queries) payload["queries"] = *queries;
    try {
      const auto r = world_.execute(p);
      payload["outcome"] = sim::to_string(r.outcome);
      payload["counted"] = true;
      payload["affected"] = r.affected;
      nlohmann::json fired = nlohmann::json::array();
      for (const auto& d : r.fired) fired.push_back(sim::disturbance_to_json(d));
      payload["disturbances"] = fired;
    } catch (const sim::ExecutionError& e) {
      payload["outcome"] = "error";
      payload["counted"] = false;
      payload["error"] = e.what();
    }
    trace_.add(EventKind::Executed, payload);
    return true;
  }

  // ---- scoring ----

  void compute_reference() {
    try {
      true_goal_ = obs::true_goal(in_.instruction, catalog_of(world_.state()));
      reference_ = reference_plan(*in_.domain, world_.state(), in_.instruction, cfg_.search);
    } catch (const obs::UnknownTask&) {
      true_goal_.reset();
    }
  }

  void finish(const Ending& end) {
    nlohmann::json payload{{"claimed_success", end.claimed}, {"reason", end.reason}};
    payload["success"] = true_goal_ ? nlohmann::json(obs::conditions_hold(world_.state(), *true_goal_)) : nlohmann::json();
    payload["reference"] = reference_ ? nlohmann::json(*reference_) : nlohmann::json();
    std::size_t executed = 0;
    for (const auto& e : trace_.events) executed += e.kind == EventKind::Executed && e.payload.value("counted", false);
    payload["executed"] = executed;
    payload["observer_calls"] = trace_.calls;
    payload["tokens"] = trace_.tokens;
    trace_.add(EventKind::EpisodeEnd, payload);
    auto& end_payload = trace_.events.back().payload;
    if (auto in = score_input_from_trace(trace_)) {
      end_payload["score_input"] = {{"N", in->N}, {"N_done", in->N_done}, {"N_extra", in->N_extra}, {"p", in->p}};
      if (in->N > 0) {
        end_payload["score"] = bench::progress_score(*in);
      } else {
        end_payload["score"] = 0.0;
        end_payload["zero_actions"] = true;
      }
    } else {
      end_payload["score"] = nullptr;
    }
  }

  sim::World& world_;
  obs::Observer& observer_;
  const EpisodeInputs& in_;
  const AgentConfig& cfg_;
  Rng rng_;
  EpisodeTrace trace_;
  pddl::Conjunction goal_;
  std::optional<pddl::Conjunction> true_goal_;
  std::optional<std::vector<std::string>> reference_;
};

}  // namespace detail

// One closed-loop episode. Disturbances are scheduled on the world before the first step.
inline EpisodeTrace run_episode(sim::World& world, obs::Observer& observer, const EpisodeInputs& in,
                                const AgentConfig& cfg, std::vector<sim::Disturbance> disturbances = {}) {
  if (!in.domain) throw std::invalid_argument("run_episode requires a domain");
  world.schedule_disturbances(std::move(disturbances));
  return detail::Episode(world, observer, in, cfg).run();
}

}  // namespace deskagent::agent
