#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "deskagent/observer/messages.hpp"
#include "deskagent/observer/tasks.hpp"
#include "deskagent/observer/truth.hpp"
#include "deskagent/pddl/emit.hpp"
#include "deskagent/pddl/parser.hpp"
#include "deskagent/rng.hpp"

namespace deskagent::obs {

// Per-kind probability that the oracle answers wrongly.
struct NoiseProfile {
  double parse = 0.0;
  double check = 0.0;
  double grasp = 0.0;
  double detect = 0.0;
  double goal = 0.0;
  bool hallucination = false;  // effect checks report "not holding" even after a good pick

  static NoiseProfile perfect() { return {}; }

  void validate() const {
    for (double p : {parse, check, grasp, detect, goal})
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("noise probability outside [0,1]");
  }
};

inline nlohmann::json noise_to_json(const NoiseProfile& n) {
  return {{"parse", n.parse},   {"check", n.check}, {"grasp", n.grasp},
          {"detect", n.detect}, {"goal", n.goal},   {"hallucination", n.hallucination}};
}

inline NoiseProfile noise_from_json(const nlohmann::json& j) {
  NoiseProfile n;
  n.parse = j.value("parse", 0.0);
  n.check = j.value("check", 0.0);
  n.grasp = j.value("grasp", 0.0);
  n.detect = j.value("detect", 0.0);
  n.goal = j.value("goal", 0.0);
  n.hallucination = j.value("hallucination", false);
  n.validate();
  return n;
}

struct OracleConfig {
  NoiseProfile noise;
  double grasp_tolerance = kGraspTolerance;  // largest collision fraction judged acceptable
};

// Answers from ground truth, then flips answers with the configured probabilities.
// One instance serves one episode; its random stream is that episode's.
class OracleObserver : public Observer {
 public:
  OracleObserver(OracleConfig cfg, std::uint64_t seed, const sim::World* world = nullptr)
      : cfg_(cfg), rng_(seed), world_(world) {
    cfg_.noise.validate();
  }

  std::string name() const override { return "oracle"; }

  ObserverVerdict query(const ObserverRequest& req) override {
    req.validate();
    ObserverVerdict v;
    switch (req.kind) {
      case RequestKind::ParseTask: v.body = parse_task(req); break;
      case RequestKind::CheckConditions: v.body = check_conditions(req); break;
      case RequestKind::EvaluateGrasp: v.body = evaluate_grasp(req); break;
      case RequestKind::DetectObject: v.body = detect(req); break;
      case RequestKind::CheckGoal: v.body = check_goal(req); break;
    }
    return v;
  }

 private:
  ParseTaskVerdict parse_task(const ObserverRequest& req) {
    const auto domain = pddl::parse_domain(*req.domain_text);
    const auto& task = find_task(req.instruction);
    auto problem =
        build_problem(domain, task.id, req.observation.catalog, req.observation.relations, task.goal(req.observation.catalog));
    ParseTaskVerdict b;
    b.reasoning = "goal from the '" + task.id + "' template; init from the observed relations";
    if (rng_.bernoulli(cfg_.noise.parse) && !problem.goal.empty()) {
      const std::size_t i = rng_.index(problem.goal.size());
      auto& atom = problem.goal[i].atom;
      if (atom.args.size() == 2 && rng_.bernoulli(0.5)) {
        std::swap(atom.args[0], atom.args[1]);
      } else {
        problem.goal.erase(problem.goal.begin() + static_cast<std::ptrdiff_t>(i));
      }
    }
    for (const auto& o : problem.objects) {
      std::string desc;
      if (const auto* seen = req.observation.find(o.name)) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s at (%.1f, %.1f) cm", o.type.c_str(), seen->pose.x, seen->pose.y);
        desc = buf;
      } else {
        desc = o.type + ", not visible";
      }
      b.objects_identified.push_back({o.name, o.type, desc});
    }
    b.updated_domain = *req.domain_text;
    b.problem_pddl = pddl::emit(problem);
    return b;
  }

  CheckConditionsVerdict check_conditions(const ObserverRequest& req) {
    const auto& conds = *req.conditions;
    auto truth = leaf_truth(sim::to_symbolic(req.observation), conds);
    if (cfg_.noise.hallucination && req.phase == "effect")
      for (std::size_t i = 0; i < conds.size(); ++i)
        if (conds[i].atom.predicate == "holding" && !conds[i].negated) truth[i] = false;
    const bool all = std::all_of(truth.begin(), truth.end(), [](bool b) { return b; });
    if (rng_.bernoulli(cfg_.noise.check)) {
      if (all) {
        if (!truth.empty()) truth[rng_.index(truth.size())] = false;
      } else {
        std::fill(truth.begin(), truth.end(), true);
      }
    }
    CheckConditionsVerdict b;
    for (std::size_t i = 0; i < conds.size(); ++i) {
      b.conditions_analysis.push_back({conds[i].str(), static_cast<bool>(truth[i]), truth[i] ? "holds in the scene" : "not observed"});
      if (!truth[i]) b.failed_conditions.push_back(conds[i].str());
    }
    b.success = b.failed_conditions.empty();
    b.reasoning = b.success ? "all conditions hold" : std::to_string(b.failed_conditions.size()) + " condition(s) fail";
    return b;
  }

  EvaluateGraspVerdict evaluate_grasp(const ObserverRequest& req) {
    const auto& c = *req.candidate;
    bool good = world_ ? grasp_is_good(*world_, c, req.query_object, cfg_.grasp_tolerance)
                       : grasp_looks_good(req.observation, c, req.query_object, cfg_.grasp_tolerance);
    if (rng_.bernoulli(cfg_.noise.grasp)) good = !good;
    return {good, good ? "jaws close on " + req.query_object + " without contact"
                       : "grasp would miss " + req.query_object + " or disturb a neighbour"};
  }

  DetectObjectVerdict detect(const ObserverRequest& req) {
    const auto& obs = req.observation;
    const sim::ObservedObject* hit = obs.find(req.query_object);
    const bool flip = rng_.bernoulli(cfg_.noise.detect);
    DetectObjectVerdict b;
    if (!hit) {
      b.reasoning = req.query_object + " is not visible";
      return b;
    }
    if (flip) {
      const sim::ObservedObject* other = nullptr;
      for (const auto& o : obs.objects)
        if (o.name != hit->name && !o.held && (!other || distance(o.pose, hit->pose) < distance(other->pose, hit->pose)))
          other = &o;
      if (other) hit = other;
    }
    const double m = detect_margin(obs.view);
    b.found = true;
    b.point = hit->pose;
    b.set_box({hit->pose, hit->w + 2 * m, hit->d + 2 * m});
    b.reasoning = "located " + req.query_object;
    return b;
  }

  CheckGoalVerdict check_goal(const ObserverRequest& req) {
    const auto goal = true_goal(req.instruction, req.observation.catalog);
    bool ok = sim::to_symbolic(req.observation).satisfies(goal);
    if (rng_.bernoulli(cfg_.noise.goal)) ok = !ok;
    return {ok, ok ? "the scene matches the instruction" : "the scene does not match the instruction"};
  }

  OracleConfig cfg_;
  Rng rng_;
  const sim::World* world_;
};

}  // namespace deskagent::obs
