#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "deskagent/agent/classify.hpp"
#include "deskagent/agent/episode.hpp"
#include "deskagent/bench/protocols.hpp"
#include "deskagent/bench/score.hpp"
#include "deskagent/observer/oracle.hpp"
#include "deskagent/observer/tasks.hpp"
#include "deskagent/pddl/parser.hpp"
#include "deskagent/rng.hpp"
#include "deskagent/sim/world.hpp"

namespace deskagent::bench {

// One configuration row of a suite.
struct RunSpec {
  std::string label;
  std::string task;
  std::string scene;  // empty: the task's default scene
  int protocol = 0;
  std::size_t episodes = 20;
  agent::AgentConfig agent;
  obs::OracleConfig oracle;
  sim::FailureModel failures;
  sim::ObservationConfig observation;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- run configuration as JSON ------------------------------------------------

inline sim::FailureModel failures_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "none") return sim::FailureModel::none();
    if (j.get<std::string>() == "default") return {};
    throw ConfigError("failures: expected \"none\", \"default\" or an object");
  }
  sim::FailureModel f;
  f.p_missed_grasp = j.value("p_missed_grasp", f.p_missed_grasp);
  f.p_slip_during_transfer = j.value("p_slip_during_transfer", f.p_slip_during_transfer);
  f.p_wrong_object_when_crowded = j.value("p_wrong_object_when_crowded", f.p_wrong_object_when_crowded);
  f.crowd_radius = j.value("crowd_radius", f.crowd_radius);
  f.validate();
  return f;
}

inline nlohmann::json failures_to_json(const sim::FailureModel& f) {
  return {{"p_missed_grasp", f.p_missed_grasp},
          {"p_slip_during_transfer", f.p_slip_during_transfer},
          {"p_wrong_object_when_crowded", f.p_wrong_object_when_crowded},
          {"crowd_radius", f.crowd_radius}};
}

inline const std::set<std::string>& run_keys() {
  static const std::set<std::string> keys{
      "label",       "task",     "scene",           "protocol",         "episodes",        "checker",
      "grasp_eval",  "max_action_retries", "max_replans", "effect_check_only", "grasp_candidates",
      "failures",    "noise",    "grasp_tolerance", "observation",      "matrix"};
  return keys;
}

inline bool on_off(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string() && (v == "on" || v == "off")) return v == "on";
  throw ConfigError("grasp_eval: expected true/false or \"on\"/\"off\"");
}

inline RunSpec run_from_json(const nlohmann::json& j) {
  for (const auto& [k, v] : j.items())
    if (k == "matrix" || !run_keys().count(k)) throw ConfigError("unknown run field '" + k + "'");
  RunSpec s;
  try {
    s.task = j.at("task").get<std::string>();
    obs::find_task(s.task);
    s.scene = j.value("scene", "");
    s.protocol = j.value("protocol", 0);
    s.episodes = j.value("episodes", s.episodes);
    if (j.contains("checker")) s.agent.checker = agent::checker_from_string(j["checker"].get<std::string>());
    if (j.contains("grasp_eval")) s.agent.grasp_eval = on_off(j["grasp_eval"]);
    s.agent.max_action_retries = j.value("max_action_retries", s.agent.max_action_retries);
    s.agent.max_replans = j.value("max_replans", s.agent.max_replans);
    s.agent.effect_check_only = j.value("effect_check_only", s.agent.effect_check_only);
    s.agent.grasp.k = j.value("grasp_candidates", s.agent.grasp.k);
    if (j.contains("failures")) s.failures = failures_from_json(j["failures"]);
    if (j.contains("noise")) s.oracle.noise = obs::noise_from_json(j["noise"]);
    s.oracle.grasp_tolerance = j.value("grasp_tolerance", s.oracle.grasp_tolerance);
    if (j.contains("observation")) {
      const auto& o = j["observation"];
      s.observation.shoulder_sigma = o.value("shoulder_sigma", s.observation.shoulder_sigma);
      s.observation.wrist_sigma = o.value("wrist_sigma", s.observation.wrist_sigma);
      s.observation.wrist_radius = o.value("wrist_radius", s.observation.wrist_radius);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run entry: ") + e.what());
  }
  if (s.agent.grasp.k == 0) throw ConfigError("grasp_candidates must be positive");
  if (j.contains("label")) {
    s.label = j["label"].get<std::string>();
  } else {
    s.label = s.task + "/" + agent::to_string(s.agent.checker) + "/grasp-" + (s.agent.grasp_eval ? "on" : "off");
    if (s.protocol) s.label += "/p" + std::to_string(s.protocol);
    if (!s.scene.empty()) s.label += "@" + s.scene;
  }
  return s;
}

// Inverse of run_from_json.
inline nlohmann::json spec_to_json(const RunSpec& s) {
  return {{"label", s.label},
          {"task", s.task},
          {"scene", s.scene},
          {"protocol", s.protocol},
          {"episodes", s.episodes},
          {"checker", agent::to_string(s.agent.checker)},
          {"grasp_eval", s.agent.grasp_eval},
          {"max_action_retries", s.agent.max_action_retries},
          {"max_replans", s.agent.max_replans},
          {"effect_check_only", s.agent.effect_check_only},
          {"grasp_candidates", s.agent.grasp.k},
          {"failures", failures_to_json(s.failures)},
          {"noise", obs::noise_to_json(s.oracle.noise)},
          {"grasp_tolerance", s.oracle.grasp_tolerance},
          {"observation",
           {{"shoulder_sigma", s.observation.shoulder_sigma},
            {"wrist_sigma", s.observation.wrist_sigma},
            {"wrist_radius", s.observation.wrist_radius}}}};
}

// Domains and scenes loaded once and shared read-only between workers.
class Corpus {
 public:
  explicit Corpus(std::string dir = obs::corpus_dir()) : dir_(std::move(dir)) {}

  struct Domain {
    pddl::DomainDef def;
    std::string text;
  };

  // Scenes given by file path are registered under that path.
  void add_scene(const std::string& name, sim::Scene scene) {
    std::lock_guard lock(mu_);
    scenes_.insert_or_assign(name, std::move(scene));
  }

  const Domain& domain(const std::string& name) {
    std::lock_guard lock(mu_);
    auto it = domains_.find(name);
    if (it == domains_.end()) {
      auto text = obs::read_file(dir_ + "/pddl/" + name + "-domain.pddl");
      it = domains_.emplace(name, Domain{pddl::parse_domain(text), text}).first;
    }
    return it->second;
  }

  const sim::Scene& scene(const std::string& name) {
    std::lock_guard lock(mu_);
    auto it = scenes_.find(name);
    if (it == scenes_.end()) it = scenes_.emplace(name, obs::load_scene(dir_ + "/scenes/" + name + ".json")).first;
    return it->second;
  }

  const std::string& dir() const noexcept { return dir_; }

 private:
  std::string dir_;
  std::mutex mu_;
  std::map<std::string, Domain> domains_;
  std::map<std::string, sim::Scene> scenes_;
};

using ObserverFactory =
    std::function<std::unique_ptr<obs::Observer>(const RunSpec&, const sim::World&, std::uint64_t seed, std::size_t index)>;

inline ObserverFactory oracle_factory() {
  return [](const RunSpec& spec, const sim::World& world, std::uint64_t seed, std::size_t) {
    return std::make_unique<obs::OracleObserver>(spec.oracle, mix_seed(seed, 1), &world);
  };
}

struct EpisodeResult {
  std::string label;
  std::string task;
  std::string scene;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool success = false;    // the true goal holds at the end
  bool claimed = false;    // the agent reported success
  bool completed = false;  // both: the trial ran to a verified end
  std::optional<ScoreInput> input;
  double score = 0.0;
  std::size_t executed = 0;
  std::size_t view_switches = 0;
  std::size_t replans = 0;
  std::string failure_mode;  // empty on success
  std::string end_reason;
  std::size_t tokens = 0;
  double observer_ms = 0.0;
  double wall_ms = 0.0;
  std::map<std::string, std::size_t> calls;
  agent::EpisodeTrace trace;  // kept only when requested
};

inline EpisodeResult summarize_trace(const RunSpec& spec, const std::string& scene, std::size_t index,
                                     std::uint64_t seed, agent::EpisodeTrace trace, bool keep) {
  EpisodeResult r;
  r.label = spec.label;
  r.task = spec.task;
  r.scene = scene;
  r.index = index;
  r.seed = seed;
  const auto& end = trace.end_event()->payload;
  r.success = agent::truly_succeeded(trace);
  r.claimed = end.value("claimed_success", false);
  r.completed = r.success && r.claimed;
  r.end_reason = end.value("reason", "");
  r.input = agent::score_input_from_trace(trace);
  r.score = end.contains("score") && end["score"].is_number() ? end["score"].get<double>() : 0.0;
  r.executed = end.value("executed", std::size_t{0});
  r.view_switches = trace.count(agent::EventKind::ViewSwitch);
  r.replans = trace.count(agent::EventKind::Replan);
  if (!r.success) r.failure_mode = agent::to_string(agent::classify_failure(trace));
  r.tokens = trace.tokens;
  r.observer_ms = trace.observer_ms;
  r.wall_ms = trace.wall_ms;
  r.calls = trace.calls;
  if (keep) r.trace = std::move(trace);
  return r;
}

inline EpisodeResult run_one(const RunSpec& spec, Corpus& corpus, std::uint64_t seed, std::size_t index,
                             const ObserverFactory& factory, bool keep_trace = false) {
  const auto& task = obs::find_task(spec.task);
  const std::string scene_name = spec.scene.empty() ? task.default_scene : spec.scene;
  const auto& domain = corpus.domain(task.domain);
  sim::World world(corpus.scene(scene_name), spec.failures, seed, spec.observation);
  std::vector<sim::Disturbance> disturbances;
  if (spec.protocol != 0) {
    const auto ref = agent::reference_plan(domain.def, world.state(), task.text, spec.agent.search);
    if (!ref) throw std::runtime_error("task " + task.id + " has no plan on scene " + scene_name);
    disturbances = make_protocol(spec.protocol, world.state(), *ref).disturbances;
  }
  auto observer = factory(spec, world, seed, index);
  agent::EpisodeInputs in{&domain.def, domain.text, task.text, mix_seed(seed, 2)};
  auto trace = agent::run_episode(world, *observer, in, spec.agent, disturbances);
  // Enough to rerun the episode from the trace alone.
  auto config = spec_to_json(spec);
  config.erase("label");
  config.erase("episodes");
  config["scene"] = scene_name;
  trace.events.back().payload["episode"] = {{"index", index}, {"seed", seed}, {"config", config}};
  return summarize_trace(spec, scene_name, index, seed, std::move(trace), keep_trace);
}

// Runs `spec.episodes` episodes with seeds base_seed + i over `jobs` workers.
// Results come back in episode order regardless of scheduling.
inline std::vector<EpisodeResult> run_spec(const RunSpec& spec, Corpus& corpus, std::uint64_t base_seed,
                                           const ObserverFactory& factory, std::size_t jobs = 1,
                                           bool keep_traces = false) {
  std::vector<EpisodeResult> out(spec.episodes);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < spec.episodes;) {
      try {
        out[i] = run_one(spec, corpus, base_seed + i, i, factory, keep_traces);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = spec.episodes;
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, spec.episodes));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

struct RunSummary {
  std::string label;
  std::string task;
  std::size_t episodes = 0;
  double success_rate = 0.0;  // percent
  double completion_rate = 0.0;  // percent
  double mean_score = 0.0;
  double sd_score = 0.0;
  double mean_score_clamped = 0.0;
  double mean_executed = 0.0;
  double mean_view_switches = 0.0;
  double mean_wall_ms = 0.0;
  double mean_tokens = 0.0;
  std::map<std::string, std::size_t> failure_modes;
};

inline RunSummary summarize(const std::string& label, const std::string& task, const std::vector<EpisodeResult>& rs) {
  RunSummary s;
  s.label = label;
  s.task = task;
  s.episodes = rs.size();
  if (rs.empty()) return s;
  const double n = static_cast<double>(rs.size());
  for (const auto& r : rs) {
    s.success_rate += r.success;
    s.completion_rate += r.completed;
    s.mean_score += r.score;
    s.mean_score_clamped += std::max(0.0, r.score);
    s.mean_executed += static_cast<double>(r.executed);
    s.mean_view_switches += static_cast<double>(r.view_switches);
    s.mean_wall_ms += r.wall_ms;
    s.mean_tokens += static_cast<double>(r.tokens);
    if (!r.failure_mode.empty()) ++s.failure_modes[r.failure_mode];
  }
  s.success_rate = 100.0 * s.success_rate / n;
  s.completion_rate = 100.0 * s.completion_rate / n;
  s.mean_score /= n;
  s.mean_score_clamped /= n;
  s.mean_executed /= n;
  s.mean_view_switches /= n;
  s.mean_wall_ms /= n;
  s.mean_tokens /= n;
  if (rs.size() > 1) {
    double ss = 0.0;
    for (const auto& r : rs) ss += (r.score - s.mean_score) * (r.score - s.mean_score);
    s.sd_score = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

inline nlohmann::json summary_to_json(const RunSummary& s) {
  return {{"label", s.label},
          {"task", s.task},
          {"episodes", s.episodes},
          {"success_rate_pct", s.success_rate},
          {"completion_rate_pct", s.completion_rate},
          {"mean_score", s.mean_score},
          {"sd_score", s.sd_score},
          {"mean_score_clamped", s.mean_score_clamped},
          {"mean_executed", s.mean_executed},
          {"mean_view_switches", s.mean_view_switches},
          {"mean_tokens", s.mean_tokens},
          {"failure_modes", s.failure_modes},
          {"wall_ms", s.mean_wall_ms}};
}

}  // namespace deskagent::bench
