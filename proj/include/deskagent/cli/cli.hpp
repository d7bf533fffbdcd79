#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deskagent/agent/trace.hpp"
#include "deskagent/bench/harness.hpp"
#include "deskagent/bench/modules.hpp"
#include "deskagent/bench/suite.hpp"
#include "deskagent/observer/remote.hpp"
#include "deskagent/observer/scripted.hpp"
#include "deskagent/pddl/ground.hpp"
#include "deskagent/pddl/parser.hpp"
#include "deskagent/planner/search.hpp"

namespace deskagent::cli {

inline constexpr const char* kToolVersion = "0.4.0";

enum ExitCode : int { kOk = 0, kError = 1, kNoPlan = 2 };

namespace fs = std::filesystem;

inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Everything needed to reproduce a run; contains no timestamps or absolute output paths,
// so identical inputs give an identical file.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::map<std::string, std::string> corpus_hashes;  // path -> FNV-1a of contents
  std::uint64_t base_seed = 0;
  std::vector<std::string> artifacts;  // relative to the output directory
  std::string tool_version = kToolVersion;

  void hash_file(const std::string& key, const fs::path& p) { corpus_hashes[key] = hex64(fnv1a(read_text(p))); }
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  return {{"tool", "deskagent"},         {"tool_version", m.tool_version}, {"command", m.command},
          {"config", m.config},          {"corpus", m.corpus_hashes},      {"base_seed", m.base_seed},
          {"artifacts", m.artifacts}};
}

// Corpus-relative key for files under the corpus, the path as given otherwise.
inline std::string corpus_key(const bench::Corpus& corpus, const fs::path& p) {
  const auto rel = fs::path(p).lexically_relative(corpus.dir());
  return !rel.empty() && *rel.begin() != ".." ? rel.generic_string() : p.generic_string();
}

inline std::string episode_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode-%03zu.jsonl", i);
  return buf;
}

// ---- observers -------------------------------------------------------------------

struct ObserverArgs {
  std::string kind = "oracle";
  std::string endpoint;
  double timeout_s = 120.0;
  std::string script;  // scripted: a trace file, or a directory of episode-NNN.jsonl
};

inline nlohmann::json observer_to_json(const ObserverArgs& a) {
  nlohmann::json j{{"kind", a.kind}};
  if (a.kind == "remote") j["endpoint"] = a.endpoint, j["timeout_s"] = a.timeout_s;
  if (a.kind == "scripted") j["script"] = fs::path(a.script).filename().string();
  return j;
}

inline bench::ObserverFactory make_factory(const ObserverArgs& a) {
  if (a.kind == "oracle") return bench::oracle_factory();
  if (a.kind == "remote") {
    if (a.endpoint.empty()) throw bench::ConfigError("--observer remote needs --endpoint");
    obs::RemoteConfig rc;
    rc.endpoint = a.endpoint;
    rc.timeout_s = a.timeout_s;
    return [rc](const bench::RunSpec&, const sim::World&, std::uint64_t, std::size_t) {
      return std::make_unique<obs::RemoteObserver>(rc);
    };
  }
  if (a.kind == "scripted") {
    if (a.script.empty()) throw bench::ConfigError("--observer scripted needs --script");
    const fs::path script = a.script;
    if (!fs::exists(script)) throw bench::ConfigError("script not found: " + a.script);
    return [script](const bench::RunSpec&, const sim::World&, std::uint64_t, std::size_t index) {
      const auto file = fs::is_directory(script) ? script / episode_file(index) : script;
      return std::make_unique<obs::ScriptedObserver>(agent::recorded_verdicts(agent::from_jsonl(read_text(file))));
    };
  }
  throw bench::ConfigError("unknown observer '" + a.kind + "' (oracle, scripted, remote)");
}

// ---- plan ----------------------------------------------------------------------------

struct PlanArgs {
  std::string domain;
  std::string problem;
  std::string search = "astar";
  std::string out;
};

inline int cmd_plan(const PlanArgs& a, std::ostream& out, std::ostream& err) {
  pddl::DomainDef domain;
  pddl::ProblemDef problem;
  try {
    domain = pddl::parse_domain(read_text(a.domain));
  } catch (const pddl::PddlError& e) {
    err << a.domain << ":" << e.what() << "\n";
    return kError;
  }
  try {
    problem = pddl::parse_problem(read_text(a.problem), domain);
  } catch (const pddl::PddlError& e) {
    err << a.problem << ":" << e.what() << "\n";
    return kError;
  }
  planner::SearchConfig sc;
  if (a.search == "bfs") {
    sc.algorithm = planner::SearchAlgorithm::BreadthFirst;
  } else if (a.search != "astar") {
    err << "unknown search '" << a.search << "' (astar, bfs)\n";
    return kError;
  }
  const auto pr = planner::plan(pddl::ground(domain, problem), sc);
  if (!pr.found()) {
    err << "no plan: " << planner::to_string(pr.status) << " after " << pr.expanded << " expansions\n";
    return kNoPlan;
  }
  const auto text = planner::plan_to_json(pr.plan).dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    bench::write_text(a.out, text);
    err << pr.plan.cost() << "-step plan written to " << a.out << "\n";
  }
  return kOk;
}

// ---- run -------------------------------------------------------------------------------

struct RunArgs {
  std::string task;
  std::string scene;
  int protocol = 0;
  std::string checker = "full";
  std::string grasp_eval = "on";
  std::size_t episodes = 1;
  std::optional<std::uint64_t> seed;
  std::size_t retries = 2;
  std::size_t replans = 3;
  std::string failures = "default";
  obs::NoiseProfile noise;
  ObserverArgs observer;
  std::size_t jobs = 1;
  std::string out;
};

inline nlohmann::json episode_summary(const bench::EpisodeResult& r) {
  nlohmann::json j{{"index", r.index},       {"seed", r.seed},          {"success", r.success},
                   {"claimed", r.claimed},   {"completed", r.completed},   {"score", r.score},        {"executed", r.executed},
                   {"replans", r.replans},   {"view_switches", r.view_switches},
                   {"end_reason", r.end_reason}, {"tokens", r.tokens}, {"calls", r.calls}};
  j["failure_mode"] = r.failure_mode.empty() ? nlohmann::json() : nlohmann::json(r.failure_mode);
  return j;
}

inline int cmd_run(const RunArgs& a, std::ostream& err) {
  bench::Corpus corpus;
  bench::RunSpec spec;
  spec.label = "run";
  spec.task = a.task;
  const auto& task = obs::find_task(a.task);
  std::string scene = a.scene.empty() ? task.default_scene : a.scene;
  fs::path scene_path = corpus.dir() + "/scenes/" + scene + ".json";
  if (fs::is_regular_file(a.scene)) {
    scene_path = a.scene;
    corpus.add_scene(scene, obs::load_scene(a.scene));
  } else if (!fs::exists(scene_path)) {
    throw bench::ConfigError("unknown scene '" + scene + "'");
  }
  spec.scene = scene;
  spec.protocol = a.protocol;
  spec.episodes = a.episodes;
  spec.agent.checker = agent::checker_from_string(a.checker);
  spec.agent.grasp_eval = bench::on_off(nlohmann::json(a.grasp_eval));
  spec.agent.max_action_retries = a.retries;
  spec.agent.max_replans = a.replans;
  spec.failures = bench::failures_from_json(nlohmann::json(a.failures));
  spec.oracle.noise = a.noise;
  spec.oracle.noise.validate();
  const auto factory = make_factory(a.observer);

  std::uint64_t seed;
  if (a.seed) {
    seed = *a.seed;
  } else {
    std::random_device rd;
    seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    err << "seed: " << seed << " (generated; pass --seed " << seed << " to repeat)\n";
  }

  RunManifest m;
  m.command = "run";
  m.config = bench::spec_to_json(spec);
  m.config["observer"] = observer_to_json(a.observer);
  m.base_seed = seed;
  m.hash_file(corpus_key(corpus, scene_path), scene_path);
  const fs::path domain_path = obs::domain_path(task.domain);
  m.hash_file(corpus_key(corpus, domain_path), domain_path);
  if (a.observer.kind == "scripted" && fs::is_regular_file(a.observer.script))
    m.hash_file(corpus_key(corpus, a.observer.script), a.observer.script);
  for (std::size_t i = 0; i < a.episodes; ++i) m.artifacts.push_back(episode_file(i));
  m.artifacts.push_back("summary.json");

  const fs::path out = a.out;
  fs::create_directories(out);
  bench::write_text(out / "manifest.json", manifest_to_json(m).dump(2) + "\n");

  const auto results = bench::run_spec(spec, corpus, seed, factory, a.jobs, true);
  nlohmann::json episodes = nlohmann::json::array();
  for (const auto& r : results) {
    bench::write_text(out / episode_file(r.index), agent::to_jsonl(r.trace));
    episodes.push_back(episode_summary(r));
  }
  auto summary = bench::summary_to_json(bench::summarize(spec.label, spec.task, results));
  summary["episodes_detail"] = episodes;
  summary["observer"] = a.observer.kind;
  bench::write_text(out / "summary.json", summary.dump(2) + "\n");
  err << results.size() << " episode(s), success " << bench::fmt(summary["success_rate_pct"].get<double>(), 1)
      << "%, mean score " << bench::fmt(summary["mean_score"].get<double>()) << "; traces in " << out.string() << "\n";
  return kOk;
}

// ---- bench -----------------------------------------------------------------------------

struct BenchArgs {
  std::string suite;
  std::optional<std::uint64_t> seed;
  ObserverArgs observer;
  std::size_t jobs = 1;
  std::string out;
};

inline int cmd_bench(const BenchArgs& a, std::ostream& err) {
  bench::Corpus corpus;
  fs::path suite_path = a.suite;
  if (!fs::exists(suite_path) && fs::exists(corpus.dir() + "/suites/" + a.suite + ".json"))
    suite_path = corpus.dir() + "/suites/" + a.suite + ".json";
  const auto cfg = bench::load_suite(suite_path.string());
  if (!a.seed && !cfg.base_seed) throw bench::ConfigError("bench needs --seed (or base_seed in the suite file)");
  const std::uint64_t seed = a.seed ? *a.seed : *cfg.base_seed;
  if (a.observer.kind == "scripted") throw bench::ConfigError("bench supports the oracle and remote observers");
  const auto factory = make_factory(a.observer);
  bench::ModuleObserverFactory module_factory = bench::oracle_module_factory(cfg.module_oracle);
  if (a.observer.kind == "remote") {
    obs::RemoteConfig rc;
    rc.endpoint = a.observer.endpoint;
    rc.timeout_s = a.observer.timeout_s;
    module_factory = [rc](const std::string&, std::size_t, std::uint64_t) {
      return std::make_unique<obs::RemoteObserver>(rc);
    };
  }

  RunManifest m;
  m.command = "bench";
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : cfg.runs) runs.push_back(bench::spec_to_json(r));
  m.config = {{"suite", cfg.name}, {"runs", runs}, {"observer", observer_to_json(a.observer)}};
  if (cfg.modules) m.config["modules"] = {{"dir", cfg.modules->dir}, {"trials", cfg.modules->trials}};
  m.base_seed = seed;
  m.hash_file(corpus_key(corpus, suite_path), suite_path);
  for (const auto& r : cfg.runs) {
    const auto& task = obs::find_task(r.task);
    const fs::path d = obs::domain_path(task.domain);
    const fs::path s = obs::scene_path(r.scene.empty() ? task.default_scene : r.scene);
    m.hash_file(corpus_key(corpus, d), d);
    m.hash_file(corpus_key(corpus, s), s);
  }
  if (cfg.modules) {
    fs::path dir = cfg.modules->dir;
    if (dir.is_relative()) dir = fs::path(corpus.dir()) / dir;
    if (!fs::is_directory(dir)) throw bench::CorpusMissing("module corpus not found: " + dir.string());
    for (const char* module : bench::kModules)
      if (fs::exists(dir / (std::string(module) + ".jsonl")))
        m.hash_file(corpus_key(corpus, dir / (std::string(module) + ".jsonl")), dir / (std::string(module) + ".jsonl"));
  }
  m.artifacts = {"report.csv", "modules.csv", "summary.json"};
  const fs::path out = a.out;
  fs::create_directories(out);
  bench::write_text(out / "manifest.json", manifest_to_json(m).dump(2) + "\n");

  const auto rep = bench::run_suite(cfg, corpus, seed, factory, module_factory, a.jobs, a.observer.kind);
  bench::write_reports(out, rep);
  err << cfg.name << ": " << rep.runs.size() << " configuration(s), " << rep.modules.size()
      << " module row(s); reports in " << out.string() << "\n";
  return kOk;
}

// ---- replay ----------------------------------------------------------------------------

inline std::string event_line(const agent::Event& e) {
  const auto& p = e.payload;
  auto str = [&](const char* k) { return p.contains(k) && p[k].is_string() ? p[k].get<std::string>() : std::string(); };
  auto flag = [&](const char* k) { return p.contains(k) && !p[k].is_null() ? p[k].dump() : std::string("?"); };
  std::string s;
  switch (e.kind) {
    case agent::EventKind::ParseRequested: s = p.contains("goal") ? "goal " + str("goal") : "failed " + str("error"); break;
    case agent::EventKind::PlanProduced:
      s = str("status") + ", " + std::to_string(p.value("steps", nlohmann::json::array()).size()) + " steps";
      break;
    case agent::EventKind::PrecondCheck:
    case agent::EventKind::EffectCheck:
      s = str("action") + " success=" + flag("success") + " truth=" + flag("truth");
      break;
    case agent::EventKind::GraspProposed:
      s = str("action") + " [" + str("view") + "] " + (p["candidate"].is_null() ? str("reason") : p["candidate"].dump());
      break;
    case agent::EventKind::GraspVerdict: s = "[" + str("view") + "] accept=" + flag("accept") + " truth=" + flag("truth"); break;
    case agent::EventKind::ViewSwitch: s = str("from") + " -> " + str("to"); break;
    case agent::EventKind::Executed: s = str("action") + " " + str("outcome"); break;
    case agent::EventKind::Replan: s = "#" + flag("replan") + " after " + str("reason"); break;
    case agent::EventKind::GoalCheck: s = "satisfied=" + flag("satisfied") + " truth=" + flag("truth"); break;
    case agent::EventKind::EpisodeEnd:
      s = str("reason") + " success=" + flag("success") + " score=" + flag("score");
      break;
  }
  char head[48];
  std::snprintf(head, sizeof head, "%4llu  %-15s ", static_cast<unsigned long long>(e.clock), agent::to_string(e.kind));
  return head + s;
}

struct ReplayArgs {
  std::string trace;
  bool quiet = false;
  bool reconstruct = false;
};

inline int cmd_replay(const ReplayArgs& a, std::ostream& out, std::ostream& err) {
  agent::EpisodeTrace t;
  try {
    t = agent::from_jsonl(read_text(a.trace));
  } catch (const std::exception& e) {
    err << a.trace << ": corrupt trace: " << e.what() << "\n";
    return kError;
  }
  if (!a.quiet)
    for (const auto& e : t.events) out << event_line(e) << "\n";
  const auto& end = t.end_event()->payload;
  const auto in = agent::score_input_from_trace(t);
  if (!in) {
    out << "score: n/a (no reference plan)\n";
  } else {
    const double recomputed = in->N > 0 ? bench::progress_score(*in) : 0.0;
    const bool have = end.contains("score") && end["score"].is_number();
    out << "score: " << bench::fmt(recomputed, 6) << " (N=" << in->N << " done=" << in->N_done
        << " extra=" << in->N_extra << " p=" << in->p << ")\n";
    if (!have || end["score"].get<double>() != recomputed) {
      err << a.trace << ": stored score " << (have ? end["score"].dump() : "missing") << " differs from recomputed "
          << recomputed << "\n";
      return kError;
    }
  }
  if (a.reconstruct) {
    if (!end.contains("episode")) {
      err << a.trace << ": trace carries no episode configuration\n";
      return kError;
    }
    const auto& ep = end["episode"];
    auto spec = bench::run_from_json(ep.at("config"));
    spec.label = "replay";
    spec.episodes = 1;
    bench::Corpus corpus;
    if (fs::is_regular_file(spec.scene)) corpus.add_scene(spec.scene, obs::load_scene(spec.scene));
    const auto verdicts = agent::recorded_verdicts(t);
    bench::ObserverFactory factory = [&](const bench::RunSpec&, const sim::World&, std::uint64_t, std::size_t) {
      return std::make_unique<obs::ScriptedObserver>(verdicts);
    };
    const auto r = bench::run_one(spec, corpus, ep.at("seed").get<std::uint64_t>(),
                                  ep.at("index").get<std::size_t>(), factory, true);
    if (agent::deterministic_jsonl(r.trace) != agent::deterministic_jsonl(t)) {
      err << a.trace << ": reconstruction with the recorded verdicts diverges\n";
      return kError;
    }
    out << "reconstruction: identical (" << verdicts.size() << " recorded verdicts)\n";
  }
  return kOk;
}

// ---- gen-modules -------------------------------------------------------------------------

struct GenModulesArgs {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t episodes_per_config = 3;
  bench::ModuleCounts counts;
};

inline int cmd_gen_modules(const GenModulesArgs& a, std::ostream& err) {
  if (!a.seed) throw bench::ConfigError("gen-modules needs --seed");
  bench::Corpus corpus;
  const auto mc = bench::generate_module_corpus(corpus, *a.seed, a.counts, a.episodes_per_config);
  const std::string dir = a.out.empty() ? corpus.dir() + "/modules" : a.out;
  bench::write_module_corpus(dir, mc);
  for (const auto& [module, items] : mc) {
    std::size_t positives = 0;
    for (const auto& m : items) positives += m.label;
    err << module << ": " << items.size() << " instances (" << positives << " labelled true)\n";
  }
  return kOk;
}

// ---- entry point -----------------------------------------------------------------------

inline void add_observer_options(CLI::App* cmd, ObserverArgs& o) {
  cmd->add_option("--observer", o.kind, "oracle | scripted | remote")->capture_default_str();
  cmd->add_option("--endpoint", o.endpoint, "remote observer base URL");
  cmd->add_option("--timeout", o.timeout_s, "remote request timeout in seconds")->capture_default_str();
  cmd->add_option("--script", o.script, "trace file or directory of traces replayed by the scripted observer");
}

// Exit codes: 0 success, 1 usage/config/IO/infrastructure error, 2 no plan (plan only).
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Closed-loop tabletop manipulation agent: planning, simulation and benchmarks"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "TOML/INI file with option values");
  app.require_subcommand(1);

  PlanArgs plan;
  auto* p = app.add_subcommand("plan", "solve a PDDL problem");
  p->add_option("--domain", plan.domain, "domain file")->required();
  p->add_option("--problem", plan.problem, "problem file")->required();
  p->add_option("--search", plan.search, "astar | bfs")->capture_default_str();
  p->add_option("--out", plan.out, "plan JSON path (stdout when omitted)");

  RunArgs run;
  std::uint64_t run_seed = 0;
  auto* r = app.add_subcommand("run", "run agent episodes and write traces");
  r->add_option("--task", run.task, "task id or instruction")->required();
  r->add_option("--scene", run.scene, "corpus scene name or scene JSON file");
  r->add_option("--protocol", run.protocol, "disturbance protocol 0-4")->capture_default_str();
  r->add_option("--checker", run.checker, "none | goal | full")->capture_default_str();
  r->add_option("--grasp-eval", run.grasp_eval, "on | off")->capture_default_str();
  r->add_option("--episodes", run.episodes, "number of episodes")->capture_default_str()->check(CLI::PositiveNumber);
  auto* seed_opt = r->add_option("--seed", run_seed, "base seed (generated and logged when omitted)");
  r->add_option("--retries", run.retries, "retries per action")->capture_default_str();
  r->add_option("--replans", run.replans, "replans per episode")->capture_default_str();
  r->add_option("--failures", run.failures, "execution failure model: default | none")->capture_default_str();
  r->add_option("--noise-parse", run.noise.parse, "oracle parse error probability");
  r->add_option("--noise-check", run.noise.check, "oracle condition-check flip probability");
  r->add_option("--noise-grasp", run.noise.grasp, "oracle grasp-evaluation flip probability");
  r->add_option("--noise-detect", run.noise.detect, "oracle detection error probability");
  r->add_option("--noise-goal", run.noise.goal, "oracle goal-check flip probability");
  r->add_flag("--hallucinate", run.noise.hallucination, "oracle denies holding after picks");
  add_observer_options(r, run.observer);
  r->add_option("--jobs", run.jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  r->add_option("--out", run.out, "output directory")->required();

  BenchArgs bench_args;
  std::uint64_t bench_seed = 0;
  auto* b = app.add_subcommand("bench", "run a benchmark suite and write reports");
  b->add_option("suite", bench_args.suite, "suite JSON file or corpus suite name")->required();
  auto* bench_seed_opt = b->add_option("--seed", bench_seed, "base seed");
  add_observer_options(b, bench_args.observer);
  b->add_option("--jobs", bench_args.jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--out", bench_args.out, "output directory")->required();

  ReplayArgs replay;
  auto* rp = app.add_subcommand("replay", "print a trace timeline and re-check its score");
  rp->add_option("trace", replay.trace, "episode trace (JSONL)")->required();
  rp->add_flag("--quiet", replay.quiet, "only print the score");
  rp->add_flag("--reconstruct", replay.reconstruct, "rerun the episode on the recorded verdicts and compare");

  GenModulesArgs gen;
  std::uint64_t gen_seed = 0;
  auto* g = app.add_subcommand("gen-modules", "harvest labelled module-benchmark instances from rollouts");
  auto* gen_seed_opt = g->add_option("--seed", gen_seed, "seed")->required();
  g->add_option("--out", gen.out, "output directory (default: corpus modules/)");
  g->add_option("--episodes-per-config", gen.episodes_per_config, "rollouts per harvest configuration")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }

  try {
    if (*p) return cmd_plan(plan, out, err);
    if (*r) {
      if (*seed_opt) run.seed = run_seed;
      return cmd_run(run, err);
    }
    if (*b) {
      if (*bench_seed_opt) bench_args.seed = bench_seed;
      return cmd_bench(bench_args, err);
    }
    if (*rp) return cmd_replay(replay, out, err);
    if (*g) {
      if (*gen_seed_opt) gen.seed = gen_seed;
      return cmd_gen_modules(gen, err);
    }
  } catch (const obs::RemoteError& e) {
    err << "error: remote observer: " << e.what() << "\n";
    return kError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}

}  // namespace deskagent::cli
