#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deskagent/bench/harness.hpp"
#include "deskagent/bench/modules.hpp"

namespace deskagent::bench {

struct ModuleSuite {
  std::string dir = "modules";  // relative paths resolve against the corpus directory
  std::size_t trials = 3;
};

struct SuiteConfig {
  std::string name;
  std::optional<std::uint64_t> base_seed;
  std::vector<RunSpec> runs;
  std::optional<ModuleSuite> modules;
  obs::OracleConfig module_oracle;
};

// A run entry with a "matrix" object expands into the cartesian product of its lists.
inline std::vector<nlohmann::json> expand_matrix(const nlohmann::json& entry) {
  if (!entry.contains("matrix")) return {entry};
  const auto& m = entry["matrix"];
  if (!m.is_object() || m.empty()) throw ConfigError("matrix must be a non-empty object of lists");
  std::vector<nlohmann::json> out{entry};
  out[0].erase("matrix");
  for (const auto& [key, values] : m.items()) {
    if (key == "matrix" || key == "label" || !run_keys().count(key))
      throw ConfigError("matrix: unknown field '" + key + "'");
    if (!values.is_array() || values.empty()) throw ConfigError("matrix." + key + " must be a non-empty list");
    std::vector<nlohmann::json> next;
    for (const auto& base : out)
      for (const auto& v : values) {
        auto e = base;
        e[key] = v;
        next.push_back(std::move(e));
      }
    out = std::move(next);
  }
  if (entry.contains("label"))
    for (auto& e : out) {
      std::string label = entry["label"].get<std::string>();
      for (const auto& [key, values] : m.items()) label += "/" + (e[key].is_string() ? e[key].get<std::string>() : e[key].dump());
      e["label"] = label;
    }
  return out;
}

inline SuiteConfig suite_from_json(const nlohmann::json& j) {
  static const std::set<std::string> keys{"name", "base_seed", "defaults", "runs", "modules", "description"};
  if (!j.is_object()) throw ConfigError("suite config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError("unknown suite field '" + k + "'");
  SuiteConfig c;
  c.name = j.value("name", "suite");
  if (j.contains("base_seed")) c.base_seed = j["base_seed"].get<std::uint64_t>();
  const auto defaults = j.value("defaults", nlohmann::json::object());
  for (const auto& entry : j.value("runs", nlohmann::json::array())) {
    nlohmann::json merged = defaults;
    merged.update(entry);
    for (const auto& e : expand_matrix(merged)) c.runs.push_back(run_from_json(e));
  }
  std::set<std::string> labels;
  for (const auto& r : c.runs)
    if (!labels.insert(r.label).second) throw ConfigError("duplicate run label '" + r.label + "'");
  if (j.contains("modules")) {
    const auto& m = j["modules"];
    ModuleSuite ms;
    ms.dir = m.value("dir", ms.dir);
    ms.trials = m.value("trials", ms.trials);
    if (ms.trials == 0) throw ConfigError("modules.trials must be positive");
    if (m.contains("noise")) c.module_oracle.noise = obs::noise_from_json(m["noise"]);
    c.modules = ms;
  }
  return c;
}

inline SuiteConfig load_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open suite config " + path);
  try {
    return suite_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---- running and reporting -------------------------------------------------------

struct RunReport {
  RunSpec spec;
  RunSummary summary;
  std::vector<EpisodeResult> episodes;
};

struct SuiteReport {
  std::string name;
  std::uint64_t base_seed = 0;
  std::string observer;
  std::vector<RunReport> runs;
  std::vector<ModuleRow> modules;
};

// Every run uses seeds base_seed + i, so configurations are compared on the same scenes
// and failure draws.
inline SuiteReport run_suite(const SuiteConfig& cfg, Corpus& corpus, std::uint64_t base_seed,
                             const ObserverFactory& factory, const ModuleObserverFactory& module_factory,
                             std::size_t jobs = 1, const std::string& observer_name = "oracle") {
  SuiteReport rep;
  rep.name = cfg.name;
  rep.base_seed = base_seed;
  rep.observer = observer_name;
  for (const auto& spec : cfg.runs) {
    auto results = run_spec(spec, corpus, base_seed, factory, jobs);
    std::sort(results.begin(), results.end(), [](const EpisodeResult& a, const EpisodeResult& b) {
      return std::tie(a.task, a.label, a.seed) < std::tie(b.task, b.label, b.seed);
    });
    rep.runs.push_back({spec, summarize(spec.label, spec.task, results), std::move(results)});
  }
  if (cfg.modules) {
    auto dir = cfg.modules->dir;
    if (std::filesystem::path(dir).is_relative()) dir = corpus.dir() + "/" + dir;
    rep.modules = evaluate_modules(load_module_corpus(dir), module_factory, cfg.modules->trials, base_seed);
  }
  return rep;
}

inline std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline constexpr const char* kReportColumns[] = {
    "pipeline",       "task",          "scene",      "protocol",           "checker",
    "grasp_eval",     "episodes",      "success_rate_pct", "completion_rate_pct", "mean_score",   "sd_score",
    "mean_score_clamped", "mean_actions", "mean_view_switches", "mean_time_ms", "mean_tokens"};

inline constexpr const char* kModuleColumns[] = {"module",  "instances",  "trials",          "sr_pct",
                                                 "time_ms", "tokens",     "pointing_sr_pct", "bbox_iou_pct"};

template <std::size_t N>
std::string csv_header(const char* const (&cols)[N]) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + std::string(cols[i]);
  return out + "\n";
}

inline std::string report_csv(const SuiteReport& rep) {
  std::ostringstream out;
  out << csv_header(kReportColumns);
  for (const auto& r : rep.runs) {
    const auto& s = r.summary;
    out << r.spec.label << ',' << r.spec.task << ','
        << (r.spec.scene.empty() ? obs::find_task(r.spec.task).default_scene : r.spec.scene) << ',' << r.spec.protocol
        << ',' << agent::to_string(r.spec.agent.checker) << ',' << (r.spec.agent.grasp_eval ? "on" : "off") << ','
        << s.episodes << ',' << fmt(s.success_rate, 1) << ',' << fmt(s.completion_rate, 1) << ',' << fmt(s.mean_score) << ',' << fmt(s.sd_score) << ','
        << fmt(s.mean_score_clamped) << ',' << fmt(s.mean_executed, 2) << ',' << fmt(s.mean_view_switches, 2) << ','
        << fmt(s.mean_wall_ms, 2) << ',' << fmt(s.mean_tokens, 1) << '\n';
  }
  return out.str();
}

inline std::string modules_csv(const SuiteReport& rep) {
  std::ostringstream out;
  out << csv_header(kModuleColumns);
  for (const auto& m : rep.modules) {
    out << m.module << ',' << m.instances << ',' << m.trials << ',' << fmt(m.sr_pct, 1) << ','
        << fmt(m.mean_latency_ms, 2) << ',' << fmt(m.mean_tokens, 1) << ','
        << (m.pointing_sr_pct ? fmt(*m.pointing_sr_pct, 1) : "") << ','
        << (m.bbox_iou_pct ? fmt(*m.bbox_iou_pct, 1) : "") << '\n';
  }
  return out.str();
}

inline nlohmann::json summary_json(const SuiteReport& rep) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : rep.runs) {
    auto j = summary_to_json(r.summary);
    j["config"] = spec_to_json(r.spec);
    runs.push_back(j);
  }
  nlohmann::json modules = nlohmann::json::array();
  for (const auto& m : rep.modules) modules.push_back(module_row_to_json(m));
  return {{"suite", rep.name},
          {"base_seed", rep.base_seed},
          {"observer", rep.observer},
          {"token_source", rep.observer == "remote" ? "reported" : "synthetic"},
          {"runs", runs},
          {"modules", modules}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

inline void write_reports(const std::filesystem::path& dir, const SuiteReport& rep) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.csv", report_csv(rep));
  write_text(dir / "modules.csv", modules_csv(rep));
  write_text(dir / "summary.json", summary_json(rep).dump(2) + "\n");
}

}  // namespace deskagent::bench
