#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deskagent/bench/detector.hpp"
#include "deskagent/bench/harness.hpp"
#include "deskagent/observer/messages.hpp"
#include "deskagent/observer/oracle.hpp"
#include "deskagent/observer/truth.hpp"
#include "deskagent/pddl/parser.hpp"

namespace deskagent::bench {

inline constexpr const char* kModules[] = {"parser", "checker", "detector", "grasp", "goal"};

inline std::optional<obs::RequestKind> module_kind(const std::string& module) {
  if (module == "parser") return obs::RequestKind::ParseTask;
  if (module == "checker") return obs::RequestKind::CheckConditions;
  if (module == "detector") return obs::RequestKind::DetectObject;
  if (module == "grasp") return obs::RequestKind::EvaluateGrasp;
  if (module == "goal") return obs::RequestKind::CheckGoal;
  return std::nullopt;
}

inline const char* module_of(obs::RequestKind k) {
  switch (k) {
    case obs::RequestKind::ParseTask: return "parser";
    case obs::RequestKind::CheckConditions: return "checker";
    case obs::RequestKind::DetectObject: return "detector";
    case obs::RequestKind::EvaluateGrasp: return "grasp";
    case obs::RequestKind::CheckGoal: return "goal";
  }
  return "?";
}

class CorpusMissing : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One labeled module query. `label` is the correct yes/no answer for checker, grasp and
// goal instances; detector instances carry the annotated mask and box instead, parser
// instances the goal the instruction denotes.
struct ModuleInstance {
  std::string id;
  std::string module;
  nlohmann::json source;
  obs::ObserverRequest request;
  bool label = true;
  std::optional<Box> truth_box;
  std::vector<Box> mask;
  std::string truth_goal;
};

inline nlohmann::json box_to_json(const Box& b) { return {b.min_x(), b.min_y(), b.max_x(), b.max_y()}; }

inline Box box_from_json(const nlohmann::json& j) {
  return from_corners(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>());
}

inline nlohmann::json instance_to_json(const ModuleInstance& m) {
  nlohmann::json j{{"id", m.id}, {"module", m.module}, {"source", m.source}, {"label", m.label},
                   {"request", obs::request_to_json(m.request)}};
  if (m.truth_box) j["truth_box"] = box_to_json(*m.truth_box);
  if (!m.mask.empty()) {
    j["mask"] = nlohmann::json::array();
    for (const auto& c : m.mask) j["mask"].push_back(box_to_json(c));
  }
  if (!m.truth_goal.empty()) j["truth_goal"] = m.truth_goal;
  return j;
}

inline ModuleInstance instance_from_json(const nlohmann::json& j) {
  ModuleInstance m;
  m.id = j.at("id").get<std::string>();
  m.module = j.at("module").get<std::string>();
  m.source = j.value("source", nlohmann::json::object());
  m.label = j.value("label", true);
  m.request = obs::request_from_json(j.at("request"));
  if (module_kind(m.module) != m.request.kind)
    throw std::invalid_argument(m.id + ": request kind does not match module " + m.module);
  if (j.contains("truth_box")) m.truth_box = box_from_json(j["truth_box"]);
  if (j.contains("mask"))
    for (const auto& c : j["mask"]) m.mask.push_back(box_from_json(c));
  m.truth_goal = j.value("truth_goal", "");
  if (m.module == "detector" && !m.truth_box) throw std::invalid_argument(m.id + ": detector instance lacks truth_box");
  if (m.module == "parser" && m.truth_goal.empty()) throw std::invalid_argument(m.id + ": parser instance lacks truth_goal");
  return m;
}

using ModuleCorpus = std::map<std::string, std::vector<ModuleInstance>>;

inline ModuleCorpus load_module_corpus(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw CorpusMissing("module corpus not found: " + dir);
  ModuleCorpus out;
  for (const char* module : kModules) {
    const auto path = dir + "/" + module + ".jsonl";
    std::ifstream in(path);
    if (!in) continue;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (line.empty()) continue;
      try {
        out[module].push_back(instance_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& e) {
        throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }
  return out;
}

inline void write_module_corpus(const std::string& dir, const ModuleCorpus& corpus) {
  std::filesystem::create_directories(dir);
  for (const auto& [module, items] : corpus) {
    std::ofstream out(dir + "/" + module + ".jsonl");
    for (const auto& m : items) out << instance_to_json(m).dump() << '\n';
    if (!out) throw std::runtime_error("cannot write " + dir + "/" + module + ".jsonl");
  }
}

// Annotated mask of a box footprint as unit cells clipped to the footprint.
inline std::vector<Box> rasterize(const Box& b, double res = 1.0) {
  std::vector<Box> cells;
  for_each_cell(b, res, [&](Vec2 c) {
    const Box cell{c, res, res};
    const double x0 = std::max(cell.min_x(), b.min_x()), x1 = std::min(cell.max_x(), b.max_x());
    const double y0 = std::max(cell.min_y(), b.min_y()), y1 = std::min(cell.max_y(), b.max_y());
    if (x1 > x0 && y1 > y0) cells.push_back({{(x0 + x1) / 2, (y0 + y1) / 2}, x1 - x0, y1 - y0});
  });
  return cells;
}

// ---- harvesting ----------------------------------------------------------

// Passes queries through to `inner` while labeling each request against the live world.
class RecordingObserver : public obs::Observer {
 public:
  RecordingObserver(std::unique_ptr<obs::Observer> inner, const sim::World& world, nlohmann::json source,
                    std::vector<ModuleInstance>& sink)
      : inner_(std::move(inner)), world_(world), source_(std::move(source)), sink_(sink) {}

  std::string name() const override { return inner_->name(); }

  obs::ObserverVerdict query(const obs::ObserverRequest& req) override {
    record(req);
    return inner_->query(req);
  }

 private:
  void record(const obs::ObserverRequest& req) {
    ModuleInstance m;
    m.module = module_of(req.kind);
    m.source = source_;
    m.request = req;
    const auto& w = world_.state();
    switch (req.kind) {
      case obs::RequestKind::ParseTask:
        m.truth_goal = pddl::to_string(obs::true_goal(req.instruction, agent::catalog_of(w)));
        break;
      case obs::RequestKind::CheckConditions: m.label = obs::conditions_hold(w, *req.conditions); break;
      case obs::RequestKind::EvaluateGrasp:
        m.label = obs::grasp_is_good(world_, *req.candidate, req.query_object, obs::kGraspTolerance);
        break;
      case obs::RequestKind::DetectObject: {
        auto it = w.objects.find(req.query_object);
        if (it == w.objects.end() || w.occluded(req.query_object) || !req.observation.find(req.query_object)) return;
        m.truth_box = it->second.footprint();
        m.mask = rasterize(*m.truth_box);
        break;
      }
      case obs::RequestKind::CheckGoal: m.label = obs::goal_holds(w, req.instruction); break;
    }
    sink_.push_back(std::move(m));
  }

  std::unique_ptr<obs::Observer> inner_;
  const sim::World& world_;
  nlohmann::json source_;
  std::vector<ModuleInstance>& sink_;
};

struct ModuleCounts {
  std::size_t parser = 13;
  std::size_t checker = 61;
  std::size_t grasp = 50;
  std::size_t detector = 21;
  std::size_t goal = 16;

  std::size_t of(const std::string& module) const {
    if (module == "parser") return parser;
    if (module == "checker") return checker;
    if (module == "grasp") return grasp;
    if (module == "detector") return detector;
    return goal;
  }
};

// Rollout configurations whose queries feed the module corpora.
inline std::vector<RunSpec> harvest_specs(std::size_t episodes = 3) {
  struct Row {
    const char* task;
    const char* scene;
    int protocol;
  };
  const Row rows[] = {
      {"sorting", "sorting-3", 0},      {"sorting", "sorting-3", 2},   {"sorting", "sorting-4", 3},
      {"sorting", "sorting-5", 0},      {"sorting", "sorting-6", 2},   {"sorting", "sorting-7", 0},
      {"sorting", "cluster-a", 0},      {"sorting", "cluster-b", 0},   {"sorting", "cluster-c", 2},
      {"stacking-3", "stacking-3", 4},  {"stacking-4", "stacking-4", 0}, {"stacking-4-alt", "stacking-4", 4},
      {"kitchen-a", "kitchen-a", 0},    {"kitchen-b", "kitchen-b", 0}, {"kitchen-c", "kitchen-c", 0},
  };
  std::vector<RunSpec> out;
  for (const auto& r : rows)
    for (auto mode : {agent::CheckerMode::Full, agent::CheckerMode::GoalOnly}) {
      RunSpec s;
      s.label = std::string("harvest-") + agent::to_string(mode);
      s.task = r.task;
      s.scene = r.scene;
      s.protocol = r.protocol;
      s.episodes = episodes;
      s.agent.checker = mode;
      out.push_back(s);
    }
  return out;
}

namespace detail {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

// Draws `n` items, roughly `negatives` of them with label false when available.
inline std::vector<ModuleInstance> draw(std::vector<ModuleInstance> pool, std::size_t n, std::size_t negatives, Rng& rng) {
  std::vector<ModuleInstance> pos, neg;
  for (auto& m : pool) (m.label ? pos : neg).push_back(std::move(m));
  shuffle(pos, rng);
  shuffle(neg, rng);
  const std::size_t take_neg = std::min({negatives, neg.size(), n});
  const std::size_t take_pos = std::min(pos.size(), n - take_neg);
  std::vector<ModuleInstance> out(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(take_neg));
  out.insert(out.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(take_pos));
  for (std::size_t i = take_neg; out.size() < n && i < neg.size(); ++i) out.push_back(neg[i]);
  shuffle(out, rng);
  return out;
}

}  // namespace detail

// Rolls out the harvest configurations with a perfect oracle and real execution failures,
// labels every query from ground truth, and samples the module corpora from the pool.
inline ModuleCorpus generate_module_corpus(Corpus& corpus, std::uint64_t seed, const ModuleCounts& counts = {},
                                           std::size_t episodes_per_config = 3) {
  std::vector<ModuleInstance> pool;
  std::uint64_t base = seed;
  for (const auto& spec : harvest_specs(episodes_per_config)) {
    ObserverFactory factory = [&pool](const RunSpec& s, const sim::World& world, std::uint64_t ep_seed, std::size_t) {
      auto inner = std::make_unique<obs::OracleObserver>(s.oracle, mix_seed(ep_seed, 1), &world);
      nlohmann::json source{{"task", s.task}, {"scene", s.scene}, {"protocol", s.protocol},
                            {"checker", agent::to_string(s.agent.checker)}, {"seed", ep_seed}};
      return std::make_unique<RecordingObserver>(std::move(inner), world, source, pool);
    };
    run_spec(spec, corpus, base, factory, 1);
    base += spec.episodes;
  }

  std::map<std::string, std::vector<ModuleInstance>> by_module;
  std::set<std::string> seen;
  for (auto& m : pool) {
    // Parser instances are one per task and scene; other modules drop exact repeats.
    const std::string key = m.module == "parser" ? m.module + m.source["task"].dump() + m.source["scene"].dump()
                                                 : obs::request_to_json(m.request).dump();
    if (seen.insert(key).second) by_module[m.module].push_back(std::move(m));
  }

  Rng rng(mix_seed(seed, 7));
  ModuleCorpus out;
  for (const char* module : kModules) {
    const std::size_t n = counts.of(module);
    auto& items = by_module[module];
    std::vector<ModuleInstance> chosen;
    if (std::string(module) == "detector") {
      // Keep a share of close-up (wrist view) inputs.
      // draw() balances on the label, so mark wrist views false for the draw only.
      for (auto& m : items) m.label = m.request.observation.view != sim::View::Wrist;
      chosen = detail::draw(std::move(items), n, n / 3, rng);
      for (auto& m : chosen) m.label = true;
    } else if (std::string(module) == "parser") {
      chosen = detail::draw(std::move(items), n, 0, rng);
    } else {
      chosen = detail::draw(std::move(items), n, n * 2 / 5, rng);
    }
    std::sort(chosen.begin(), chosen.end(), [](const ModuleInstance& a, const ModuleInstance& b) {
      return a.source.dump() < b.source.dump();
    });
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s-%03zu", module, i + 1);
      chosen[i].id = buf;
    }
    out[module] = std::move(chosen);
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------

// One observer per (module, trial); it answers that module's instances in corpus order.
using ModuleObserverFactory =
    std::function<std::unique_ptr<obs::Observer>(const std::string& module, std::size_t trial, std::uint64_t seed)>;

inline ModuleObserverFactory oracle_module_factory(obs::OracleConfig cfg) {
  return [cfg](const std::string&, std::size_t, std::uint64_t seed) {
    return std::make_unique<obs::OracleObserver>(cfg, seed);
  };
}

struct ModuleRow {
  std::string module;
  std::size_t instances = 0;
  std::size_t trials = 0;
  double sr_pct = 0.0;  // pointing SR for the detector
  double mean_latency_ms = 0.0;
  double mean_tokens = 0.0;
  std::optional<double> pointing_sr_pct;
  std::optional<double> bbox_iou_pct;
};

inline bool instance_correct(const ModuleInstance& m, const obs::ObserverVerdict& v, double* iou_out = nullptr) {
  switch (m.request.kind) {
    case obs::RequestKind::ParseTask: {
      try {
        // The instance's own request carries the domain the problem must parse against.
        const auto domain = pddl::parse_domain(*m.request.domain_text);
        const auto problem = pddl::parse_problem(v.as<obs::ParseTaskVerdict>().problem_pddl, domain);
        return obs::same_goal(problem.goal, pddl::parse_formula(m.truth_goal));
      } catch (const pddl::PddlError&) {
        return false;
      }
    }
    case obs::RequestKind::CheckConditions: return v.as<obs::CheckConditionsVerdict>().success == m.label;
    case obs::RequestKind::EvaluateGrasp: return v.as<obs::EvaluateGraspVerdict>().accept == m.label;
    case obs::RequestKind::CheckGoal: return v.as<obs::CheckGoalVerdict>().satisfied == m.label;
    case obs::RequestKind::DetectObject: {
      const auto& d = v.as<obs::DetectObjectVerdict>();
      if (!d.found) {
        if (iou_out) *iou_out = 0.0;
        return false;
      }
      const auto s = detector_metrics(d.point, d.box(), m.mask, *m.truth_box);
      if (iou_out) *iou_out = s.iou;
      return s.point_in_mask;
    }
  }
  return false;
}

// Success rate, latency and tokens per module, averaged over `trials` passes.
// A schema violation counts as a wrong answer.
inline std::vector<ModuleRow> evaluate_modules(const ModuleCorpus& corpus, const ModuleObserverFactory& factory,
                                               std::size_t trials, std::uint64_t seed) {
  std::vector<ModuleRow> rows;
  std::size_t mi = 0;
  for (const char* module : kModules) {
    ++mi;
    auto it = corpus.find(module);
    if (it == corpus.end() || it->second.empty()) continue;
    ModuleRow row;
    row.module = module;
    row.instances = it->second.size();
    row.trials = trials;
    double correct = 0.0, iou_sum = 0.0, latency = 0.0, tokens = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      auto observer = factory(module, t, mix_seed(seed, mi * 1000 + t));
      for (const auto& m : it->second) {
        double iou_v = 0.0;
        try {
          const auto v = observer->query(m.request);
          latency += v.cost.latency_ms;
          tokens += static_cast<double>(v.cost.tokens);
          correct += instance_correct(m, v, &iou_v);
        } catch (const obs::SchemaError&) {
        }
        iou_sum += iou_v;
      }
    }
    const double n = static_cast<double>(row.instances * trials);
    if (n > 0) {
      row.sr_pct = 100.0 * correct / n;
      row.mean_latency_ms = latency / n;
      row.mean_tokens = tokens / n;
      if (row.module == "detector") {
        row.pointing_sr_pct = row.sr_pct;
        row.bbox_iou_pct = 100.0 * iou_sum / n;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json module_row_to_json(const ModuleRow& r) {
  nlohmann::json j{{"module", r.module},   {"instances", r.instances},       {"trials", r.trials},
                   {"sr_pct", r.sr_pct},   {"latency_ms", r.mean_latency_ms}, {"tokens", r.mean_tokens}};
  j["pointing_sr_pct"] = r.pointing_sr_pct ? nlohmann::json(*r.pointing_sr_pct) : nlohmann::json();
  j["bbox_iou_pct"] = r.bbox_iou_pct ? nlohmann::json(*r.bbox_iou_pct) : nlohmann::json();
  return j;
}

}  // namespace deskagent::bench
