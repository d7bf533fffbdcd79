#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "deskagent/bench/detector.hpp"
#include "deskagent/bench/reliability.hpp"
#include "deskagent/bench/suite.hpp"
#include "deskagent/cli/cli.hpp"

using namespace deskagent;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("deskagent-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "deskagent");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string corpus(const std::string& rel) { return obs::corpus_dir() + "/" + rel; }

// Area by counting cell centres of a `h` lattice; exact when corners lie on the lattice.
double grid_area(const Box& b, const Box* other, double h) {
  const double lo_x = other ? std::max(b.min_x(), other->min_x()) : b.min_x();
  const double hi_x = other ? std::min(b.max_x(), other->max_x()) : b.max_x();
  const double lo_y = other ? std::max(b.min_y(), other->min_y()) : b.min_y();
  const double hi_y = other ? std::min(b.max_y(), other->max_y()) : b.max_y();
  std::size_t n = 0;
  for (double x = -h / 2; x < 40.0; x += h)
    for (double y = -h / 2; y < 40.0; y += h)
      n += x > lo_x && x < hi_x && y > lo_y && y < hi_y;
  return static_cast<double>(n) * h * h;
}

double grid_iou(const Box& a, const Box& b, double h) {
  const double inter = grid_area(a, &b, h);
  return inter / (grid_area(a, nullptr, h) + grid_area(b, nullptr, h) - inter);
}

}  // namespace

// ---- progress score -----------------------------------------------------------------

TEST(Score, WorkedExamples) {
  EXPECT_DOUBLE_EQ(bench::progress_score({6, 6, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(bench::progress_score({8, 6, 2, 1}), 0.4);
  EXPECT_DOUBLE_EQ(bench::progress_score({4, 0, 4, 1}), -1.1);
}

TEST(Score, UndefinedWithoutActions) {
  EXPECT_THROW(bench::progress_score({0, 0, 0, 0}), bench::ZeroActions);
  EXPECT_THROW(bench::progress_score({3, 1, 0, 2}), std::invalid_argument);
}

TEST(Score, MonotoneOnRandomInputs) {
  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    bench::ScoreInput in;
    in.N = 1 + rng.index(40);
    in.N_done = rng.index(in.N + 1);
    in.N_extra = rng.index(in.N - in.N_done + 1);
    in.p = rng.bernoulli(0.5) ? 1 : 0;
    const double s = bench::progress_score(in);
    if (in.N_done + in.N_extra <= in.N) {
      EXPECT_GE(s, -1.1 - 1e-12);
      EXPECT_LE(s, 1.0 + 1e-12);
    }
    if (in.N_done < in.N) {
      auto up = in;
      ++up.N_done;
      EXPECT_GT(bench::progress_score(up), s);
    }
    auto extra = in;
    ++extra.N_extra;
    EXPECT_LT(bench::progress_score(extra), s);
    if (in.p == 0) {
      auto pen = in;
      pen.p = 1;
      EXPECT_LT(bench::progress_score(pen), s);
    }
  }
}

// ---- required sequence alignment ----------------------------------------------------

TEST(Alignment, PerfectExecution) {
  const std::vector<std::string> ref{"(pick a)", "(place a b)"};
  const auto a = bench::required_sequence_match({{"(pick a)", true}, {"(place a b)", true}}, ref);
  EXPECT_EQ(a, (bench::Alignment{2, 0}));
}

TEST(Alignment, MissedGraspCountsOnlyInN) {
  const std::vector<std::string> ref{"(pick a)", "(place a b)"};
  const auto in = bench::score_input({{"(pick a)", false}, {"(pick a)", true}, {"(place a b)", true}}, ref, 0);
  EXPECT_EQ(in.N, 3u);
  EXPECT_EQ(in.N_done, 2u);
  EXPECT_EQ(in.N_extra, 0u);
  EXPECT_DOUBLE_EQ(bench::progress_score(in), 2.0 / 3.0);
}

TEST(Alignment, SpuriousPairIsExtra) {
  const std::vector<std::string> ref{"(pick a)", "(place a b)"};
  const auto a = bench::required_sequence_match(
      {{"(pick c)", true}, {"(place c table)", true}, {"(pick a)", true}, {"(place a b)", true}}, ref);
  EXPECT_EQ(a, (bench::Alignment{2, 2}));
}

TEST(Alignment, OutOfOrderStepIsExtra) {
  const std::vector<std::string> ref{"(pick a)", "(place a b)", "(pick c)", "(place c d)"};
  const auto a = bench::required_sequence_match(
      {{"(pick c)", true}, {"(place c d)", true}, {"(pick a)", true}, {"(place a b)", true}}, ref);
  EXPECT_EQ(a, (bench::Alignment{2, 2}));
}

// ---- detector metrics ---------------------------------------------------------------

TEST(Detector, OneSeventhOffset) {
  const Box pred = from_corners(0, 0, 2, 2), truth = from_corners(1, 1, 3, 3);
  const auto s = bench::detector_metrics({0.5, 0.5}, pred, bench::rasterize(truth), truth);
  EXPECT_NEAR(s.iou, 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(grid_iou(pred, truth, 0.25), 1.0 / 7.0, 1e-12);
  EXPECT_FALSE(s.point_in_mask);
}

TEST(Detector, IdenticalAndDisjoint) {
  const Box a = from_corners(1, 1, 4, 3), b = from_corners(10, 10, 12, 12);
  EXPECT_DOUBLE_EQ(bench::detector_metrics(a.center, a, bench::rasterize(a), a).iou, 1.0);
  const auto s = bench::detector_metrics(b.center, b, bench::rasterize(a), a);
  EXPECT_DOUBLE_EQ(s.iou, 0.0);
  EXPECT_FALSE(s.point_in_mask);
  EXPECT_TRUE(bench::detector_metrics(a.center, b, bench::rasterize(a), a).point_in_mask);
}

TEST(Detector, DegenerateTruthRejected) {
  const Box flat = from_corners(1, 1, 1, 4);
  EXPECT_THROW(bench::detector_metrics({1, 1}, flat, {}, flat), bench::DegenerateRegion);
}

TEST(Detector, IouMatchesGridOracle) {
  Rng rng(77);
  auto coord = [&] { return 0.5 * static_cast<double>(rng.index(40)); };
  auto rect = [&] {
    double x0 = coord(), x1 = coord(), y0 = coord(), y1 = coord();
    if (x0 == x1) x1 += 0.5;
    if (y0 == y1) y1 += 0.5;
    return from_corners(std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1));
  };
  std::size_t overlapping = 0;
  for (int i = 0; i < 100; ++i) {
    const Box a = rect(), b = rect();
    const double v = iou(a, b);
    EXPECT_NEAR(v, grid_iou(a, b, 0.5), 1e-12) << i;
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    overlapping += v > 0.0;
  }
  EXPECT_GT(overlapping, 20u);
}

TEST(Detector, RasterCoversBox) {
  const Box b = from_corners(2.5, 1.0, 6.0, 3.5);
  double area = 0.0;
  for (const auto& c : bench::rasterize(b)) area += c.area();
  EXPECT_NEAR(area, b.area(), 1e-9);
}

// ---- compounding reliability ----------------------------------------------------------

TEST(Reliability, AnalyticValues) {
  EXPECT_DOUBLE_EQ(bench::compound_reliability(0.9, 6, 0).analytic, 0.531441);
  EXPECT_DOUBLE_EQ(bench::compound_reliability(0.5, 6, 0).analytic, 0.015625);
  EXPECT_DOUBLE_EQ(bench::compound_reliability(1.0, 9, 100).analytic, 1.0);
  EXPECT_DOUBLE_EQ(bench::compound_reliability(1.0, 9, 100).monte_carlo, 1.0);
  EXPECT_DOUBLE_EQ(bench::compound_reliability(0.3, 0, 10).analytic, 1.0);
  EXPECT_THROW(bench::compound_reliability(1.2, 6, 1), std::invalid_argument);
}

TEST(Reliability, MonteCarloConverges) {
  for (double p : {0.9, 0.5}) {
    const auto r = bench::compound_reliability(p, 6, 100000, 5);
    EXPECT_NEAR(r.monte_carlo, r.analytic, 0.01) << p;
  }
}

// ---- suites --------------------------------------------------------------------------

TEST(Suite, MatrixExpands) {
  const auto s = bench::load_suite(corpus("suites/ablation-checker.json"));
  ASSERT_EQ(s.runs.size(), 12u);
  EXPECT_EQ(s.base_seed, 6000u);
  EXPECT_EQ(s.runs.front().label, "sorting/none/1");
  EXPECT_EQ(s.runs.back().label, "stacking/full/4");
  EXPECT_EQ(s.runs.back().protocol, 4);
  EXPECT_EQ(s.runs.back().agent.checker, agent::CheckerMode::Full);
  EXPECT_EQ(s.runs.front().failures.p_missed_grasp, 0.0);
}

TEST(Suite, EveryCorpusSuiteParses) {
  for (const auto& e : fs::directory_iterator(corpus("suites"))) {
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(bench::load_suite(e.path().string()));
  }
}

TEST(Suite, RejectsBadConfigs) {
  using nlohmann::json;
  EXPECT_THROW(bench::suite_from_json(json::parse(R"({"runs":[{"task":"sorting","label":"x"},{"task":"sorting","label":"x"}]})")),
               bench::ConfigError);
  EXPECT_THROW(bench::suite_from_json(json::parse(R"({"runz":[]})")), bench::ConfigError);
  EXPECT_THROW(bench::suite_from_json(json::parse(R"({"runs":[{"task":"sorting","matrix":{"colour":[1]}}]})")),
               bench::ConfigError);
  EXPECT_THROW(bench::suite_from_json(json::parse(R"({"runs":[{"task":"sorting","checker":"sometimes"}]})")),
               std::invalid_argument);
}

TEST(Suite, SpecRoundTrips) {
  for (const auto& r : bench::load_suite(corpus("suites/ablation-grasp.json")).runs) {
    const auto again = bench::run_from_json(bench::spec_to_json(r));
    EXPECT_EQ(bench::spec_to_json(again), bench::spec_to_json(r));
  }
}

TEST(Suite, EmptySuiteGivesHeaderOnlyReports) {
  bench::Corpus c;
  const auto s = bench::load_suite(corpus("suites/empty.json"));
  const auto rep = bench::run_suite(s, c, 0, bench::oracle_factory(), bench::oracle_module_factory({}));
  EXPECT_EQ(bench::report_csv(rep), bench::csv_header(bench::kReportColumns));
  EXPECT_EQ(bench::modules_csv(rep), bench::csv_header(bench::kModuleColumns));
  EXPECT_TRUE(bench::summary_json(rep)["runs"].empty());
}

TEST(Suite, DeterministicAcrossWorkerCounts) {
  auto s = bench::suite_from_json(nlohmann::json::parse(
      R"({"name":"t","runs":[{"label":"s","task":"sorting","episodes":6,"matrix":{"checker":["goal","full"]}}]})"));
  bench::Corpus c;
  const auto a = bench::run_suite(s, c, 900, bench::oracle_factory(), bench::oracle_module_factory({}), 1);
  const auto b = bench::run_suite(s, c, 900, bench::oracle_factory(), bench::oracle_module_factory({}), 3);
  ASSERT_EQ(a.runs.size(), b.runs.size());
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].summary.mean_score, b.runs[i].summary.mean_score);
    EXPECT_EQ(a.runs[i].summary.success_rate, b.runs[i].summary.success_rate);
    for (std::size_t e = 0; e < a.runs[i].episodes.size(); ++e) EXPECT_EQ(a.runs[i].episodes[e].seed, 900 + e);
  }
}

// ---- module benchmark --------------------------------------------------------------------

TEST(Modules, ShippedCorpusSizes) {
  const auto m = bench::load_module_corpus(corpus("modules"));
  EXPECT_EQ(m.at("checker").size(), 61u);
  EXPECT_EQ(m.at("grasp").size(), 50u);
  EXPECT_EQ(m.at("detector").size(), 21u);
  EXPECT_EQ(m.at("goal").size(), 16u);
  EXPECT_EQ(m.at("parser").size(), 13u);
  for (const auto& [module, items] : m)
    for (const auto& i : items) {
      EXPECT_EQ(i.module, module);
      EXPECT_EQ(bench::instance_to_json(bench::instance_from_json(bench::instance_to_json(i))), bench::instance_to_json(i));
    }
}

TEST(Modules, PerfectOracleScores) {
  const auto rows = bench::evaluate_modules(bench::load_module_corpus(corpus("modules")), bench::oracle_module_factory({}), 2, 1);
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) {
    SCOPED_TRACE(r.module);
    if (r.module == "parser" || r.module == "checker" || r.module == "goal") EXPECT_DOUBLE_EQ(r.sr_pct, 100.0);
    EXPECT_EQ(r.pointing_sr_pct.has_value(), r.module == "detector");
    EXPECT_EQ(r.bbox_iou_pct.has_value(), r.module == "detector");
    EXPECT_EQ(r.mean_tokens, 0.0);
    EXPECT_GE(r.sr_pct, 0.0);
    EXPECT_LE(r.sr_pct, 100.0);
  }
}

TEST(Modules, NoisyOracleScoresLower) {
  obs::OracleConfig cfg;
  cfg.noise.check = 0.3;
  const auto m = bench::load_module_corpus(corpus("modules"));
  const auto rows = bench::evaluate_modules(m, bench::oracle_module_factory(cfg), 10, 1);
  for (const auto& r : rows)
    if (r.module == "checker") EXPECT_NEAR(r.sr_pct, 70.0, 4.0);
}

TEST(Modules, MissingCorpus) {
  EXPECT_THROW(bench::load_module_corpus("/nonexistent/modules"), bench::CorpusMissing);
}

// ---- command line ---------------------------------------------------------------------------

TEST(Cli, PlanExitCodes) {
  const auto dir = scratch("plan");
  const auto domain = corpus("pddl/stacking-domain.pddl");
  auto ok = invoke({"plan", "--domain", domain, "--problem", corpus("pddl/stacking-4-alt.pddl")});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(nlohmann::json::parse(ok.out)["steps"].size(), 8u);

  spit(dir / "stuck.pddl", R"((define (problem stuck) (:domain stacking)
    (:objects a b - block)
    (:init (hand-empty) (on-table a) (clear a) (on-table b) (clear b))
    (:goal (and (on-top-of a b) (on-top-of b a)))))");
  EXPECT_EQ(invoke({"plan", "--domain", domain, "--problem", (dir / "stuck.pddl").string()}).code, 2);

  spit(dir / "broken.pddl", "(define (problem broken)\n  (:domain stacking)\n  (:init (hand-empty)\n");
  const auto bad = invoke({"plan", "--domain", domain, "--problem", (dir / "broken.pddl").string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("broken.pddl:"), std::string::npos) << bad.err;

  EXPECT_EQ(invoke({"plan", "--domain", domain, "--problem", corpus("pddl/stacking-4-alt.pddl"), "--search", "dfs"}).code, 1);
  EXPECT_EQ(invoke({"plan", "--domain", "/missing.pddl", "--problem", "/missing.pddl"}).code, 1);
}

TEST(Cli, UsageErrorsAndHelp) {
  EXPECT_EQ(invoke({"--help"}).code, 0);
  EXPECT_EQ(invoke({"--version"}).code, 0);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  EXPECT_EQ(invoke({"run", "--task", "sorting"}).code, 1);
}

TEST(Cli, RunWritesTracesAndSummary) {
  const auto dir = scratch("run");
  const auto r = invoke({"run", "--task", "sorting", "--seed", "42", "--episodes", "3", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(fs::exists(dir / cli::episode_file(i)));
  EXPECT_FALSE(fs::exists(dir / cli::episode_file(3)));
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["base_seed"], 42);
  EXPECT_EQ(manifest["command"], "run");
}

TEST(Cli, RunFailureIsDataNotExitStatus) {
  const auto dir = scratch("run-fail");
  const auto r = invoke({"run", "--task", "sorting", "--seed", "1", "--noise-parse", "1", "--out", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "summary.json"))["success_rate_pct"], 0.0);
}

TEST(Cli, UnreachableRemoteExitsOne) {
  const auto dir = scratch("remote");
  const auto r = invoke({"run", "--task", "sorting", "--seed", "1", "--observer", "remote", "--endpoint",
                      "http://127.0.0.1:1", "--timeout", "1", "--out", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, ManifestAndTracesReproducible) {
  const auto a = scratch("repro-a"), b = scratch("repro-b");
  const std::vector<std::string> common{"run", "--task", "kitchen-c", "--seed", "314", "--episodes", "4",
                                        "--noise-check", "0.2", "--noise-detect", "0.1"};
  auto args_a = common, args_b = common;
  args_a.insert(args_a.end(), {"--out", a.string()});
  args_b.insert(args_b.end(), {"--out", b.string(), "--jobs", "3"});
  ASSERT_EQ(invoke(args_a).code, 0);
  ASSERT_EQ(invoke(args_b).code, 0);
  auto manifest = [](const fs::path& d) {
    auto j = nlohmann::json::parse(slurp(d / "manifest.json"));
    j["config"].erase("jobs");
    return j;
  };
  EXPECT_EQ(manifest(a), manifest(b));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(slurp(a / cli::episode_file(i)), slurp(b / cli::episode_file(i))) << i;
}

TEST(Cli, ReplayChecksScores) {
  const auto dir = scratch("replay");
  ASSERT_EQ(invoke({"run", "--task", "stacking-3", "--protocol", "4", "--seed", "7", "--out", dir.string()}).code, 0);
  const auto trace = (dir / cli::episode_file(0)).string();
  const auto ok = invoke({"replay", trace});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("EpisodeEnd"), std::string::npos);
  EXPECT_EQ(invoke({"replay", "--reconstruct", "--quiet", trace}).code, 0);

  const auto text = slurp(trace);
  spit(dir / "truncated.jsonl", text.substr(0, text.size() / 2));
  EXPECT_EQ(invoke({"replay", (dir / "truncated.jsonl").string()}).code, 1);

  auto lines = text;
  const auto pos = lines.rfind("\"score\":");
  ASSERT_NE(pos, std::string::npos);
  lines.replace(pos, 8, "\"score\":-5,\"was\":");
  spit(dir / "tampered.jsonl", lines);
  EXPECT_EQ(invoke({"replay", (dir / "tampered.jsonl").string()}).code, 1);
  EXPECT_EQ(invoke({"replay", (dir / "missing.jsonl").string()}).code, 1);
}

TEST(Cli, BenchRequiresSeed) {
  const auto dir = scratch("bench-seed");
  spit(dir / "suite.json", R"({"name":"s","runs":[{"task":"sorting","episodes":1}]})");
  EXPECT_EQ(invoke({"bench", (dir / "suite.json").string(), "--out", (dir / "out").string()}).code, 1);
  const auto r = invoke({"bench", (dir / "suite.json").string(), "--seed", "3", "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  for (const char* f : {"report.csv", "modules.csv", "summary.json", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
}

TEST(Cli, BenchRejectsScriptedObserver) {
  const auto dir = scratch("bench-scripted");
  EXPECT_EQ(invoke({"bench", "empty", "--observer", "scripted", "--out", dir.string()}).code, 1);
}

TEST(Cli, EmptySuiteBench) {
  const auto dir = scratch("bench-empty");
  ASSERT_EQ(invoke({"bench", "empty", "--out", dir.string()}).code, 0);
  EXPECT_EQ(slurp(dir / "report.csv"), bench::csv_header(bench::kReportColumns));
}
