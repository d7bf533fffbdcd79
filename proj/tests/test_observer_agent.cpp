#include <chrono>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "deskagent/agent/classify.hpp"
#include "deskagent/bench/harness.hpp"
#include "deskagent/observer/oracle.hpp"
#include "deskagent/observer/remote.hpp"
#include "deskagent/observer/scripted.hpp"

using namespace deskagent;
using obs::RequestKind;

namespace {

const char* const kScenes[] = {"sorting-3", "sorting-4", "sorting-5", "sorting-6", "sorting-7", "stacking-3", "stacking-4",
                               "kitchen-a", "kitchen-b", "kitchen-c", "cluster-a", "cluster-b", "cluster-c"};

const char* const kTasks[] = {"sorting",   "stacking-3", "stacking-4", "stacking-4-alt", "kitchen-a",
                              "kitchen-b", "kitchen-c"};

sim::World world_of(const std::string& scene, std::uint64_t seed = 7) {
  return sim::World(obs::load_scene(obs::scene_path(scene)), sim::FailureModel::none(), seed);
}

obs::ObserverRequest check_request(const sim::Observation& o, const std::string& formula, const std::string& phase = "pre") {
  obs::ObserverRequest r;
  r.kind = RequestKind::CheckConditions;
  r.observation = o;
  r.conditions = pddl::parse_formula(formula);
  r.phase = phase;
  return r;
}

pddl::Conjunction single(const pddl::Atom& a, bool negated) { return {pddl::Literal{a, negated}}; }

obs::OracleObserver perfect(const sim::World& w, std::uint64_t seed = 1) { return obs::OracleObserver({}, seed, &w); }

bench::RunSpec spec_for(const std::string& task, agent::CheckerMode mode = agent::CheckerMode::Full) {
  bench::RunSpec s;
  s.label = task;
  s.task = task;
  s.failures = sim::FailureModel::none();
  s.agent.checker = mode;
  return s;
}

agent::EpisodeTrace run_traced(const bench::RunSpec& spec, std::uint64_t seed,
                               const bench::ObserverFactory& factory = bench::oracle_factory()) {
  static bench::Corpus corpus;
  auto r = bench::run_one(spec, corpus, seed, 0, factory, true);
  return std::move(r.trace);
}

struct LoopbackServer {
  httplib::Server srv;
  std::thread thread;
  int port = 0;

  explicit LoopbackServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    srv.Post("/v1/query", std::move(handler));
    port = srv.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~LoopbackServer() {
    srv.stop();
    thread.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port); }
};

const char* kValidCheck = R"J({"conditions_analysis":[{"condition":"(hand-empty)","satisfied":true,"observation":"gripper open"}],
  "success":true,"reasoning":"ok","failed_conditions":[],"usage":{"total_tokens":321}})J";

}  // namespace

// ---- oracle ---------------------------------------------------------------------

TEST(Oracle, HandEmptyHoldsWithEmptyGripper) {
  auto w = world_of("sorting-3");
  auto o = perfect(w);
  const auto v = o.query(check_request(w.observe(sim::View::Shoulder), "(and (hand-empty))"));
  const auto& b = v.as<obs::CheckConditionsVerdict>();
  EXPECT_TRUE(b.success);
  EXPECT_TRUE(b.failed_conditions.empty());
  EXPECT_EQ(b.conditions_analysis.size(), 1u);
}

TEST(Oracle, HallucinationDeniesHoldingAfterGoodPick) {
  auto w = world_of("sorting-3");
  const auto r = w.execute({sim::PrimitiveKind::Pick, "apple", "", {10, 10}, 0.0, 5.0, 0});
  ASSERT_EQ(r.outcome, sim::Outcome::Success);
  obs::OracleConfig cfg;
  cfg.noise.hallucination = true;
  obs::OracleObserver o(cfg, 1, &w);
  const auto obs_now = w.observe(sim::View::Shoulder);
  const auto b = o.query(check_request(obs_now, "(holding apple)", "effect")).as<obs::CheckConditionsVerdict>();
  EXPECT_FALSE(b.success);
  EXPECT_EQ(b.failed_conditions, std::vector<std::string>{"(holding apple)"});
  // The same condition checked as a precondition is answered truthfully.
  EXPECT_TRUE(o.query(check_request(obs_now, "(holding apple)", "pre")).as<obs::CheckConditionsVerdict>().success);
}

TEST(Oracle, GoalSatisfiedOnGoalScene) {
  auto w = world_of("stacking-3");
  const auto& task = obs::find_task("stacking-3");
  const std::vector<std::tuple<std::string, std::string, Vec2>> moves = {
      {"green-cube", "pink-plate", {60, 40}}, {"orange-cube", "green-cube", {60, 40}}, {"blue-cube", "orange-cube", {60, 40}}};
  for (const auto& [cube, dest, at] : moves) {
    const Vec2 from = w.state().at(cube).pose;
    ASSERT_EQ(w.execute({sim::PrimitiveKind::Pick, cube, "", from, 0.0, 6.0, 0}).outcome, sim::Outcome::Success);
    ASSERT_EQ(w.execute({sim::PrimitiveKind::Place, cube, dest, at, 0.0, 0.0, 0}).outcome, sim::Outcome::Success);
  }
  ASSERT_TRUE(obs::goal_holds(w.state(), task.text));
  auto o = perfect(w);
  obs::ObserverRequest r;
  r.kind = RequestKind::CheckGoal;
  r.instruction = task.text;
  r.observation = w.observe(sim::View::Shoulder);
  EXPECT_TRUE(o.query(r).as<obs::CheckGoalVerdict>().satisfied);
}

TEST(Oracle, TruthfulOnEveryCorpusScene) {
  for (const char* scene : kScenes) {
    SCOPED_TRACE(scene);
    auto w = world_of(scene);
    auto o = perfect(w);
    const auto view = w.observe(sim::View::Shoulder);
    const auto atoms = sim::relations(w.state());
    std::vector<pddl::Conjunction> queries;
    for (const auto& a : atoms) {
      queries.push_back(single(a, false));
      queries.push_back(single(a, true));
    }
    for (const auto& [n, x] : w.state().objects) {
      queries.push_back(single({"holding", {n}}, false));
      queries.push_back(single({"clear", {n}}, false));
    }
    for (const auto& q : queries) {
      auto req = check_request(view, "(and)");
      req.conditions = q;
      EXPECT_EQ(o.query(req).as<obs::CheckConditionsVerdict>().success, obs::conditions_hold(w.state(), q))
          << pddl::to_string(q);
    }

    Rng rng(3);
    for (const auto& [n, x] : w.state().objects) {
      obs::ObserverRequest d;
      d.kind = RequestKind::DetectObject;
      d.observation = view;
      d.query_object = n;
      const auto det = o.query(d).as<obs::DetectObjectVerdict>();
      const auto* seen = view.find(n);
      ASSERT_EQ(det.found, seen != nullptr) << n;
      if (!det.found) continue;
      if (!w.state().occluded(n)) EXPECT_TRUE(obs::detection_identifies(w.state(), n, det.point)) << n;
      if (!seen->graspable || !seen->clear) continue;
      for (const auto& c : grasp::generate(view, {det.box(), view.view}, rng, {})) {
        obs::ObserverRequest g;
        g.kind = RequestKind::EvaluateGrasp;
        g.observation = view;
        g.candidate = c;
        g.query_object = n;
        EXPECT_EQ(o.query(g).as<obs::EvaluateGraspVerdict>().accept,
                  obs::grasp_is_good(w, c, n, obs::kGraspTolerance));
      }
    }

    for (const char* t : kTasks) {
      const auto& task = obs::find_task(t);
      if (task.default_scene != scene) continue;
      obs::ObserverRequest g;
      g.kind = RequestKind::CheckGoal;
      g.instruction = task.text;
      g.observation = view;
      EXPECT_EQ(o.query(g).as<obs::CheckGoalVerdict>().satisfied, obs::goal_holds(w.state(), task.text));
    }
  }
}

TEST(Oracle, FlipRateIsCalibrated) {
  auto w = world_of("sorting-3");
  const auto view = w.observe(sim::View::Shoulder);
  const auto holds = check_request(view, "(and (hand-empty) (on-table apple))");
  const auto fails = check_request(view, "(and (holding apple))");
  for (double q : {0.1, 0.3, 0.5}) {
    obs::OracleConfig cfg;
    cfg.noise.check = q;
    obs::OracleObserver o(cfg, 99, &w);
    const std::size_t n = 20000;
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool truth = i % 2 == 0;
      flipped += o.query(truth ? holds : fails).as<obs::CheckConditionsVerdict>().success != truth;
    }
    EXPECT_NEAR(static_cast<double>(flipped) / n, q, 0.01) << "q=" << q;
  }
}

TEST(Oracle, RejectsOutOfRangeNoise) {
  obs::OracleConfig cfg;
  cfg.noise.detect = 1.5;
  EXPECT_THROW(obs::OracleObserver(cfg, 0), std::invalid_argument);
}

TEST(Oracle, RequestInvariantsEnforced) {
  auto w = world_of("sorting-3");
  auto o = perfect(w);
  obs::ObserverRequest r;
  r.kind = RequestKind::DetectObject;
  r.observation = w.observe(sim::View::Shoulder);
  EXPECT_THROW(o.query(r), obs::InvalidRequest);
  r.kind = RequestKind::ParseTask;
  r.instruction = "sorting";
  EXPECT_THROW(o.query(r), obs::InvalidRequest);
}

// ---- task parsing -----------------------------------------------------------

TEST(ParseTask, StackingTemplateGoal) {
  auto w = world_of("stacking-3");
  auto o = perfect(w);
  const auto text = obs::read_file(obs::domain_path("stacking"));
  const auto domain = pddl::parse_domain(text);
  obs::ObserverRequest r;
  r.kind = RequestKind::ParseTask;
  r.instruction = "Stack the cubes on the pink plate from bottom to top: Green, Orange, and Blue.";
  r.domain_text = text;
  r.observation = w.observe(sim::View::Shoulder);
  const auto b = o.query(r).as<obs::ParseTaskVerdict>();
  const auto problem = pddl::parse_problem(b.problem_pddl, domain);
  const auto goal = pddl::to_string(problem.goal);
  EXPECT_NE(goal.find("(on-top-of orange-cube green-cube)"), std::string::npos) << goal;
  EXPECT_NE(goal.find("(on-top-of blue-cube orange-cube)"), std::string::npos) << goal;
  EXPECT_EQ(b.updated_domain, text);
  EXPECT_EQ(b.objects_identified.size(), problem.objects.size());
  // init is the symbolic projection of the observation
  std::vector<std::string> init, seen;
  for (const auto& a : problem.init) init.push_back(a.str());
  for (const auto& a : r.observation.relations) seen.push_back(a.str());
  std::sort(init.begin(), init.end());
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(init, seen);
}

TEST(ParseTask, SortingRoutesByCategory) {
  auto w = world_of("sorting-3");
  auto o = perfect(w);
  const auto text = obs::read_file(obs::domain_path("sorting"));
  obs::ObserverRequest r;
  r.kind = RequestKind::ParseTask;
  r.instruction = "Sort the fruits into the white bin and all other objects into the blue bin.";
  r.domain_text = text;
  r.observation = w.observe(sim::View::Shoulder);
  const auto problem = pddl::parse_problem(o.query(r).as<obs::ParseTaskVerdict>().problem_pddl, pddl::parse_domain(text));
  EXPECT_TRUE(obs::same_goal(problem.goal, pddl::parse_formula("(and (in-container apple white-bin) "
                                                               "(in-container red-block blue-bin) "
                                                               "(in-container rubber-duck blue-bin))")));
}

TEST(ParseTask, UnknownInstructionThrows) {
  auto w = world_of("sorting-3");
  auto o = perfect(w);
  obs::ObserverRequest r;
  r.kind = RequestKind::ParseTask;
  r.instruction = "juggle the apples";
  r.domain_text = obs::read_file(obs::domain_path("sorting"));
  r.observation = w.observe(sim::View::Shoulder);
  EXPECT_THROW(o.query(r), obs::UnknownTask);
}

TEST(ParseTask, ForcedCorruptionChangesExactlyOneAtom) {
  auto w = world_of("stacking-4");
  const auto text = obs::read_file(obs::domain_path("stacking"));
  const auto domain = pddl::parse_domain(text);
  const auto& task = obs::find_task("stacking-4");
  const auto truth = obs::true_goal(task.text, agent::catalog_of(w.state()));
  obs::OracleConfig cfg;
  cfg.noise.parse = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    obs::OracleObserver o(cfg, seed, &w);
    obs::ObserverRequest r;
    r.kind = RequestKind::ParseTask;
    r.instruction = task.text;
    r.domain_text = text;
    r.observation = w.observe(sim::View::Shoulder);
    const auto goal = pddl::parse_problem(o.query(r).as<obs::ParseTaskVerdict>().problem_pddl, domain).goal;
    std::size_t missing = 0;
    for (const auto& l : truth) missing += std::find(goal.begin(), goal.end(), l) == goal.end();
    std::size_t foreign = 0;
    for (const auto& l : goal) foreign += std::find(truth.begin(), truth.end(), l) == truth.end();
    EXPECT_EQ(missing, 1u) << "seed " << seed;
    if (goal.size() == truth.size()) {
      ASSERT_EQ(foreign, 1u);
      const auto swapped = *std::find_if(goal.begin(), goal.end(), [&](const pddl::Literal& l) {
        return std::find(truth.begin(), truth.end(), l) == truth.end();
      });
      auto back = swapped;
      std::swap(back.atom.args[0], back.atom.args[1]);
      EXPECT_NE(std::find(truth.begin(), truth.end(), back), truth.end());
    } else {
      EXPECT_EQ(goal.size() + 1, truth.size());
      EXPECT_EQ(foreign, 0u);
    }
  }
}

// ---- wire schema --------------------------------------------------------------

TEST(Schema, EveryOracleVerdictRevalidates) {
  auto w = world_of("kitchen-a");
  auto o = perfect(w);
  const auto view = w.observe(sim::View::Shoulder);
  std::vector<obs::ObserverRequest> reqs;
  {
    obs::ObserverRequest r;
    r.kind = RequestKind::ParseTask;
    r.instruction = "kitchen-a";
    r.domain_text = obs::read_file(obs::domain_path("kitchen"));
    r.observation = view;
    reqs.push_back(r);
  }
  reqs.push_back(check_request(view, "(and (hand-empty) (holding spice-bottle))"));
  {
    obs::ObserverRequest r;
    r.kind = RequestKind::DetectObject;
    r.observation = view;
    r.query_object = "spice-bottle";
    reqs.push_back(r);
    Rng rng(1);
    r.kind = RequestKind::EvaluateGrasp;
    r.candidate = grasp::generate(view, {Box{{20, 15}, 8, 8}, view.view}, rng, {}).front();
    reqs.push_back(r);
  }
  {
    obs::ObserverRequest r;
    r.kind = RequestKind::CheckGoal;
    r.instruction = "kitchen-a";
    r.observation = view;
    reqs.push_back(r);
  }
  for (const auto& r : reqs) {
    const auto v = o.query(r);
    ASSERT_EQ(v.kind(), r.kind);
    const auto back = obs::verdict_from_json(r.kind, nlohmann::json::parse(obs::verdict_to_json(v).dump()));
    EXPECT_EQ(back.body, v.body) << obs::to_string(r.kind);
    // requests round-trip through the wire form as well
    const auto rr = obs::request_from_json(nlohmann::json::parse(obs::request_to_json(r).dump()));
    EXPECT_EQ(obs::request_to_json(rr), obs::request_to_json(r));
  }
}

TEST(Schema, MissingFieldIsNamed) {
  auto j = nlohmann::json::parse(kValidCheck);
  j.erase("success");
  try {
    obs::verdict_from_json(RequestKind::CheckConditions, j);
    FAIL() << "expected SchemaError";
  } catch (const obs::SchemaError& e) {
    EXPECT_EQ(e.field(), "success");
  }
  auto nested = nlohmann::json::parse(kValidCheck);
  nested["conditions_analysis"][0].erase("satisfied");
  try {
    obs::verdict_from_json(RequestKind::CheckConditions, nested);
    FAIL() << "expected SchemaError";
  } catch (const obs::SchemaError& e) {
    EXPECT_NE(e.field().find("satisfied"), std::string::npos);
  }
}

TEST(Schema, SuccessMustMatchFailedConditions) {
  auto j = nlohmann::json::parse(kValidCheck);
  j["success"] = false;
  EXPECT_THROW(obs::verdict_from_json(RequestKind::CheckConditions, j), obs::SchemaError);
}

TEST(Schema, ExtraFieldsIgnored) {
  auto j = nlohmann::json::parse(kValidCheck);
  j["confidence"] = 0.93;
  j["conditions_analysis"][0]["extra"] = "x";
  const auto v = obs::verdict_from_json(RequestKind::CheckConditions, j);
  EXPECT_TRUE(v.as<obs::CheckConditionsVerdict>().success);
  EXPECT_EQ(v.cost.tokens, 321u);
}

TEST(Schema, GraspDecisionVocabulary) {
  EXPECT_TRUE(obs::verdict_from_json(RequestKind::EvaluateGrasp, {{"decision", "ACCEPT"}, {"reasoning", ""}})
                  .as<obs::EvaluateGraspVerdict>()
                  .accept);
  EXPECT_THROW(obs::verdict_from_json(RequestKind::EvaluateGrasp, {{"decision", "maybe"}, {"reasoning", ""}}),
               obs::SchemaError);
  EXPECT_THROW(obs::verdict_from_json(RequestKind::DetectObject, {{"found", true}, {"point", {1, 2}}, {"bbox", {3, 3, 1, 1}}}),
               obs::SchemaError);
}

// ---- remote client ---------------------------------------------------------------

TEST(Remote, LoopbackParsesVerdict) {
  nlohmann::json seen;
  LoopbackServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(kValidCheck, "application/json");
  });
  obs::RemoteObserver remote({server.endpoint(), 5.0});
  auto w = world_of("sorting-3");
  const auto v = remote.query(check_request(w.observe(sim::View::Shoulder), "(and (hand-empty))"));
  EXPECT_TRUE(v.as<obs::CheckConditionsVerdict>().success);
  EXPECT_EQ(v.cost.tokens, 321u);
  EXPECT_GE(v.cost.latency_ms, 0.0);
  EXPECT_EQ(seen["kind"], "check-conditions");
  EXPECT_EQ(seen["conditions"], "(and (hand-empty))");
  EXPECT_TRUE(seen["observation"].is_object());
}

TEST(Remote, InvalidReplyIsSchemaError) {
  LoopbackServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"conditions_analysis":[],"reasoning":"","failed_conditions":[]})", "application/json");
  });
  obs::RemoteObserver remote({server.endpoint(), 5.0});
  auto w = world_of("sorting-3");
  try {
    remote.query(check_request(w.observe(sim::View::Shoulder), "(and (hand-empty))"));
    FAIL() << "expected SchemaError";
  } catch (const obs::SchemaError& e) {
    EXPECT_EQ(e.field(), "success");
  }
}

TEST(Remote, HttpStatusIsRemoteError) {
  LoopbackServer server([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  obs::RemoteObserver remote({server.endpoint(), 5.0});
  auto w = world_of("sorting-3");
  EXPECT_THROW(remote.query(check_request(w.observe(sim::View::Shoulder), "(and (hand-empty))")), obs::RemoteError);
}

TEST(Remote, UnreachableHostIsRemoteError) {
  int port = 0;
  {
    LoopbackServer closed([](const httplib::Request&, httplib::Response&) {});
    port = closed.port;
  }
  obs::RemoteObserver remote({"http://127.0.0.1:" + std::to_string(port), 2.0});
  auto w = world_of("sorting-3");
  EXPECT_THROW(remote.query(check_request(w.observe(sim::View::Shoulder), "(and (hand-empty))")), obs::RemoteError);
}

TEST(Remote, SlowReplyTimesOut) {
  LoopbackServer server([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content(kValidCheck, "application/json");
  });
  obs::RemoteObserver remote({server.endpoint(), 0.3});
  auto w = world_of("sorting-3");
  EXPECT_THROW(remote.query(check_request(w.observe(sim::View::Shoulder), "(and (hand-empty))")), obs::RemoteTimeout);
}

// ---- scripted replay --------------------------------------------------------------

TEST(Scripted, ServesInOrderAndDetectsMismatch) {
  auto w = world_of("sorting-3");
  const auto view = w.observe(sim::View::Shoulder);
  obs::ScriptedObserver s({obs::verdict_from_json(RequestKind::CheckConditions, nlohmann::json::parse(kValidCheck))});
  EXPECT_TRUE(s.query(check_request(view, "(and (hand-empty))")).as<obs::CheckConditionsVerdict>().success);
  EXPECT_EQ(s.consumed(), 1u);
  EXPECT_THROW(s.query(check_request(view, "(and (hand-empty))")), obs::ScriptMismatch);
  obs::ScriptedObserver wrong({obs::verdict_from_json(RequestKind::CheckGoal, {{"satisfied", true}, {"reasoning", ""}})});
  EXPECT_THROW(wrong.query(check_request(view, "(and (hand-empty))")), obs::ScriptMismatch);
}

// ---- agent ------------------------------------------------------------------------

TEST(Agent, SortingThreeTriggersSixEffectChecks) {
  const auto t = run_traced(spec_for("sorting"), 42);
  EXPECT_TRUE(agent::truly_succeeded(t));
  EXPECT_EQ(t.count(agent::EventKind::EffectCheck), 6u);
  EXPECT_EQ(t.count(agent::EventKind::PrecondCheck), 0u);
  EXPECT_EQ(t.count(agent::EventKind::GoalCheck), 1u);
  EXPECT_EQ(t.end_event()->payload["executed"], 6);
  EXPECT_DOUBLE_EQ(t.end_event()->payload["score"].get<double>(), 1.0);
}

TEST(Agent, PreconditionChecksWhenEnabled) {
  auto spec = spec_for("sorting");
  spec.agent.effect_check_only = false;
  const auto t = run_traced(spec, 42);
  EXPECT_TRUE(agent::truly_succeeded(t));
  EXPECT_EQ(t.count(agent::EventKind::PrecondCheck), 6u);
  EXPECT_EQ(t.count(agent::EventKind::EffectCheck), 6u);
}

TEST(Agent, EventsAreClockOrderedWithOneEnd) {
  const auto t = run_traced(spec_for("kitchen-c"), 5);
  for (std::size_t i = 0; i < t.events.size(); ++i) EXPECT_EQ(t.events[i].clock, i);
  EXPECT_EQ(t.count(agent::EventKind::EpisodeEnd), 1u);
  EXPECT_EQ(t.events.back().kind, agent::EventKind::EpisodeEnd);
  EXPECT_EQ(t.events.front().kind, agent::EventKind::ParseRequested);
}

TEST(Agent, UncheckedStackingEndsWrongWithoutReplan) {
  auto spec = spec_for("stacking-3", agent::CheckerMode::None);
  spec.protocol = 4;
  const auto t = run_traced(spec, 11);
  EXPECT_FALSE(agent::truly_succeeded(t));
  EXPECT_TRUE(t.end_event()->payload["claimed_success"].get<bool>());
  EXPECT_EQ(t.count(agent::EventKind::Replan), 0u);
  EXPECT_EQ(t.count(agent::EventKind::EffectCheck), 0u);
  EXPECT_EQ(t.count(agent::EventKind::GoalCheck), 0u);
}

TEST(Agent, FullCheckerRecoversFromDisturbedGrasp) {
  auto spec = spec_for("stacking-3");
  spec.protocol = 4;
  const auto t = run_traced(spec, 11);
  EXPECT_TRUE(agent::truly_succeeded(t));
  // The first pick misses, the effect check catches it, and the retry lands.
  const agent::Event* failed = nullptr;
  for (const auto& e : t.events)
    if (e.kind == agent::EventKind::Executed && e.payload["outcome"] != "success") {
      failed = &e;
      break;
    }
  ASSERT_NE(failed, nullptr);
  EXPECT_EQ(failed->payload["outcome"], sim::to_string(sim::Outcome::MissedGrasp));
  const auto& check = t.events[failed->clock + 1];
  ASSERT_EQ(check.kind, agent::EventKind::EffectCheck);
  EXPECT_FALSE(check.payload["success"].get<bool>());
  EXPECT_FALSE(check.payload["truth"].get<bool>());
  bool retried = false;
  for (auto i = failed->clock + 1; i < t.events.size(); ++i)
    if (t.events[i].kind == agent::EventKind::Executed && t.events[i].payload["action"] == failed->payload["action"])
      retried = t.events[i].payload["outcome"] == "success";
  EXPECT_TRUE(retried);
}

TEST(Agent, GraspRejectionEscalatesToWristOnce) {
  obs::OracleConfig cfg;
  cfg.noise.grasp = 1.0;  // every good grasp is rejected
  auto spec = spec_for("sorting");
  spec.oracle = cfg;
  spec.agent.max_replans = 0;
  const auto t = run_traced(spec, 3);
  EXPECT_FALSE(agent::truly_succeeded(t));
  std::size_t verdicts = 0;
  for (const auto& e : t.events) verdicts += e.kind == agent::EventKind::GraspVerdict;
  EXPECT_EQ(t.count(agent::EventKind::ViewSwitch) * 2, verdicts);
  for (std::size_t i = 0; i + 1 < t.events.size(); ++i)
    if (t.events[i].kind == agent::EventKind::ViewSwitch) {
      EXPECT_EQ(t.events[i + 1].kind, agent::EventKind::GraspProposed);
      EXPECT_EQ(t.events[i + 1].payload["view"], "wrist");
    }
}

TEST(Agent, GraspEvalOffNeverSwitchesView) {
  auto spec = spec_for("sorting");
  spec.agent.grasp_eval = false;
  spec.failures = {};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = run_traced(spec, seed);
    EXPECT_EQ(t.count(agent::EventKind::ViewSwitch), 0u);
    EXPECT_EQ(t.count(agent::EventKind::GraspVerdict), 0u);
  }
}

TEST(Agent, EffectChecksMatchExecutedActions) {
  auto spec = spec_for("sorting");
  spec.failures = {};
  spec.oracle.noise.check = 0.1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = run_traced(spec, seed);
    std::size_t attempted = 0;
    for (const auto& e : t.events)
      attempted += e.kind == agent::EventKind::Executed && e.payload["outcome"] != "not-attempted";
    EXPECT_EQ(t.count(agent::EventKind::EffectCheck), attempted) << "seed " << seed;
  }
}

TEST(Agent, SchemaErrorIsAnOutcome) {
  // A script whose parse verdict carries an unparsable problem ends the episode cleanly.
  nlohmann::json bad{{"objects_identified", nlohmann::json::array()},
                     {"reasoning", ""},
                     {"updated_domain", ""},
                     {"problem_pddl", "(define (problem"}};
  const auto factory = [&](const bench::RunSpec&, const sim::World&, std::uint64_t, std::size_t) {
    return std::make_unique<obs::ScriptedObserver>(
        std::vector<obs::ObserverVerdict>{obs::verdict_from_json(RequestKind::ParseTask, bad)});
  };
  const auto t = run_traced(spec_for("sorting"), 1, factory);
  EXPECT_FALSE(agent::truly_succeeded(t));
  EXPECT_EQ(t.end_event()->payload["reason"], "parse-failed");
  EXPECT_EQ(agent::classify_failure(t), agent::FailureMode::Parser);
}

TEST(Agent, TerminatesWithinBudget) {
  for (const char* task : kTasks)
    for (auto mode : {agent::CheckerMode::None, agent::CheckerMode::GoalOnly, agent::CheckerMode::Full})
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto spec = spec_for(task, mode);
        spec.failures = {};
        spec.oracle.noise.check = 0.2;
        spec.oracle.noise.goal = 0.2;
        spec.oracle.noise.detect = 0.1;
        const auto t = run_traced(spec, seed);
        std::size_t longest = 0, executed = 0;
        for (const auto& e : t.events) {
          if (e.kind == agent::EventKind::PlanProduced && e.payload.contains("steps"))
            longest = std::max(longest, e.payload["steps"].size());
          executed += e.kind == agent::EventKind::Executed;
        }
        const auto bound = (spec.agent.max_replans + 1) * longest * (spec.agent.max_action_retries + 1);
        EXPECT_LE(executed, bound) << task << " " << agent::to_string(mode) << " seed " << seed;
        EXPECT_LE(t.count(agent::EventKind::Replan), spec.agent.max_replans);
      }
}

TEST(Agent, SameSeedSameTrace) {
  auto spec = spec_for("kitchen-b");
  spec.failures = {};
  spec.oracle.noise = {0.1, 0.1, 0.1, 0.1, 0.1, false};
  for (std::uint64_t seed : {0u, 17u, 123u}) {
    const auto a = run_traced(spec, seed);
    const auto b = run_traced(spec, seed);
    EXPECT_EQ(agent::deterministic_jsonl(a), agent::deterministic_jsonl(b));
  }
}

TEST(Agent, ScriptedReplayReproducesOracleEpisodes) {
  auto spec = spec_for("sorting");
  spec.failures = {};
  spec.oracle.noise.check = 0.2;
  spec.oracle.noise.detect = 0.1;
  spec.oracle.noise.grasp = 0.1;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto original = run_traced(spec, seed);
    const auto verdicts = agent::recorded_verdicts(original);
    const auto factory = [&](const bench::RunSpec&, const sim::World&, std::uint64_t, std::size_t) {
      return std::make_unique<obs::ScriptedObserver>(verdicts);
    };
    const auto replay = run_traced(spec, seed, factory);
    EXPECT_EQ(agent::deterministic_jsonl(replay), agent::deterministic_jsonl(original)) << "seed " << seed;
  }
}

TEST(Agent, RemoteErrorsPropagate) {
  int port = 0;
  {
    LoopbackServer closed([](const httplib::Request&, httplib::Response&) {});
    port = closed.port;
  }
  const auto factory = [&](const bench::RunSpec&, const sim::World&, std::uint64_t, std::size_t) {
    return std::make_unique<obs::RemoteObserver>(obs::RemoteConfig{"http://127.0.0.1:" + std::to_string(port), 1.0});
  };
  EXPECT_THROW(run_traced(spec_for("sorting"), 1, factory), obs::RemoteError);
}

// ---- failure attribution ------------------------------------------------------------

TEST(Classify, SuccessIsNotAFailure) {
  const auto t = run_traced(spec_for("sorting"), 42);
  EXPECT_THROW(agent::classify_failure(t), agent::NotAFailure);
}

TEST(Classify, ParseCorruptionBlamesParser) {
  auto spec = spec_for("sorting");
  spec.oracle.noise.parse = 1.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = run_traced(spec, seed);
    EXPECT_FALSE(t.events.front().payload["truth"].get<bool>());
    ASSERT_FALSE(agent::truly_succeeded(t));
    EXPECT_EQ(agent::classify_failure(t), agent::FailureMode::Parser);
  }
}

TEST(Classify, HallucinatedEffectCheckBlamesActionChecker) {
  auto spec = spec_for("sorting");
  spec.oracle.noise.hallucination = true;
  spec.agent.max_replans = 0;
  const auto t = run_traced(spec, 8);
  ASSERT_FALSE(agent::truly_succeeded(t));
  EXPECT_EQ(t.end_event()->payload["reason"], "budget");
  EXPECT_EQ(agent::classify_failure(t), agent::FailureMode::ActionChecker);
}

TEST(Classify, WrongGoalVerdictBlamesGoalChecker) {
  agent::EpisodeTrace t;
  t.add(agent::EventKind::ParseRequested, {{"truth", true}});
  t.add(agent::EventKind::Executed, {{"counted", true}, {"outcome", "success"}, {"action", "(pick apple)"}});
  t.add(agent::EventKind::EffectCheck, {{"success", true}, {"truth", true}});
  t.add(agent::EventKind::GoalCheck, {{"satisfied", true}, {"truth", false}});
  t.add(agent::EventKind::EpisodeEnd, {{"success", false}, {"claimed_success", true}});
  EXPECT_EQ(agent::classify_failure(t), agent::FailureMode::GoalChecker);
}

TEST(Classify, MissedGraspWithoutCheckerBlamesExecution) {
  auto spec = spec_for("stacking-3", agent::CheckerMode::None);
  spec.protocol = 4;
  const auto t = run_traced(spec, 11);
  EXPECT_EQ(agent::classify_failure(t), agent::FailureMode::Execution);
}

TEST(Classify, TraceWithoutEndIsCorrupt) {
  agent::EpisodeTrace t;
  t.add(agent::EventKind::ParseRequested);
  EXPECT_THROW(agent::classify_failure(t), agent::CorruptTrace);
}
