#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deskagent/bench/score.hpp"
#include "deskagent/observer/messages.hpp"

namespace deskagent::agent {

enum class EventKind {
  ParseRequested,
  PlanProduced,
  PrecondCheck,
  GraspProposed,
  GraspVerdict,
  ViewSwitch,
  Executed,
  EffectCheck,
  Replan,
  GoalCheck,
  EpisodeEnd
};

inline constexpr EventKind kAllEventKinds[] = {
    EventKind::ParseRequested, EventKind::PlanProduced, EventKind::PrecondCheck, EventKind::GraspProposed,
    EventKind::GraspVerdict,   EventKind::ViewSwitch,   EventKind::Executed,     EventKind::EffectCheck,
    EventKind::Replan,         EventKind::GoalCheck,    EventKind::EpisodeEnd};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::ParseRequested: return "ParseRequested";
    case EventKind::PlanProduced: return "PlanProduced";
    case EventKind::PrecondCheck: return "PrecondCheck";
    case EventKind::GraspProposed: return "GraspProposed";
    case EventKind::GraspVerdict: return "GraspVerdict";
    case EventKind::ViewSwitch: return "ViewSwitch";
    case EventKind::Executed: return "Executed";
    case EventKind::EffectCheck: return "EffectCheck";
    case EventKind::Replan: return "Replan";
    case EventKind::GoalCheck: return "GoalCheck";
    case EventKind::EpisodeEnd: return "EpisodeEnd";
  }
  return "?";
}

class CorruptTrace : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline EventKind event_kind_from_string(const std::string& s) {
  for (auto k : kAllEventKinds)
    if (s == to_string(k)) return k;
  throw CorruptTrace("unknown event kind '" + s + "'");
}

struct Event {
  std::uint64_t clock = 0;
  EventKind kind = EventKind::EpisodeEnd;
  nlohmann::json payload = nlohmann::json::object();
};

// Wall-clock fields; everything else in a trace is a function of seeds and config.
inline constexpr const char* kWallClockFields[] = {"latency_ms", "wall_ms"};

struct EpisodeTrace {
  std::vector<Event> events;
  std::map<std::string, std::size_t> calls;  // observer calls per request kind
  std::size_t tokens = 0;
  double observer_ms = 0.0;
  double wall_ms = 0.0;

  Event& add(EventKind kind, nlohmann::json payload = nlohmann::json::object()) {
    events.push_back({events.size(), kind, std::move(payload)});
    return events.back();
  }

  const Event* end_event() const {
    return !events.empty() && events.back().kind == EventKind::EpisodeEnd ? &events.back() : nullptr;
  }

  std::size_t count(EventKind k) const {
    std::size_t n = 0;
    for (const auto& e : events) n += e.kind == k;
    return n;
  }

  nlohmann::json totals() const {
    return {{"observer_calls", calls}, {"tokens", tokens}, {"latency_ms", observer_ms}, {"wall_ms", wall_ms}};
  }
};

inline nlohmann::json event_to_json(const Event& e) {
  return {{"clock", e.clock}, {"kind", to_string(e.kind)}, {"payload", e.payload}};
}

inline std::string to_jsonl(const EpisodeTrace& t) {
  std::string out;
  for (const auto& e : t.events) out += event_to_json(e).dump() + "\n";
  return out;
}

// Checks clock order and the single trailing EpisodeEnd.
inline EpisodeTrace from_jsonl(const std::string& text) {
  EpisodeTrace t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorruptTrace("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("clock") || !j.contains("kind") || !j.contains("payload") ||
        !j["clock"].is_number_unsigned() || !j["kind"].is_string())
      throw CorruptTrace("line " + std::to_string(lineno) + ": not a trace event");
    Event e{j["clock"].get<std::uint64_t>(), event_kind_from_string(j["kind"].get<std::string>()), j["payload"]};
    if (!t.events.empty() && e.clock <= t.events.back().clock)
      throw CorruptTrace("line " + std::to_string(lineno) + ": clock not increasing");
    if (!t.events.empty() && t.events.back().kind == EventKind::EpisodeEnd)
      throw CorruptTrace("line " + std::to_string(lineno) + ": event after EpisodeEnd");
    t.events.push_back(std::move(e));
  }
  if (!t.end_event()) throw CorruptTrace("trace has no EpisodeEnd");
  return t;
}

inline void strip_wall_clock(nlohmann::json& j) {
  if (j.is_object()) {
    for (const char* f : kWallClockFields) j.erase(f);
    for (auto& [k, v] : j.items()) strip_wall_clock(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_wall_clock(v);
  }
}

// JSONL with wall-clock fields removed, for determinism comparisons.
inline std::string deterministic_jsonl(const EpisodeTrace& t) {
  std::string out;
  for (const auto& e : t.events) {
    auto j = event_to_json(e);
    strip_wall_clock(j);
    out += j.dump() + "\n";
  }
  return out;
}

// Every observer verdict recorded in the trace, in call order.
inline std::vector<obs::ObserverVerdict> recorded_verdicts(const EpisodeTrace& t) {
  std::vector<obs::ObserverVerdict> out;
  for (const auto& e : t.events) {
    auto it = e.payload.find("queries");
    if (it == e.payload.end()) continue;
    for (const auto& q : *it) {
      const auto kind = obs::kind_from_string(q.at("kind").get<std::string>());
      if (!kind) throw CorruptTrace("unknown query kind in event " + std::to_string(e.clock));
      auto v = obs::verdict_from_json(*kind, q.at("verdict"));
      v.cost.latency_ms = q.value("latency_ms", 0.0);
      v.cost.tokens = q.value("tokens", std::size_t{0});
      out.push_back(std::move(v));
    }
  }
  return out;
}

// Score recomputed from the executed actions, the reference and the final goal check.
inline std::optional<bench::ScoreInput> score_input_from_trace(const EpisodeTrace& t) {
  const Event* end = t.end_event();
  if (!end || !end->payload.contains("reference") || end->payload["reference"].is_null()) return std::nullopt;
  std::vector<bench::ExecutedAction> executed;
  int p = 0;
  for (const auto& e : t.events) {
    if (e.kind == EventKind::Executed && e.payload.value("counted", false))
      executed.push_back({e.payload.at("action").get<std::string>(), e.payload.at("outcome") == "success"});
    if (e.kind == EventKind::GoalCheck) p = e.payload.at("satisfied") != e.payload.at("truth") ? 1 : 0;
  }
  return bench::score_input(executed, end->payload["reference"].get<std::vector<std::string>>(), p);
}

}  // namespace deskagent::agent
