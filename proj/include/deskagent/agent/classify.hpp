#pragma once

#include <stdexcept>
#include <string>

#include "deskagent/agent/trace.hpp"

namespace deskagent::agent {

enum class FailureMode { Parser, Detector, Grasp, ActionChecker, GoalChecker, Execution, Budget };

inline constexpr FailureMode kAllFailureModes[] = {FailureMode::Parser,        FailureMode::Detector,
                                                   FailureMode::Grasp,         FailureMode::ActionChecker,
                                                   FailureMode::GoalChecker,   FailureMode::Execution,
                                                   FailureMode::Budget};

inline const char* to_string(FailureMode m) {
  switch (m) {
    case FailureMode::Parser: return "parser";
    case FailureMode::Detector: return "detector";
    case FailureMode::Grasp: return "grasp";
    case FailureMode::ActionChecker: return "action-checker";
    case FailureMode::GoalChecker: return "goal-checker";
    case FailureMode::Execution: return "execution";
    case FailureMode::Budget: return "budget";
  }
  return "?";
}

class NotAFailure : public std::invalid_argument {
 public:
  NotAFailure() : std::invalid_argument("episode succeeded; nothing to attribute") {}
};

inline bool truly_succeeded(const EpisodeTrace& t) {
  const Event* end = t.end_event();
  if (!end) throw CorruptTrace("trace has no EpisodeEnd");
  const auto& s = end->payload.at("success");
  return s.is_boolean() ? s.get<bool>() : end->payload.value("claimed_success", false);
}

// Attributes a failed episode to the earliest module whose verdict or outcome
// disagrees with the ground truth recorded alongside it.
inline FailureMode classify_failure(const EpisodeTrace& t) {
  if (truly_succeeded(t)) throw NotAFailure();
  auto disagrees = [](const nlohmann::json& p, const char* said) {
    return p.contains("truth") && p["truth"].is_boolean() && p.contains(said) && p[said] != p["truth"];
  };
  for (const auto& e : t.events) {
    const auto& p = e.payload;
    switch (e.kind) {
      case EventKind::ParseRequested:
        if (p.contains("truth") && p["truth"] == false) return FailureMode::Parser;
        break;
      case EventKind::GraspProposed:
        if (p.contains("detect_truth") && p["detect_truth"] == false) return FailureMode::Detector;
        break;
      case EventKind::GraspVerdict:
        if (disagrees(p, "accept")) return FailureMode::Grasp;
        break;
      case EventKind::PrecondCheck:
      case EventKind::EffectCheck:
        if (disagrees(p, "success")) return FailureMode::ActionChecker;
        break;
      case EventKind::GoalCheck:
        if (disagrees(p, "satisfied")) return FailureMode::GoalChecker;
        break;
      case EventKind::Executed:
        if (p.value("counted", false) && p.value("outcome", "") != "success") return FailureMode::Execution;
        break;
      default: break;
    }
  }
  return FailureMode::Budget;
}

}  // namespace deskagent::agent
