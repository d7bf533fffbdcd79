#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace deskagent::bench {

struct ScoreInput {
  std::size_t N = 0;        // executed actions, failed ones included
  std::size_t N_done = 0;   // actions matching the required sequence
  std::size_t N_extra = 0;  // effective actions outside it
  int p = 0;                // 1 when the final goal verdict was wrong
};

class ZeroActions : public std::domain_error {
 public:
  ZeroActions() : std::domain_error("score undefined for an episode with no executed actions") {}
};

inline constexpr double kGoalPenalty = 0.1;

// (N_done - N_extra) / N - 0.1 p, unclamped.
inline double progress_score(const ScoreInput& in) {
  if (in.N == 0) throw ZeroActions();
  if (in.p != 0 && in.p != 1) throw std::invalid_argument("p must be 0 or 1");
  return (static_cast<double>(in.N_done) - static_cast<double>(in.N_extra)) / static_cast<double>(in.N) -
         kGoalPenalty * in.p;
}

struct ExecutedAction {
  std::string action;  // ground action text, e.g. "(pick apple)"
  bool effective = false;
};

struct Alignment {
  std::size_t done = 0;
  std::size_t extra = 0;
  bool operator==(const Alignment&) const = default;
};

// Walks the executed actions in order. An effective action is done when it is the
// next unmatched reference step, otherwise extra. Failed executions count as neither.
inline Alignment required_sequence_match(const std::vector<ExecutedAction>& executed,
                                         const std::vector<std::string>& reference) {
  Alignment a;
  std::size_t next = 0;
  for (const auto& e : executed) {
    if (!e.effective) continue;
    if (next < reference.size() && e.action == reference[next]) {
      ++a.done;
      ++next;
    } else {
      ++a.extra;
    }
  }
  return a;
}

inline ScoreInput score_input(const std::vector<ExecutedAction>& executed, const std::vector<std::string>& reference,
                              int p) {
  const auto a = required_sequence_match(executed, reference);
  return {executed.size(), a.done, a.extra, p};
}

}  // namespace deskagent::bench
