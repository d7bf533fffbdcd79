#pragma once

#include <vector>

#include "deskagent/geometry.hpp"

namespace deskagent::grasp {

inline constexpr double kGridResolution = 0.25;  // cm
inline constexpr double kJawClearance = 1.0;     // cm added to the candidate width
inline constexpr double kJawDepth = 2.0;         // cm

// Region swept by the closing jaws for a grasp at `pose` with opening `width`.
inline OrientedRect gripper_sweep(Vec2 pose, double yaw, double width) {
  return {pose, width + kJawClearance, kJawDepth, yaw};
}

// Fraction of the sweep, outside the target's own footprint, covered by obstacles.
// Cells are counted once however many obstacles overlap them. Returns 0 when the
// target covers the whole sweep.
inline double collision_fraction(const OrientedRect& sweep, const Box& target, const std::vector<Box>& obstacles) {
  std::size_t free_cells = 0, blocked = 0;
  for_each_cell(sweep.bounds(), kGridResolution, [&](Vec2 c) {
    if (!sweep.contains(c) || target.contains(c)) return;
    ++free_cells;
    for (const auto& o : obstacles) {
      if (o.contains(c)) {
        ++blocked;
        return;
      }
    }
  });
  return free_cells ? static_cast<double>(blocked) / static_cast<double>(free_cells) : 0.0;
}

}  // namespace deskagent::grasp
