#pragma once

#include <stdexcept>
#include <vector>

#include "deskagent/geometry.hpp"

namespace deskagent::bench {

class DegenerateRegion : public std::invalid_argument {
 public:
  DegenerateRegion() : std::invalid_argument("truth region has zero area") {}
};

struct DetectorScore {
  bool point_in_mask = false;
  double iou = 0.0;
};

// `mask` is the annotated object as a set of cells; `truth` its bounding box.
inline DetectorScore detector_metrics(Vec2 point, const Box& predicted, const std::vector<Box>& mask, const Box& truth) {
  if (!(truth.area() > 0.0)) throw DegenerateRegion();
  DetectorScore s;
  for (const auto& cell : mask)
    if (cell.contains(point)) s.point_in_mask = true;
  s.iou = iou(predicted, truth);
  return s;
}

}  // namespace deskagent::bench
