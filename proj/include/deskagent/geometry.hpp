#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

namespace deskagent {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

// Axis-aligned box given by center and full extents.
struct Box {
  Vec2 center;
  double w = 0.0;
  double d = 0.0;

  double min_x() const { return center.x - w / 2; }
  double max_x() const { return center.x + w / 2; }
  double min_y() const { return center.y - d / 2; }
  double max_y() const { return center.y + d / 2; }
  double area() const { return w * d; }
  bool contains(Vec2 p) const { return p.x >= min_x() && p.x <= max_x() && p.y >= min_y() && p.y <= max_y(); }
  bool operator==(const Box&) const = default;
};

inline Box from_corners(double x0, double y0, double x1, double y1) {
  return {{(x0 + x1) / 2, (y0 + y1) / 2}, x1 - x0, y1 - y0};
}

inline double intersection_area(const Box& a, const Box& b) {
  const double ix = std::min(a.max_x(), b.max_x()) - std::max(a.min_x(), b.min_x());
  const double iy = std::min(a.max_y(), b.max_y()) - std::max(a.min_y(), b.min_y());
  return ix > 0 && iy > 0 ? ix * iy : 0.0;
}

inline bool overlaps(const Box& a, const Box& b) { return intersection_area(a, b) > 0.0; }

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Rectangle rotated by `yaw` radians; `w` runs along the yaw direction.
struct OrientedRect {
  Vec2 center;
  double w = 0.0;
  double d = 0.0;
  double yaw = 0.0;

  bool contains(Vec2 p) const {
    const Vec2 r = p - center;
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double u = r.x * c + r.y * s;
    const double v = -r.x * s + r.y * c;
    return std::abs(u) <= w / 2 && std::abs(v) <= d / 2;
  }

  Box bounds() const {
    const double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
    return {center, w * c + d * s, w * s + d * c};
  }
};

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Visits cell centers of a `res` grid covering `b`, aligned to the global origin.
template <typename F>
void for_each_cell(const Box& b, double res, F&& f) {
  const long x0 = static_cast<long>(std::floor(b.min_x() / res));
  const long x1 = static_cast<long>(std::ceil(b.max_x() / res));
  const long y0 = static_cast<long>(std::floor(b.min_y() / res));
  const long y1 = static_cast<long>(std::ceil(b.max_y() / res));
  for (long i = x0; i < x1; ++i)
    for (long j = y0; j < y1; ++j) f(Vec2{(static_cast<double>(i) + 0.5) * res, (static_cast<double>(j) + 0.5) * res});
}

}  // namespace deskagent
