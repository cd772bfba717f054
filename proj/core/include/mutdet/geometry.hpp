#pragma once

#include <vector>

namespace mutdet::geom {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

/// Maps a finite angle into [-pi/2, pi/2), modulo pi.
double normalize_angle(double a);

/// Rotated rectangle with center (cx, cy), extents w x h and rotation
/// `angle` in radians. Construction rejects non-positive extents and
/// canonicalizes the angle.
struct OrientedBox {
  double cx, cy, w, h, angle;
  OrientedBox(double cx_, double cy_, double w_, double h_, double angle_);
};

/// Simple polygon, vertices in counter-clockwise order.
struct Polygon {
  std::vector<Vec2> vertices;
  double area() const;  // shoelace; >= 0 for CCW input
};

/// The four corners of a box, CCW, starting from the (-w/2, -h/2) corner.
Polygon box_corners(const OrientedBox& b);

/// Convex hull (CCW, collinear points dropped). Returns < 3 vertices for
/// degenerate input.
std::vector<Vec2> convex_hull(std::vector<Vec2> points);

/// Sutherland-Hodgman clipping of a convex subject by a convex CCW clip
/// polygon. Consecutive output vertices closer than 1e-12 are merged.
Polygon clip_convex(const Polygon& subject, const Polygon& clip);

/// Minimum-area enclosing rectangle of >= 3 non-collinear points
/// (rotating calipers over the convex hull). Canonical output: w >= h;
/// squares report the optimum angle folded into [0, pi/2).
OrientedBox min_area_rect(const std::vector<Vec2>& points);

/// Exact intersection-over-union of two rotated rectangles.
double rotated_iou(const OrientedBox& a, const OrientedBox& b);

/// Axis-aligned generalized IoU on the (cx, cy, w, h) fields; the angle
/// field is never read.
double aa_giou(const OrientedBox& a, const OrientedBox& b);
double aa_giou_xywh(const double a[4], const double b[4]);

}  // namespace mutdet::geom
