#include "doctest.h"

#include "mutdet/geometry.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

using namespace mutdet::geom;

namespace {

// Monte-Carlo IoU oracle: uniform samples over the joint axis-aligned
// enclosure of both boxes.
bool point_in_box(const OrientedBox& b, Vec2 p) {
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  const double dx = p.x - b.cx, dy = p.y - b.cy;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.w && std::abs(ly) <= 0.5 * b.h;
}

double mc_iou(const OrientedBox& a, const OrientedBox& b, int n, unsigned seed) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const OrientedBox* bx : {&a, &b}) {
    for (const Vec2& v : box_corners(*bx).vertices) {
      x0 = std::min(x0, v.x);
      x1 = std::max(x1, v.x);
      y0 = std::min(y0, v.y);
      y1 = std::max(y1, v.y);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
  long inter = 0, uni = 0;
  for (int i = 0; i < n; ++i) {
    const Vec2 p{ux(rng), uy(rng)};
    const bool ia = point_in_box(a, p), ib = point_in_box(b, p);
    inter += (ia && ib);
    uni += (ia || ib);
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

// Grid oracle for the minimum-area rectangle: enclosing rectangle area at
// every angle of a fixed grid.
double grid_rect_area(const std::vector<Vec2>& pts, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  double smin = 1e300, smax = -1e300, tmin = 1e300, tmax = -1e300;
  for (const Vec2& p : pts) {
    const double sp = c * p.x + s * p.y;
    const double tp = -s * p.x + c * p.y;
    smin = std::min(smin, sp);
    smax = std::max(smax, sp);
    tmin = std::min(tmin, tp);
    tmax = std::max(tmax, tp);
  }
  return (smax - smin) * (tmax - tmin);
}

OrientedBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uc(-1.0, 1.0), us(0.5, 2.0),
      ua(-kPi / 2, kPi / 2);
  return OrientedBox(uc(rng), uc(rng), us(rng), us(rng), ua(rng));
}

}  // namespace

TEST_CASE("normalize_angle maps into [-pi/2, pi/2)") {
  CHECK(normalize_angle(0.0) == 0.0);
  CHECK(normalize_angle(kPi / 2) == doctest::Approx(-kPi / 2).epsilon(1e-12));
  CHECK(normalize_angle(2.0) == doctest::Approx(2.0 - kPi).epsilon(1e-12));
  CHECK_THROWS_AS(normalize_angle(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(normalize_angle(INFINITY), std::invalid_argument);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng);
    const double r = normalize_angle(a);
    CHECK(r >= -kPi / 2);
    CHECK(r < kPi / 2);
    // result is congruent mod pi
    CHECK(std::remainder(r - a, kPi) == doctest::Approx(0.0).epsilon(1e-9));
    // idempotence, bit-exact
    CHECK(normalize_angle(r) == r);
  }
}

TEST_CASE("OrientedBox rejects degenerate extents") {
  CHECK_THROWS_AS(OrientedBox(0, 0, 0.0, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(OrientedBox(0, 0, 1, -2.0, 0), std::invalid_argument);
  const OrientedBox b(0, 0, 1, 1, kPi);  // angle canonicalized
  CHECK(b.angle == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("box_corners of the axis-aligned unit square") {
  const Polygon p = box_corners(OrientedBox(0.5, 0.5, 1, 1, 0));
  REQUIRE(p.vertices.size() == 4);
  CHECK(p.vertices[0].x == doctest::Approx(0.0));
  CHECK(p.vertices[0].y == doctest::Approx(0.0));
  CHECK(p.vertices[1].x == doctest::Approx(1.0));
  CHECK(p.vertices[1].y == doctest::Approx(0.0));
  CHECK(p.vertices[2].x == doctest::Approx(1.0));
  CHECK(p.vertices[2].y == doctest::Approx(1.0));
  CHECK(p.vertices[3].x == doctest::Approx(0.0));
  CHECK(p.vertices[3].y == doctest::Approx(1.0));
  CHECK(p.area() == doctest::Approx(1.0));
}

TEST_CASE("box_corners rotates (2x1 at 45 deg) as a hand-applied rotation") {
  const double a = kPi / 4;
  const Polygon p = box_corners(OrientedBox(0, 0, 2, 1, a));
  const double c = std::cos(a), s = std::sin(a);
  const Vec2 expect[4] = {{c * -1 - s * -0.5, s * -1 + c * -0.5},
                          {c * 1 - s * -0.5, s * 1 + c * -0.5},
                          {c * 1 - s * 0.5, s * 1 + c * 0.5},
                          {c * -1 - s * 0.5, s * -1 + c * 0.5}};
  for (int i = 0; i < 4; ++i) {
    CHECK(p.vertices[i].x == doctest::Approx(expect[i].x).epsilon(1e-12));
    CHECK(p.vertices[i].y == doctest::Approx(expect[i].y).epsilon(1e-12));
  }
}

TEST_CASE("box_corners centroid equals the box center") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    const OrientedBox b = random_box(rng);
    const Polygon p = box_corners(b);
    double mx = 0, my = 0;
    for (const Vec2& v : p.vertices) {
      mx += v.x;
      my += v.y;
    }
    CHECK(mx / 4 == doctest::Approx(b.cx).epsilon(1e-12));
    CHECK(my / 4 == doctest::Approx(b.cy).epsilon(1e-12));
  }
}

TEST_CASE("min_area_rect on the unit square corners") {
  const std::vector<Vec2> pts = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const OrientedBox b = min_area_rect(pts);
  CHECK(b.cx == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b.cy == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(b.w == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.h == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.w >= b.h);
  CHECK(b.angle == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("min_area_rect recovers a rotated unit square") {
  const double rot = 30.0 * kPi / 180.0;
  const double c = std::cos(rot), s = std::sin(rot);
  std::vector<Vec2> pts;
  for (const Vec2 q : {Vec2{-0.5, -0.5}, Vec2{0.5, -0.5}, Vec2{0.5, 0.5}, Vec2{-0.5, 0.5}}) {
    pts.push_back({0.3 + c * q.x - s * q.y, -0.2 + s * q.x + c * q.y});
  }
  const OrientedBox b = min_area_rect(pts);
  CHECK(std::abs(1.0 - b.w * b.h) < 1e-9);
  // brute-force support-angle grid cannot beat the caliper optimum
  for (int d = 0; d < 1800; ++d) {
    const double ga = d * (0.1 * kPi / 180.0);
    CHECK(b.w * b.h <= grid_rect_area(pts, ga) + 1e-9);
  }
}

TEST_CASE("min_area_rect: grid oracle and containment on random clouds") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_int_distribution<int> un(3, 40);
  for (int t = 0; t < 100; ++t) {
    std::vector<Vec2> pts;
    const int n = un(rng);
    for (int i = 0; i < n; ++i) pts.push_back({u(rng), u(rng)});
    OrientedBox b(0, 0, 1, 1, 0);
    try {
      b = min_area_rect(pts);
    } catch (const std::invalid_argument&) {
      continue;  // random collinear triple
    }
    const double area = b.w * b.h;
    for (int d = 0; d < 180; ++d) {
      CHECK(area <= grid_rect_area(pts, d * kPi / 180.0) + 1e-9);
    }
    // containment within 1e-9 slack
    const double c = std::cos(b.angle), s = std::sin(b.angle);
    for (const Vec2& p : pts) {
      const double dx = p.x - b.cx, dy = p.y - b.cy;
      CHECK(std::abs(c * dx + s * dy) <= 0.5 * b.w + 1e-9);
      CHECK(std::abs(-s * dx + c * dy) <= 0.5 * b.h + 1e-9);
    }
  }
}

TEST_CASE("min_area_rect rejects degenerate input") {
  CHECK_THROWS_AS(min_area_rect({{0, 0}, {1, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(min_area_rect({{0, 0}, {1, 1}, {2, 2}, {3, 3}}), std::invalid_argument);
}

TEST_CASE("rotated_iou basic anchors") {
  const OrientedBox a(0, 0, 1, 1, 0);
  CHECK(rotated_iou(a, a) == 1.0);
  const OrientedBox far(100, 0, 1, 1, 0.3);
  CHECK(rotated_iou(a, far) == 0.0);
  // unit square vs itself rotated 45 degrees: exact octagon overlap
  const OrientedBox r(0, 0, 1, 1, kPi / 4);
  const double expected = 2.0 * (std::sqrt(2.0) - 1.0) / (2.0 - 2.0 * (std::sqrt(2.0) - 1.0));
  CHECK(rotated_iou(a, r) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("rotated_iou is symmetric and agrees with Monte-Carlo") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 25; ++t) {
    const OrientedBox a = random_box(rng);
    const OrientedBox b = random_box(rng);
    const double ab = rotated_iou(a, b);
    CHECK(ab == rotated_iou(b, a));  // bit-exact by canonical operand order
    const double mc = mc_iou(a, b, 200000, 1000 + t);
    CHECK(std::abs(ab - mc) < 7e-3);
  }
}

TEST_CASE("rotated_iou invariant under joint rigid motion") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-2.0, 2.0), ua(-kPi, kPi);
  for (int t = 0; t < 50; ++t) {
    const OrientedBox a = random_box(rng);
    const OrientedBox b = random_box(rng);
    const double base = rotated_iou(a, b);
    const double dx = u(rng), dy = u(rng), rot = ua(rng);
    const double c = std::cos(rot), s = std::sin(rot);
    auto moved = [&](const OrientedBox& bx) {
      return OrientedBox(c * bx.cx - s * bx.cy + dx, s * bx.cx + c * bx.cy + dy,
                         bx.w, bx.h, bx.angle + rot);
    };
    CHECK(rotated_iou(moved(a), moved(b)) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("aa_giou anchors and angle exclusion") {
  const OrientedBox a(0.5, 0.5, 1, 1, 0);
  CHECK(aa_giou(a, a) == doctest::Approx(1.0));
  const OrientedBox touching(1.5, 0.5, 1, 1, 0);
  CHECK(aa_giou(a, touching) == doctest::Approx(0.0).epsilon(1e-12));
  const OrientedBox far(1e4, 0.5, 1, 1, 0);
  CHECK(aa_giou(a, far) < -0.99);
  // the angle field is never read
  const OrientedBox tilt_a(0.5, 0.5, 1, 1, 0.7);
  const OrientedBox tilt_b(1.5, 0.5, 1, 1, -1.2);
  CHECK(aa_giou(tilt_a, tilt_b) == aa_giou(a, touching));
}

TEST_CASE("aa_giou bounded above by axis-aligned IoU") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 300; ++t) {
    const OrientedBox a = random_box(rng);
    const OrientedBox b = random_box(rng);
    const double pa[4] = {a.cx, a.cy, a.w, a.h};
    const double pb[4] = {b.cx, b.cy, b.w, b.h};
    const double iw = std::max(0.0, std::min(pa[0] + pa[2] / 2, pb[0] + pb[2] / 2) -
                                        std::max(pa[0] - pa[2] / 2, pb[0] - pb[2] / 2));
    const double ih = std::max(0.0, std::min(pa[1] + pa[3] / 2, pb[1] + pb[3] / 2) -
                                        std::max(pa[1] - pa[3] / 2, pb[1] - pb[3] / 2));
    const double inter = iw * ih;
    const double uni = pa[2] * pa[3] + pb[2] * pb[3] - inter;
    const double iou = inter / uni;
    CHECK(aa_giou_xywh(pa, pb) <= iou + 1e-12);
  }
}
