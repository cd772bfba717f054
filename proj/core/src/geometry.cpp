#include "mutdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mutdet::geom {

namespace {
constexpr double kDedupTol = 1e-12;

bool lex_less(const Vec2& a, const Vec2& b) {
  return a.x < b.x || (a.x == b.x && a.y < b.y);
}
}  // namespace

double normalize_angle(double a) {
  if (!std::isfinite(a)) {
    throw std::invalid_argument("normalize_angle: non-finite angle");
  }
  double r = a - kPi * std::floor((a + kPi / 2.0) / kPi);
  // floor can land one period off at representation boundaries
  if (r < -kPi / 2.0) r += kPi;
  if (r >= kPi / 2.0) r -= kPi;
  return r;
}

OrientedBox::OrientedBox(double cx_, double cy_, double w_, double h_, double angle_)
    : cx(cx_), cy(cy_), w(w_), h(h_), angle(normalize_angle(angle_)) {
  if (!(std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h))) {
    throw std::invalid_argument("OrientedBox: non-finite field");
  }
  if (!(w > 0.0 && h > 0.0)) {
    throw std::invalid_argument("OrientedBox: degenerate extents (w, h must be > 0)");
  }
}

double Polygon::area() const {
  const size_t n = vertices.size();
  if (n < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    s += cross(vertices[j], vertices[i]);
  }
  return 0.5 * s;
}

Polygon box_corners(const OrientedBox& b) {
  const double c = std::cos(b.angle), s = std::sin(b.angle);
  const double hw = 0.5 * b.w, hh = 0.5 * b.h;
  // local CCW corners rotated into world coordinates
  const Vec2 local[4] = {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
  Polygon p;
  p.vertices.reserve(4);
  for (const Vec2& q : local) {
    p.vertices.push_back({b.cx + c * q.x - s * q.y, b.cy + s * q.x + c * q.y});
  }
  return p;
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), lex_less);
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Vec2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper chain
    while (k >= t && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  std::vector<Vec2> out = subject.vertices;
  const size_t m = clip.vertices.size();
  for (size_t e = 0; e < m && !out.empty(); ++e) {
    const Vec2 a = clip.vertices[e];
    const Vec2 b = clip.vertices[(e + 1) % m];
    const Vec2 dir = b - a;
    std::vector<Vec2> in;
    in.swap(out);
    const size_t n = in.size();
    for (size_t i = 0; i < n; ++i) {
      const Vec2 p = in[i];
      const Vec2 q = in[(i + 1) % n];
      const double dp = cross(dir, p - a);
      const double dq = cross(dir, q - a);
      if (dp >= 0.0) {
        out.push_back(p);
        if (dq < 0.0) {
          const double t = dp / (dp - dq);
          out.push_back(p + (q - p) * t);
        }
      } else if (dq >= 0.0) {
        const double t = dp / (dp - dq);
        out.push_back(p + (q - p) * t);
      }
    }
  }
  // merge consecutive near-duplicate vertices
  Polygon result;
  for (const Vec2& v : out) {
    if (!result.vertices.empty()) {
      const Vec2 d = v - result.vertices.back();
      if (std::abs(d.x) <= kDedupTol && std::abs(d.y) <= kDedupTol) continue;
    }
    result.vertices.push_back(v);
  }
  while (result.vertices.size() > 1) {
    const Vec2 d = result.vertices.front() - result.vertices.back();
    if (std::abs(d.x) <= kDedupTol && std::abs(d.y) <= kDedupTol) {
      result.vertices.pop_back();
    } else {
      break;
    }
  }
  return result;
}

namespace {

struct RectCandidate {
  double cx, cy, w, h, angle;
  double area;
};

RectCandidate canonicalize(RectCandidate r) {
  if (r.w < r.h) {
    std::swap(r.w, r.h);
    r.angle += kPi / 2.0;
  }
  r.angle = normalize_angle(r.angle);
  const double wh_tol = 1e-9 * std::max(r.w, r.h);
  if (std::abs(r.w - r.h) <= wh_tol) {
    // squares are pi/2-symmetric; fold into [0, pi/2)
    while (r.angle < 0.0) r.angle += kPi / 2.0;
    while (r.angle >= kPi / 2.0) r.angle -= kPi / 2.0;
  }
  return r;
}

}  // namespace

OrientedBox min_area_rect(const std::vector<Vec2>& points) {
  if (points.size() < 3) {
    throw std::invalid_argument("min_area_rect: need at least 3 points");
  }
  const std::vector<Vec2> hull = convex_hull(points);
  if (hull.size() < 3) {
    throw std::invalid_argument("min_area_rect: degenerate (collinear) input");
  }
  const size_t n = hull.size();
  double best_area = std::numeric_limits<double>::infinity();
  std::vector<RectCandidate> best;
  for (size_t i = 0; i < n; ++i) {
    const Vec2 a = hull[i];
    const Vec2 b = hull[(i + 1) % n];
    Vec2 u = b - a;
    const double len = std::hypot(u.x, u.y);
    if (len <= 0.0) continue;
    u = u * (1.0 / len);
    const Vec2 v{-u.y, u.x};
    double smin = dot(hull[0], u), smax = smin;
    double tmin = dot(hull[0], v), tmax = tmin;
    for (size_t j = 1; j < n; ++j) {
      const double s = dot(hull[j], u);
      const double t = dot(hull[j], v);
      smin = std::min(smin, s);
      smax = std::max(smax, s);
      tmin = std::min(tmin, t);
      tmax = std::max(tmax, t);
    }
    const double w = smax - smin, h = tmax - tmin;
    const double area = w * h;
    const double sc = 0.5 * (smin + smax), tc = 0.5 * (tmin + tmax);
    RectCandidate cand{u.x * sc + v.x * tc, u.y * sc + v.y * tc,
                       w, h, std::atan2(u.y, u.x), area};
    if (area < best_area * (1.0 - 1e-12)) {
      best_area = area;
      best.clear();
      best.push_back(cand);
    } else if (area <= best_area * (1.0 + 1e-12)) {
      best_area = std::min(best_area, area);
      best.push_back(cand);
    }
  }
  RectCandidate pick = canonicalize(best.front());
  for (size_t i = 1; i < best.size(); ++i) {
    const RectCandidate c = canonicalize(best[i]);
    if (c.angle < pick.angle) pick = c;
  }
  return OrientedBox(pick.cx, pick.cy, pick.w, pick.h, pick.angle);
}

double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  // evaluate on a canonical operand order so iou(a,b) == iou(b,a) bit-for-bit
  const double ka[5] = {a.cx, a.cy, a.w, a.h, a.angle};
  const double kb[5] = {b.cx, b.cy, b.w, b.h, b.angle};
  const bool swap_args = std::lexicographical_compare(kb, kb + 5, ka, ka + 5);
  const OrientedBox& p = swap_args ? b : a;
  const OrientedBox& q = swap_args ? a : b;
  const Polygon pp = box_corners(p);
  const Polygon qq = box_corners(q);
  const double inter = clip_convex(pp, qq).area();
  const double area_p = p.w * p.h;
  const double area_q = q.w * q.h;
  const double uni = area_p + area_q - inter;
  if (uni <= 0.0) return 0.0;
  const double iou = inter / uni;
  return std::clamp(iou, 0.0, 1.0);
}

double aa_giou_xywh(const double a[4], const double b[4]) {
  const double ax0 = a[0] - 0.5 * a[2], ax1 = a[0] + 0.5 * a[2];
  const double ay0 = a[1] - 0.5 * a[3], ay1 = a[1] + 0.5 * a[3];
  const double bx0 = b[0] - 0.5 * b[2], bx1 = b[0] + 0.5 * b[2];
  const double by0 = b[1] - 0.5 * b[3], by1 = b[1] + 0.5 * b[3];
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a[2] * a[3] + b[2] * b[3] - inter;
  const double cw = std::max(ax1, bx1) - std::min(ax0, bx0);
  const double ch = std::max(ay1, by1) - std::min(ay0, by0);
  const double enclosure = cw * ch;
  return inter / uni - (enclosure - uni) / enclosure;
}

double aa_giou(const OrientedBox& a, const OrientedBox& b) {
  const double pa[4] = {a.cx, a.cy, a.w, a.h};
  const double pb[4] = {b.cx, b.cy, b.w, b.h};
  return aa_giou_xywh(pa, pb);
}

}  // namespace mutdet::geom
