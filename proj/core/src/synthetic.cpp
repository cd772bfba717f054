#include "mutdet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "mutdet/errors.hpp"
#include "mutdet/pseudo_labels.hpp"

namespace mutdet::synth {

namespace {

double unit(std::mt19937_64& rng) {
  // 53-bit mantissa draw; avoids libstdc++-specific distribution behavior.
  return double(rng() >> 11) * 0x1.0p-53;
}

struct Rgb {
  double r, g, b;
};

// Two palette entries per shape kind; kinds stay separable in color space.
constexpr Rgb kPalette[6] = {
    {0.85, 0.15, 0.10}, {0.95, 0.55, 0.10},  // rectangles: warm
    {0.10, 0.75, 0.20}, {0.40, 0.90, 0.55},  // ellipses: green
    {0.10, 0.30, 0.90}, {0.55, 0.65, 0.95},  // triangles: blue
};

bool inside_convex(const std::vector<geom::Vec2>& poly, geom::Vec2 p) {
  const int n = int(poly.size());
  for (int i = 0; i < n; ++i) {
    const geom::Vec2 a = poly[i];
    const geom::Vec2 b = poly[(i + 1) % n];
    if (geom::cross(b - a, p - a) < 0.0) return false;
  }
  return true;
}

void fill_polygon(Image& img, const std::vector<geom::Vec2>& poly, Rgb color) {
  double x0 = poly[0].x, x1 = poly[0].x, y0 = poly[0].y, y1 = poly[0].y;
  for (const auto& v : poly) {
    x0 = std::min(x0, v.x);
    x1 = std::max(x1, v.x);
    y0 = std::min(y0, v.y);
    y1 = std::max(y1, v.y);
  }
  const int px0 = std::max(0, int(std::floor(x0)));
  const int px1 = std::min(img.w - 1, int(std::ceil(x1)));
  const int py0 = std::max(0, int(std::floor(y0)));
  const int py1 = std::min(img.h - 1, int(std::ceil(y1)));
  for (int y = py0; y <= py1; ++y) {
    for (int x = px0; x <= px1; ++x) {
      if (!inside_convex(poly, {x + 0.5, y + 0.5})) continue;
      img.chan[0](y, x) = color.r;
      img.chan[1](y, x) = color.g;
      img.chan[2](y, x) = color.b;
    }
  }
}

std::vector<geom::Vec2> place_shape(ShapeKind kind, geom::Vec2 c, double r_max, double aspect,
                                    double angle, std::mt19937_64& rng) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  auto world = [&](double lx, double ly) -> geom::Vec2 {
    return {c.x + lx * ca - ly * sa, c.y + lx * sa + ly * ca};
  };
  std::vector<geom::Vec2> pts;
  switch (kind) {
    case ShapeKind::rectangle: {
      // Half-diagonal pinned to r_max so the corners respect the border.
      const double a = r_max / std::sqrt(1.0 + aspect * aspect);
      const double b = aspect * a;
      pts = {world(-a, -b), world(a, -b), world(a, b), world(-a, b)};
      break;
    }
    case ShapeKind::ellipse: {
      const double a = r_max;
      const double b = aspect * r_max;
      const int n = 24;
      const double phase = unit(rng) * 2.0 * geom::kPi;
      for (int i = 0; i < n; ++i) {
        const double t = phase + 2.0 * geom::kPi * i / n;
        pts.push_back(world(a * std::cos(t), b * std::sin(t)));
      }
      break;
    }
    case ShapeKind::triangle: {
      const double a = r_max / std::sqrt(1.0 + aspect * aspect);
      const double b = aspect * a;
      pts = {world(a, 0.0), world(-a, b), world(-a, -b)};
      break;
    }
  }
  // Vertex order above is CCW in local coordinates; a rotation keeps it CCW.
  return pts;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int n_objects, int size) {
  if (n_objects < 0) throw std::invalid_argument("generate_scene: n_objects < 0");
  if (size < 16) throw std::invalid_argument("generate_scene: size < 16");
  std::mt19937_64 rng(seed);

  Scene scene;
  scene.image.h = size;
  scene.image.w = size;
  for (auto& ch : scene.image.chan) ch = nn::Mat(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double g = 0.05 + 0.20 * unit(rng);
      scene.image.chan[0](y, x) = g;
      scene.image.chan[1](y, x) = g;
      scene.image.chan[2](y, x) = g;
    }
  }

  const double margin = 0.16 * size;
  for (int i = 0; i < n_objects; ++i) {
    Instance inst;
    const auto kind = ShapeKind(int(rng() % 3));
    inst.shape_kind = int(kind);
    inst.color_id = inst.shape_kind * 2 + int(rng() % 2);

    const double cx = margin + unit(rng) * (size - 2.0 * margin);
    const double cy = margin + unit(rng) * (size - 2.0 * margin);
    const double border = std::min(std::min(cx, cy), std::min(size - cx, size - cy)) - 1.0;
    double r = (0.35 + 0.45 * unit(rng)) * border;
    r = std::max(r, 2.5);
    const double aspect = 0.40 + 0.55 * unit(rng);
    const double angle = -geom::kPi / 2.0 + unit(rng) * geom::kPi;

    inst.polygon = place_shape(kind, {cx, cy}, r, aspect, angle, rng);
    fill_polygon(scene.image, inst.polygon, kPalette[inst.color_id]);
    scene.instances.push_back(std::move(inst));
  }
  return scene;
}

std::string image_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%04d", index);
  return buf;
}

void write_scene(const std::string& dir, const std::string& id, const Scene& scene) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string base = (fs::path(dir) / id).string();
  write_ppm(base + ".ppm", scene.image);
  std::vector<std::vector<geom::Vec2>> masks;
  masks.reserve(scene.instances.size());
  for (const auto& inst : scene.instances) masks.push_back(inst.polygon);
  labels::write_mask_file(base + ".masks.jsonl", masks);
}

std::vector<DatasetItem> list_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<DatasetItem> items;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path p = entry.path();
    if (p.extension() != ".ppm") continue;
    DatasetItem item;
    item.id = p.stem().string();
    item.image_path = p.string();
    item.mask_path = (p.parent_path() / (item.id + ".masks.jsonl")).string();
    items.push_back(std::move(item));
  }
  std::sort(items.begin(), items.end(),
            [](const DatasetItem& a, const DatasetItem& b) { return a.id < b.id; });
  return items;
}

}  // namespace mutdet::synth
