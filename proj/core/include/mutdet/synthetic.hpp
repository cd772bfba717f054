#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mutdet/geometry.hpp"
#include "mutdet/image.hpp"

namespace mutdet::synth {

enum class ShapeKind : int { rectangle = 0, ellipse = 1, triangle = 2 };

struct Instance {
  std::vector<geom::Vec2> polygon;  // CCW mask outline, inside image bounds
  int shape_kind = 0;
  int color_id = 0;
};

struct Scene {
  Image image;
  std::vector<Instance> instances;
};

/// Deterministic procedural scene: a noisy gray background with n_objects
/// solid rotated shapes (rectangle / ellipse / triangle). Each shape kind
/// draws from its own pair of palette colors, so pixel statistics separate
/// the kinds. Every mask outline stays strictly inside the image.
Scene generate_scene(std::uint64_t seed, int n_objects, int size);

/// Zero-padded id used for dataset file names ("img_0000", ...).
std::string image_id(int index);

/// Writes `scene` into `dir` as <id>.ppm plus <id>.masks.jsonl.
void write_scene(const std::string& dir, const std::string& id, const Scene& scene);

struct DatasetItem {
  std::string id;
  std::string image_path;
  std::string mask_path;
};

/// All <id>.ppm files under `dir`, sorted by id. The mask path is derived
/// and may not exist for externally produced images.
std::vector<DatasetItem> list_dataset(const std::string& dir);

}  // namespace mutdet::synth
