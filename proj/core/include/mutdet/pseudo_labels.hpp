#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mutdet/geometry.hpp"

namespace mutdet::labels {

/// Scales v to unit Euclidean norm. Throws on (near-)zero input.
Eigen::VectorXd l2_normalize(const Eigen::VectorXd& v);

/// Principal-component model fit by SVD of the centered sample matrix.
/// `components` holds r <= out_dim orthonormal rows ordered by descending
/// explained variance; projections are zero-padded to out_dim when the
/// sample rank is lower.
struct PcaModel {
  Eigen::VectorXd mean;                // D_in
  Eigen::MatrixXd components;          // r x D_in, orthonormal rows
  Eigen::VectorXd explained_variance;  // r, non-increasing
  int out_dim = 0;
};

PcaModel pca_fit(const Eigen::MatrixXd& X, int target_dim);
Eigen::VectorXd pca_project(const PcaModel& m, const Eigen::VectorXd& v);

struct KMeansModel {
  Eigen::MatrixXd centroids;  // k x C
  double inertia = 0.0;
};

/// Lloyd iterations with k-means++ seeding; deterministic for a fixed seed.
/// Empty clusters are re-seeded from the point farthest from its centroid.
KMeansModel kmeans_fit(const Eigen::MatrixXd& X, int k, int max_iters, std::uint64_t seed);

/// Nearest centroid by squared Euclidean distance, ties to the lowest index.
int assign_cluster(const KMeansModel& m, const Eigen::VectorXd& v);

struct PseudoLabel {
  geom::OrientedBox box;
  int cls = 0;
  double angle = 0.0;  // copy of box.angle
  Eigen::VectorXd embedding;
};

struct PseudoLabelSet {
  std::string image_id;
  std::vector<PseudoLabel> entries;
};

/// Raw-feature hook: receives the oriented box of one instance and returns
/// the pooled backbone feature of its image crop.
using EmbedFn = std::function<Eigen::VectorXd(const geom::OrientedBox&)>;

struct PipelineResult {
  PseudoLabelSet labels;
  int dropped = 0;  // degenerate instances skipped with a warning
};

/// Converts per-instance point sets into pseudo-labels: min-area box,
/// embed, PCA-project, normalize, cluster-assign. Degenerate instances are
/// dropped; if every instance degenerates a DataError is raised.
///
/// The default order projects raw features first and normalizes the
/// projection; `normalize_before_projection` flips that order.
PipelineResult masks_to_pseudolabels(const std::string& image_id,
                                     const std::vector<std::vector<geom::Vec2>>& masks,
                                     const EmbedFn& embed_fn, const PcaModel& pca,
                                     const KMeansModel& km,
                                     bool normalize_before_projection = false);

// Label store: one JSON object per line, suffix .plabels.jsonl, floats
// printed with 17 significant digits so parsing restores them bit-exactly.
void write_label_store(const std::string& path, const std::vector<PseudoLabelSet>& sets);
std::vector<PseudoLabelSet> read_label_store(const std::string& path);

// Mask input: one instance per line, a JSON array of [x, y] points.
void write_mask_file(const std::string& path, const std::vector<std::vector<geom::Vec2>>& masks);
std::vector<std::vector<geom::Vec2>> read_mask_file(const std::string& path);

/// Canonical 17-significant-digit rendering used by every text format in
/// this project; strtod round-trips it to the identical double.
std::string format_double(double v);

}  // namespace mutdet::labels
