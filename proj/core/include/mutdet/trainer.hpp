#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mutdet/config.hpp"
#include "mutdet/detector.hpp"
#include "mutdet/param_store.hpp"
#include "mutdet/synthetic.hpp"

namespace mutdet::train {

/// Adaptive-moment optimizer with decoupled weight decay. State is keyed by
/// parameter name and covers exactly what the store holds; the frozen
/// backbone never appears because it never enters a ParamStore.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8);

  void step(nn::ParamStore& store, double lr);
  int steps_taken() const { return t_; }
  bool has_state(const std::string& name) const { return m_.count(name) > 0; }

 private:
  double beta1_, beta2_, weight_decay_, eps_;
  int t_ = 0;
  std::map<std::string, nn::Mat> m_, v_;
};

struct TrainExample {
  std::string id;
  Image image;
  loss::GtLabels gt;  // boxes normalized by the image extent
};

/// Joins images with their label-store entries. Every image must have an
/// entry (possibly empty); annotations beyond max_objects are dropped from
/// the end, and embedding width must equal expected_emb_dim.
std::vector<TrainExample> load_dataset(const std::string& data_dir,
                                       const std::string& labels_path, int max_objects,
                                       int expected_emb_dim, int max_class);

/// Writes <count> procedural scenes into out_dir; per-image object counts are
/// drawn uniformly from [1, max_objects] (or all zero when max_objects <= 0).
void generate_dataset(const std::string& out_dir, std::uint64_t seed, int count,
                      int max_objects, int size = 64);

struct PrepareStats {
  int images = 0;
  int instances = 0;
  int dropped = 0;
};

/// Offline pseudo-label pipeline over a dataset directory: min-area boxes
/// from masks, frozen-extractor crop embeddings, PCA to `dim`, row
/// normalization, k-means class ids; the result lands in a label store.
PrepareStats prepare_label_store(const std::string& data_dir, int clusters, int dim,
                                 const std::string& out_path,
                                 std::uint64_t backbone_seed = 1234, int backbone_C = 32);

struct MetricsRow {
  int iteration = 0;
  int epoch = 0;
  double lr = 0.0;
  loss::LossBreakdown parts;  // batch means
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  int iterations = 0;
  nn::ParamStore store;  // final parameters
};

/// Full pre-training loop: linear warmup then step decay, summed batch
/// gradients scaled by the batch size, per-iteration metrics, checkpoint at
/// the end (and every checkpoint_every epochs when set). Empty ckpt_out or
/// metrics_path skips that output. NaN losses abort with the batch id.
TrainResult pretrain(const cfg::RunConfig& rc, const std::string& data_dir,
                     const std::string& labels_path, const std::string& ckpt_out,
                     const std::string& metrics_path);

struct AlignmentReport {
  std::vector<std::pair<std::string, double>> per_image;  // only matched images
  int matched_images = 0;
  double mean = 0.0;
};

/// Deployment-shaped evaluation: decode plain features, Hungarian-match the
/// final predictions, report mean cosine similarity between matched predicted
/// embeddings and the stored object embeddings.
AlignmentReport eval_alignment(const cfg::RunConfig& rc, nn::ParamStore& store,
                               const std::string& data_dir, const std::string& labels_path);

/// Metrics JSONL -> CSV with fixed columns iteration, ca_det, cls, reg, ang,
/// ca_aux, cls_aux, reg_aux, ang_aux, total. Malformed rows raise a DataError
/// naming the line.
void emit_loss_curves(const std::string& metrics_path, const std::string& csv_path);

}  // namespace mutdet::train
