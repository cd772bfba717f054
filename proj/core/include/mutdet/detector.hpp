#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mutdet/enhancement.hpp"
#include "mutdet/geometry.hpp"
#include "mutdet/image.hpp"
#include "mutdet/losses.hpp"

namespace mutdet::det {

struct DetectorConfig {
  int image_size = 64;
  int C = 32;
  int N = 20;
  int K_cls = 16;
  int A_bins = 180;
  int encoder_layers = 1;
  int decoder_layers = 2;
  int enhancement_layers = 3;
  bool enhancement_enabled = true;
  bool two_stage_queries = false;
  bool deep_supervision = true;
  std::uint64_t init_seed = 7;
  std::uint64_t backbone_seed = 1234;

  int n_heads() const { return std::max(1, C / 32); }
  int mlp_hidden() const { return 4 * C; }
  void validate() const;  // throws ConfigError
};

/// Fixed strided patch embedding at two scales with a tanh nonlinearity.
/// Weights are derived from a seed and never live in a ParamStore, so no
/// gradient can ever reach them.
class FrozenBackbone {
 public:
  FrozenBackbone(int image_size, int C, std::uint64_t seed);

  /// K x C token matrix for an image of exactly the configured size.
  nn::Mat forward(const Image& img) const;

  /// Tokens for any image whose sides are divisible by every patch size.
  nn::Mat tokens_for(const Image& img) const;

  /// Raw crop embedding: axis-aligned enclosure of the box, bilinearly
  /// resized to 32x32, patch-embedded, global-average-pooled per scale and
  /// concatenated (length 2C).
  Eigen::VectorXd embed_crop(const Image& img, const geom::OrientedBox& box) const;

  int token_count() const;
  const std::vector<int>& patch_sizes() const { return patch_; }
  std::vector<std::pair<int, int>> grids() const;  // per-scale (rows, cols)
  int image_size() const { return image_size_; }

 private:
  int image_size_;
  int C_;
  std::vector<int> patch_;
  std::vector<nn::Mat> W_;  // per scale: C x (3 * ps * ps)
};

/// Fixed 2-D sinusoidal positional encodings for a stack of token grids,
/// concatenated in scale order; rows match the backbone token layout.
nn::Mat sinusoidal_positions(const std::vector<std::pair<int, int>>& grids, int C);

struct PretrainResult {
  loss::ComposedLoss loss;  // composed only by pretrain_forward
  std::vector<loss::BranchVars> main_layers;
  std::vector<loss::BranchVars> aux_layers;
  std::optional<loss::BranchVars> enc_top;
  nn::Var features;           // F (K x C)
  nn::Var enhanced_features;  // F_enh
  nn::Var o_enh;              // M x C

  /// View of the graphs, shaped for batch-level loss composition.
  loss::ImageForward image_forward(const loss::GtLabels& gt) const;
};

struct Discrepancy {
  double mean = 0.0;
  bool defined = false;
};

/// Mean cosine similarity over matched (annotation, prediction) embedding
/// pairs; undefined when nothing is matched.
Discrepancy feature_discrepancy(const nn::Mat& pred_emb, const nn::Mat& obj_emb,
                                const std::vector<int>& pred_of_ann);

class Detector {
 public:
  Detector(DetectorConfig cfg, nn::ParamStore& store);

  /// Creates every trainable tensor (queries, encoder, heads, decoder,
  /// enhancement) in a fixed order from cfg.init_seed.
  static void init_params(nn::ParamStore& store, const DetectorConfig& cfg);

  /// Builds the full pre-training graph set for one image without composing
  /// a loss, so a trainer can pool several images into one objective.
  PretrainResult pretrain_graphs(nn::Tape& t, const Image& img, const loss::GtLabels& gt,
                                 const loss::LossOptions& opt) const;

  /// pretrain_graphs plus a batch-of-one loss composition.
  PretrainResult pretrain_forward(nn::Tape& t, const Image& img, const loss::GtLabels& gt,
                                  const loss::LossOptions& opt) const;

  /// Deployment-shaped pass: encoder then decoder on plain F. Reads no
  /// enhancement parameter and consumes no object embeddings.
  std::vector<loss::BranchVars> finetune_forward(nn::Tape& t, const Image& img) const;

  loss::BranchVars encoder_proposals(nn::Tape& t, nn::Var f) const;

  const FrozenBackbone& backbone() const { return backbone_; }
  const DetectorConfig& config() const { return cfg_; }

 private:
  nn::Var encode(nn::Tape& t, const Image& img) const;
  std::vector<loss::BranchVars> decode(nn::Tape& t, nn::Var memory,
                                       const std::optional<loss::BranchVars>& proposals) const;
  loss::BranchVars apply_heads(nn::Tape& t, nn::Var x, const std::string& prefix) const;

  DetectorConfig cfg_;
  nn::ParamStore* store_;
  FrozenBackbone backbone_;
  nn::Mat positions_;
};

}  // namespace mutdet::det
