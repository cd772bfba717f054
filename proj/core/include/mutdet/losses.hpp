#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mutdet/matching.hpp"
#include "mutdet/tape.hpp"

namespace mutdet::loss {

using nn::Mat;
using nn::Tape;
using nn::Var;

/// Numerically stable log(sigmoid(s)).
double log_sigmoid(double s);

/// Circularly Gaussian-smoothed angle target over `bins` bins spanning one
/// angle period. Peak value exactly 1 at the bin containing `angle`; zero
/// outside `radius` bins from the peak.
Eigen::VectorXd csl_target(double angle, int bins, double sigma, int radius);

/// A scalar loss term that may be absent (e.g. no objects in the image).
/// Inactive terms carry a constant-zero node so compositions stay uniform.
struct MaybeLoss {
  Var value;
  bool active = true;
};

/// Symmetric temperature-scaled alignment loss between two index-aligned,
/// row-normalized embedding sets (M x C each). Returns an inactive zero for
/// M = 0. Rows must be unit-norm within 1e-6.
MaybeLoss contrastive_alignment_loss(Var Z, Var O, double tau);

/// Binary focal loss over all N x K logit entries, normalized by the number
/// of matched predictions (at least 1). target_class[j] is the annotation
/// class carried by prediction j, or -1 for background.
Var focal_loss(Var cls_logits, const std::vector<int>& target_class, double alpha,
               double gamma);

/// L1 + GIoU box loss over matched pairs, averaged over matches. Boxes are
/// (cx, cy, w, h) in normalized coordinates; angles never enter.
MaybeLoss reg_loss(Var pred_boxes, const Mat& gt_boxes, const std::vector<int>& pred_of_ann,
                   double w_l1, double w_giou);

/// Per-bin sigmoid BCE against the smoothed circular angle target, summed
/// over bins and averaged over matched predictions.
MaybeLoss angle_csl_loss(Var angle_logits, const std::vector<double>& gt_angles,
                         const std::vector<int>& pred_of_ann, double sigma, int radius);

/// Eq-style detector alignment term: contrastive loss of the encoder-side and
/// decoder-side positive embeddings against the enhanced object embeddings.
/// Inputs are raw embeddings; rows are L2-normalized here, first.
MaybeLoss detector_alignment_loss(Var enc_pos, Var dec_pos, Var o_enh, double tau);

/// Mean squared error between F and a stop-gradient copy of F_enh.
Var encoder_feature_distill(Var features, Var enhanced_features);

/// Soft-target quality-focal classification term between student logits and
/// fixed teacher probabilities, normalized by row count.
Var qfl_soft(Var student_logits, const Mat& teacher_probs, double gamma);

/// Mean squared error against a constant target.
Var mse_to_const(Var x, const Mat& target);

enum class CalibrationMode { none, encoder_distill, decoder_distill, siamese };
CalibrationMode parse_calibration_mode(const std::string& s);
std::string to_string(CalibrationMode m);

struct LossBreakdown {
  double ca_det = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double ang = 0.0;
  double ca_aux = 0.0;
  double cls_aux = 0.0;
  double reg_aux = 0.0;
  double ang_aux = 0.0;
  double total = 0.0;
};

/// One decoder layer's (or the encoder head's) predictions, on-tape.
struct BranchVars {
  Var boxes;       // N x 4, sigmoid-bounded (cx, cy, w, h)
  Var cls_logits;  // N x K_cls
  Var ang_logits;  // N x A_bins
  Var embeddings;  // N x C
};

/// Per-image annotation bundle, already in normalized coordinates.
struct GtLabels {
  Mat boxes;                  // M x 4 (cx, cy, w, h)
  std::vector<int> cls;       // M
  std::vector<double> angles; // M, canonicalized radians
  Mat embeddings;             // M x C_emb, unit rows
  int count() const { return int(boxes.rows()); }
};

struct LossOptions {
  match::MatchCostOptions matching;
  double tau = 0.2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double qfl_gamma = 2.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  bool deep_supervision = true;
  CalibrationMode mode = CalibrationMode::siamese;
};

struct ComposedLoss {
  Var total;
  LossBreakdown parts;
};

/// One image's forward graphs plus its labels, for batch-level composition.
/// The pointed-to vectors must stay alive until compose_losses returns.
struct ImageForward {
  const std::vector<BranchVars>* main_layers = nullptr;
  const std::optional<BranchVars>* enc_top = nullptr;
  const std::vector<BranchVars>* aux_layers = nullptr;
  Var o_enh;
  Var features;
  Var enhanced_features;
  const GtLabels* gt = nullptr;
};

/// Assembles the full training objective over a batch. main_layers are the
/// decoder outputs on the enhanced features (innermost first, final layer
/// last); enc_top are the encoder's top-N proposals on the enhanced features;
/// aux_layers are the decoder outputs on the plain features (empty unless the
/// mode needs them). Detection and distillation terms are per-image means.
/// The alignment terms stack the matched pairs of every image in the batch
/// into one contrastive call, so each pair is contrasted against the whole
/// batch's objects: negatives that share a location but not content are what
/// keep the enhanced embeddings from collapsing onto a position code.
/// Distillation modes place their terms in the aux slots: encoder-distill
/// fills ca_aux with the feature MSE; decoder-distill fills cls_aux with the
/// soft QFL and ca_aux with the embedding MSE.
ComposedLoss compose_losses(Tape& t, const std::vector<ImageForward>& batch,
                            const LossOptions& opt);

/// Single-image convenience overload: a batch of one.
ComposedLoss compose_losses(Tape& t, const std::vector<BranchVars>& main_layers,
                            const std::optional<BranchVars>& enc_top,
                            const std::vector<BranchVars>& aux_layers, Var o_enh,
                            Var features, Var enhanced_features, const GtLabels& gt,
                            const LossOptions& opt);

}  // namespace mutdet::loss
