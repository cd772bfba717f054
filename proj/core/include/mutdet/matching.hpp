#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace mutdet::match {

struct MatchAssignment {
  // (annotation index, prediction index), sorted by annotation index.
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_predictions;  // ascending
  double total_cost = 0.0;

  /// prediction_for[i] = matched prediction of annotation i.
  std::vector<int> prediction_for() const;
};

/// Minimum-cost injective assignment of rows (annotations) to columns
/// (predictions), rows() <= cols(). Ties are broken toward the
/// lexicographically smallest assignment vector (j_0, j_1, ...).
MatchAssignment hungarian(const Eigen::MatrixXd& cost);

struct MatchWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double ang = 0.5;
};

struct MatchCostOptions {
  MatchWeights weights;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double csl_sigma = 4.0;
  int csl_radius = 12;
};

/// M x N matching cost between annotations and predictions. Boxes are
/// (cx, cy, w, h) in normalized coordinates; the box distance terms never
/// look at angles — orientation enters only through the angle-score term.
Eigen::MatrixXd match_cost(const Eigen::MatrixXd& pred_boxes,     // N x 4
                           const Eigen::MatrixXd& cls_logits,     // N x K
                           const Eigen::MatrixXd& angle_logits,   // N x A
                           const Eigen::MatrixXd& gt_boxes,       // M x 4
                           const std::vector<int>& gt_cls,        // M
                           const std::vector<double>& gt_angles,  // M
                           const MatchCostOptions& opt);

}  // namespace mutdet::match
