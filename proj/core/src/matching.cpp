#include "mutdet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mutdet/geometry.hpp"
#include "mutdet/losses.hpp"

namespace mutdet::match {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Jonker-style shortest-augmenting-path assignment. Returns col_of_row for
/// an (unspecified) optimal assignment plus nothing else; callers needing a
/// deterministic tie-break refine on top of this.
std::vector<int> solve_assignment(const Eigen::MatrixXd& a) {
  const int n = int(a.rows()), m = int(a.cols());
  std::vector<double> u(std::size_t(n) + 1, 0.0), v(std::size_t(m) + 1, 0.0);
  std::vector<int> p(std::size_t(m) + 1, 0), way(std::size_t(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(std::size_t(m) + 1, kInf);
    std::vector<char> used(std::size_t(m) + 1, 0);
    do {
      used[std::size_t(j0)] = 1;
      const int i0 = p[std::size_t(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[std::size_t(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[std::size_t(i0)] - v[std::size_t(j)];
        if (cur < minv[std::size_t(j)]) {
          minv[std::size_t(j)] = cur;
          way[std::size_t(j)] = j0;
        }
        if (minv[std::size_t(j)] < delta) {
          delta = minv[std::size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[std::size_t(j)]) {
          u[std::size_t(p[std::size_t(j)])] += delta;
          v[std::size_t(j)] -= delta;
        } else {
          minv[std::size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[std::size_t(j0)] != 0);
    do {
      const int j1 = way[std::size_t(j0)];
      p[std::size_t(j0)] = p[std::size_t(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(std::size_t(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[std::size_t(j)] != 0) col_of_row[std::size_t(p[std::size_t(j)] - 1)] = j - 1;
  return col_of_row;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& col_of_row) {
  double total = 0.0;
  for (std::size_t i = 0; i < col_of_row.size(); ++i)
    total += cost(Eigen::Index(i), col_of_row[i]);
  return total;
}

/// Optimal cost of assigning rows [row0, M) to the columns not marked taken.
double tail_optimum(const Eigen::MatrixXd& cost, int row0, const std::vector<char>& taken) {
  const int m = int(cost.rows()), n = int(cost.cols());
  if (row0 >= m) return 0.0;
  std::vector<int> free_cols;
  for (int j = 0; j < n; ++j)
    if (!taken[std::size_t(j)]) free_cols.push_back(j);
  Eigen::MatrixXd sub(m - row0, Eigen::Index(free_cols.size()));
  for (int i = row0; i < m; ++i)
    for (std::size_t c = 0; c < free_cols.size(); ++c)
      sub(i - row0, Eigen::Index(c)) = cost(i, free_cols[c]);
  std::vector<int> sol = solve_assignment(sub);
  double total = 0.0;
  for (std::size_t i = 0; i < sol.size(); ++i) total += sub(Eigen::Index(i), sol[i]);
  return total;
}

}  // namespace

std::vector<int> MatchAssignment::prediction_for() const {
  std::vector<int> out(pairs.size(), -1);
  for (const auto& [i, j] : pairs) out[std::size_t(i)] = j;
  return out;
}

MatchAssignment hungarian(const Eigen::MatrixXd& cost) {
  const int m = int(cost.rows()), n = int(cost.cols());
  if (m > n)
    throw std::invalid_argument("hungarian: more annotations than predictions (" +
                                std::to_string(m) + " > " + std::to_string(n) + ")");
  MatchAssignment out;
  if (m == 0) {
    for (int j = 0; j < n; ++j) out.unmatched_predictions.push_back(j);
    return out;
  }
  for (Eigen::Index i = 0; i < cost.rows(); ++i)
    for (Eigen::Index j = 0; j < cost.cols(); ++j)
      if (!std::isfinite(cost(i, j)))
        throw std::invalid_argument("hungarian: non-finite cost entry");

  const std::vector<int> base = solve_assignment(cost);
  const double best = assignment_cost(cost, base);

  // Fix rows in order to the smallest column that still admits an optimal
  // completion; this lands on the lexicographically smallest optimum. The
  // epsilon absorbs float noise from re-solving subproblems.
  const double eps = 1e-12;
  std::vector<char> taken(std::size_t(n), 0);
  std::vector<int> chosen(std::size_t(m), -1);
  double prefix = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      if (taken[std::size_t(j)]) continue;
      taken[std::size_t(j)] = 1;
      const double completed = prefix + cost(i, j) + tail_optimum(cost, i + 1, taken);
      if (completed <= best + eps) {
        chosen[std::size_t(i)] = j;
        prefix += cost(i, j);
        break;
      }
      taken[std::size_t(j)] = 0;
    }
    if (chosen[std::size_t(i)] < 0) {
      // Numerically unreachable; fall back to the base solution.
      chosen = base;
      break;
    }
  }

  for (int i = 0; i < m; ++i) out.pairs.emplace_back(i, chosen[std::size_t(i)]);
  out.total_cost = 0.0;
  for (int i = 0; i < m; ++i) out.total_cost += cost(i, chosen[std::size_t(i)]);
  std::vector<char> used(std::size_t(n), 0);
  for (int i = 0; i < m; ++i) used[std::size_t(chosen[std::size_t(i)])] = 1;
  for (int j = 0; j < n; ++j)
    if (!used[std::size_t(j)]) out.unmatched_predictions.push_back(j);
  return out;
}

Eigen::MatrixXd match_cost(const Eigen::MatrixXd& pred_boxes, const Eigen::MatrixXd& cls_logits,
                           const Eigen::MatrixXd& angle_logits, const Eigen::MatrixXd& gt_boxes,
                           const std::vector<int>& gt_cls, const std::vector<double>& gt_angles,
                           const MatchCostOptions& opt) {
  const int n = int(pred_boxes.rows());
  const int m = int(gt_boxes.rows());
  if (m < 1 || n < 1) throw std::invalid_argument("match_cost: need M >= 1 and N >= 1");
  if (cls_logits.rows() != n || angle_logits.rows() != n)
    throw std::invalid_argument("match_cost: prediction row counts disagree");
  if (int(gt_cls.size()) != m || int(gt_angles.size()) != m)
    throw std::invalid_argument("match_cost: annotation field lengths disagree");

  const int bins = int(angle_logits.cols());
  const double alpha = opt.focal_alpha, gamma = opt.focal_gamma;

  Eigen::MatrixXd smoothed(m, bins);
  for (int i = 0; i < m; ++i)
    smoothed.row(i) =
        loss::csl_target(gt_angles[i], bins, opt.csl_sigma, opt.csl_radius).transpose();

  Eigen::MatrixXd cost(m, n);
  for (int i = 0; i < m; ++i) {
    const int c = gt_cls[i];
    if (c < 0 || c >= int(cls_logits.cols()))
      throw std::invalid_argument("match_cost: class id out of range");
    for (int j = 0; j < n; ++j) {
      const double s = cls_logits(j, c);
      const double logp = loss::log_sigmoid(s);
      const double log1mp = loss::log_sigmoid(-s);
      const double p = 1.0 / (1.0 + std::exp(-s));
      const double cls_cost =
          alpha * std::pow(1.0 - p, gamma) * (-logp) - (1.0 - alpha) * std::pow(p, gamma) * (-log1mp);

      const double l1 = (pred_boxes.row(j) - gt_boxes.row(i)).cwiseAbs().sum();

      double pb[4], gb[4];
      for (int k = 0; k < 4; ++k) {
        pb[k] = pred_boxes(j, k);
        gb[k] = gt_boxes(i, k);
      }
      const double giou = geom::aa_giou_xywh(pb, gb);

      double ang = 0.0;
      for (int b = 0; b < bins; ++b) {
        const double prob = 1.0 / (1.0 + std::exp(-angle_logits(j, b)));
        ang += std::abs(smoothed(i, b) - prob);
      }
      ang /= double(bins);

      cost(i, j) = opt.weights.cls * cls_cost + opt.weights.l1 * l1 +
                   opt.weights.giou * (1.0 - giou) + opt.weights.ang * ang;
    }
  }
  return cost;
}

}  // namespace mutdet::match
