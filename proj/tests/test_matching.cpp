#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "mutdet/losses.hpp"
#include "mutdet/matching.hpp"

using namespace mutdet;
using namespace mutdet::match;

namespace {

struct BruteResult {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<int> assign;
};

// Exhaustive-permutation oracle; ties resolved toward the lexicographically
// smallest assignment vector, costs summed in row order.
BruteResult brute_force(const Eigen::MatrixXd& c) {
  const int m = int(c.rows()), n = int(c.cols());
  std::vector<int> cols(n);
  std::iota(cols.begin(), cols.end(), 0);
  BruteResult best;
  do {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += c(i, cols[i]);
    std::vector<int> a(cols.begin(), cols.begin() + m);
    if (s < best.cost || (s == best.cost && a < best.assign)) {
      best.cost = s;
      best.assign = std::move(a);
    }
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

std::vector<int> assignment_vector(const MatchAssignment& a, int m) {
  std::vector<int> v(m, -1);
  for (const auto& [ann, pred] : a.pairs) v[ann] = pred;
  return v;
}

}  // namespace

TEST_CASE("hungarian equals the exhaustive oracle on random matrices") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int m = 1 + int(rng() % 7);
    const int n = m + int(rng() % (9 - m + 1));
    Eigen::MatrixXd c(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = u(rng);
    const MatchAssignment got = hungarian(c);
    const BruteResult expect = brute_force(c);
    CHECK(got.total_cost == expect.cost);
    CHECK(assignment_vector(got, m) == expect.assign);
  }
}

TEST_CASE("ties break toward the lexicographically smallest assignment") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 1 + int(rng() % 5);
    const int n = m + int(rng() % 3);
    Eigen::MatrixXd c(m, n);
    // Tiny integer range forces plenty of exact ties.
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = double(rng() % 3);
    const MatchAssignment got = hungarian(c);
    const BruteResult expect = brute_force(c);
    CHECK(got.total_cost == expect.cost);
    CHECK(assignment_vector(got, m) == expect.assign);
  }

  Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(3, 5);
  CHECK(assignment_vector(hungarian(flat), 3) == std::vector<int>{0, 1, 2});

  Eigen::MatrixXd swap(2, 2);
  swap << 1, 2, 1, 3;  // forced off-diagonal optimum
  CHECK(assignment_vector(hungarian(swap), 2) == std::vector<int>{1, 0});
  CHECK(hungarian(swap).total_cost == 3.0);
}

TEST_CASE("assignment bookkeeping") {
  Eigen::MatrixXd c(2, 4);
  c << 9, 0, 9, 9,
       9, 9, 9, 0;
  const MatchAssignment a = hungarian(c);
  REQUIRE(a.pairs.size() == 2);
  CHECK(a.pairs[0] == std::pair<int, int>{0, 1});
  CHECK(a.pairs[1] == std::pair<int, int>{1, 3});
  CHECK(a.unmatched_predictions == std::vector<int>{0, 2});
  CHECK(a.prediction_for() == std::vector<int>{1, 3});

  const MatchAssignment empty = hungarian(Eigen::MatrixXd(0, 3));
  CHECK(empty.pairs.empty());
  CHECK(empty.unmatched_predictions == std::vector<int>{0, 1, 2});
  CHECK(empty.total_cost == 0.0);
}

TEST_CASE("invalid cost matrices are rejected") {
  CHECK_THROWS_AS(hungarian(Eigen::MatrixXd::Zero(4, 3)), std::invalid_argument);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 3);
  bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
  bad(1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
}

TEST_CASE("match cost prefers the prediction that explains the annotation") {
  const int N = 4, K = 5, A = 36;
  MatchCostOptions opt;

  Eigen::MatrixXd gt_boxes(1, 4);
  gt_boxes << 0.4, 0.5, 0.2, 0.1;
  const std::vector<int> gt_cls = {2};
  const std::vector<double> gt_angles = {0.6};

  Eigen::MatrixXd pred_boxes(N, 4);
  pred_boxes << 0.9, 0.9, 0.05, 0.05,
                0.4, 0.5, 0.2, 0.1,
                0.1, 0.2, 0.3, 0.3,
                0.45, 0.5, 0.2, 0.1;
  Eigen::MatrixXd cls = Eigen::MatrixXd::Constant(N, K, -4.0);
  cls(1, 2) = 4.0;  // right class, right box
  Eigen::MatrixXd ang = Eigen::MatrixXd::Constant(N, A, -8.0);
  const Eigen::VectorXd target = loss::csl_target(0.6, A, opt.csl_sigma, opt.csl_radius);
  for (int j = 0; j < A; ++j) ang(1, j) = 16.0 * target(j) - 8.0;

  const Eigen::MatrixXd c = match_cost(pred_boxes, cls, ang, gt_boxes, gt_cls, gt_angles, opt);
  REQUIRE(c.rows() == 1);
  REQUIRE(c.cols() == N);
  int best = 0;
  c.row(0).minCoeff(&best);
  CHECK(best == 1);
  // The near-miss box with background logits still beats the far box.
  CHECK(c(0, 3) < c(0, 0));
}

TEST_CASE("angle term reacts to orientation alone") {
  const int N = 2, K = 3, A = 36;
  MatchCostOptions opt;
  Eigen::MatrixXd gt_boxes(1, 4);
  gt_boxes << 0.5, 0.5, 0.3, 0.2;
  const std::vector<int> gt_cls = {0};
  const std::vector<double> gt_angles = {-0.9};

  Eigen::MatrixXd pred_boxes(N, 4);
  pred_boxes << 0.5, 0.5, 0.3, 0.2,
                0.5, 0.5, 0.3, 0.2;
  Eigen::MatrixXd cls = Eigen::MatrixXd::Zero(N, K);
  Eigen::MatrixXd ang = Eigen::MatrixXd::Constant(N, A, -9.0);
  const Eigen::VectorXd target = loss::csl_target(-0.9, A, opt.csl_sigma, opt.csl_radius);
  for (int j = 0; j < A; ++j) ang(0, j) = 18.0 * target(j) - 9.0;

  const Eigen::MatrixXd c = match_cost(pred_boxes, cls, ang, gt_boxes, gt_cls, gt_angles, opt);
  CHECK(c(0, 0) < c(0, 1));

  // With the angle weight off the two predictions become indistinguishable.
  MatchCostOptions no_ang = opt;
  no_ang.weights.ang = 0.0;
  const Eigen::MatrixXd c2 =
      match_cost(pred_boxes, cls, ang, gt_boxes, gt_cls, gt_angles, no_ang);
  CHECK(c2(0, 0) == doctest::Approx(c2(0, 1)).epsilon(1e-12));
}
