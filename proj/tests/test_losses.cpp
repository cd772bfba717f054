#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "mutdet/errors.hpp"
#include "mutdet/geometry.hpp"
#include "mutdet/grad_check.hpp"
#include "mutdet/layers.hpp"
#include "mutdet/losses.hpp"

using namespace mutdet;
using namespace mutdet::loss;
using nn::Mat;
using nn::Tape;
using nn::Var;

namespace {

Mat random_mat(int r, int c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * g(rng);
  return m;
}

Mat unit_rows(const Mat& x) {
  Mat y = x;
  for (int i = 0; i < y.rows(); ++i) y.row(i) /= y.row(i).norm();
  return y;
}

// Direct-summation oracle for the symmetric alignment loss.
double contrastive_oracle(const Mat& Z, const Mat& O, double tau) {
  const int m = int(Z.rows());
  Mat S(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) S(i, j) = Z.row(i).dot(O.row(j)) / tau;
  double sum = 0.0;
  for (int i = 0; i < m; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < m; ++j) {
      row += std::exp(S(i, j));
      col += std::exp(S(j, i));
    }
    sum += 2.0 * S(i, i) - std::log(row) - std::log(col);
  }
  return -(2.0 * tau / m) * sum;
}

double stable_bce(double s, double t) {
  return std::max(s, 0.0) - s * t + std::log1p(std::exp(-std::abs(s)));
}

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

}  // namespace

TEST_CASE("log_sigmoid is stable across the range") {
  CHECK(log_sigmoid(0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(log_sigmoid(3.0) == doctest::Approx(std::log(sigmoid(3.0))).epsilon(1e-12));
  CHECK(log_sigmoid(-3.0) == doctest::Approx(std::log(sigmoid(-3.0))).epsilon(1e-12));
  CHECK(std::isfinite(log_sigmoid(-800.0)));
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(std::isfinite(log_sigmoid(800.0)));
  CHECK(log_sigmoid(800.0) <= 0.0);
}

TEST_CASE("csl_target matches the circular-distance formula") {
  const int bins = 180;
  const double sigma = 4.0;
  const int radius = 12;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int trial = 0; trial < 25; ++trial) {
    const double angle = u(rng);
    const Eigen::VectorXd t = csl_target(angle, bins, sigma, radius);
    REQUIRE(t.size() == bins);
    const double canon = geom::normalize_angle(angle);
    int peak = int(std::floor((canon + geom::kPi / 2.0) / geom::kPi * bins));
    peak = std::min(std::max(peak, 0), bins - 1);
    CHECK(t(peak) == 1.0);
    for (int j = 0; j < bins; ++j) {
      const int d = std::min(std::abs(j - peak), bins - std::abs(j - peak));
      const double expect = d <= radius ? std::exp(-double(d) * d / (2.0 * sigma * sigma)) : 0.0;
      CHECK(t(j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  // Wrap-around: a peak near bin 0 spills into the top bins.
  const Eigen::VectorXd w = csl_target(-geom::kPi / 2.0 + 0.001, bins, sigma, radius);
  CHECK(w(0) == 1.0);
  CHECK(w(bins - 1) > 0.5);
  CHECK(w(bins - 1) == doctest::Approx(std::exp(-0.5 / (sigma * sigma))).epsilon(1e-12));
}

TEST_CASE("contrastive loss anchors") {
  const double tau = 0.2;
  {
    Tape t;
    Mat z(1, 4);
    z << 1, 0, 0, 0;
    const MaybeLoss l = contrastive_alignment_loss(constant(t, z), constant(t, z), tau);
    CHECK(l.active);
    CHECK(l.value.val()(0, 0) == 0.0);  // single pair: row and column terms cancel
  }
  {
    Tape t;
    Mat z = Mat::Identity(2, 2);
    const MaybeLoss l = contrastive_alignment_loss(constant(t, z), constant(t, z), tau);
    const double expect = 0.8 * std::log1p(std::exp(-5.0));
    CHECK(l.value.val()(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(l.value.val()(0, 0) == doctest::Approx(contrastive_oracle(z, z, tau)).epsilon(1e-12));
    CHECK(l.value.val()(0, 0) == doctest::Approx(5.3722788e-3).epsilon(1e-6));
  }
  {
    Tape t;
    const MaybeLoss l =
        contrastive_alignment_loss(constant(t, Mat(0, 4)), constant(t, Mat(0, 4)), tau);
    CHECK_FALSE(l.active);
    CHECK(l.value.val()(0, 0) == 0.0);
  }
}

TEST_CASE("contrastive loss equals the direct oracle on random inputs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + int(rng() % 6);
    const int c = 3 + int(rng() % 5);
    const Mat Z = unit_rows(random_mat(m, c, 100 + trial));
    const Mat O = unit_rows(random_mat(m, c, 200 + trial));
    Tape t;
    const MaybeLoss l = contrastive_alignment_loss(constant(t, Z), constant(t, O), 0.2);
    const double oracle = contrastive_oracle(Z, O, 0.2);
    const double got = l.value.val()(0, 0);
    CHECK(std::abs(got - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("contrastive loss is exactly symmetric") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + int(rng() % 6);
    const int c = 3 + int(rng() % 6);
    const Mat Z = unit_rows(random_mat(m, c, 300 + trial));
    const Mat O = unit_rows(random_mat(m, c, 400 + trial));
    Tape t;
    const double zo = contrastive_alignment_loss(constant(t, Z), constant(t, O), 0.2)
                          .value.val()(0, 0);
    const double oz = contrastive_alignment_loss(constant(t, O), constant(t, Z), 0.2)
                          .value.val()(0, 0);
    CHECK(zo == oz);  // bitwise, not approximately
  }
}

TEST_CASE("contrastive loss rejects non-normalized rows") {
  Tape t;
  Mat z = Mat::Identity(2, 2);
  Mat bad = z;
  bad(0, 0) = 1.01;
  CHECK_THROWS_AS(contrastive_alignment_loss(constant(t, bad), constant(t, z), 0.2),
                  std::invalid_argument);
  CHECK_THROWS_AS(contrastive_alignment_loss(constant(t, z), constant(t, bad), 0.2),
                  std::invalid_argument);
}

TEST_CASE("contrastive loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nn::ParamStore store;
    std::mt19937_64 rng(seed);
    nn::init_linear(store, "z", 6, 6, rng);
    nn::init_linear(store, "o", 6, 6, rng);
    const Mat x = random_mat(4, 6, seed + 10);
    auto loss_fn = [&](bool with_grad) {
      if (with_grad) store.zero_grads();
      Tape t;
      Var Z = nn::l2normalize_rows(nn::linear(constant(t, x), nn::load_linear(t, store, "z")));
      Var O = nn::l2normalize_rows(nn::linear(constant(t, x), nn::load_linear(t, store, "o")));
      const MaybeLoss l = contrastive_alignment_loss(Z, O, 0.2);
      if (with_grad) t.backward(l.value.id);
      return l.value.val()(0, 0);
    };
    CHECK(nn::check_param_gradients(store, loss_fn).max_rel_err < 1e-4);
  }
}

TEST_CASE("focal loss anchors and oracle") {
  const double alpha = 0.25, gamma = 2.0;
  {
    // One prediction, one class, logit 0, matched: alpha * 0.25 * ln 2.
    Tape t;
    Var s = constant(t, Mat::Zero(1, 1));
    const double v = focal_loss(s, {0}, alpha, gamma).val()(0, 0);
    CHECK(v == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  }
  {
    // Same logit as background; normalization floor keeps the divisor at 1.
    Tape t;
    Var s = constant(t, Mat::Zero(1, 1));
    const double v = focal_loss(s, {-1}, alpha, gamma).val()(0, 0);
    CHECK(v == doctest::Approx(0.75 * 0.25 * std::log(2.0)).epsilon(1e-12));
  }
  {
    // Hand-loop oracle over a mixed batch.
    const Mat s = random_mat(5, 3, 9, 2.0);
    const std::vector<int> target = {2, -1, 0, -1, 2};
    Tape t;
    const double got = focal_loss(constant(t, s), target, alpha, gamma).val()(0, 0);
    double expect = 0.0;
    int matched = 0;
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 3; ++k) {
        const double p = sigmoid(s(j, k));
        if (target[j] == k)
          expect += alpha * std::pow(1.0 - p, gamma) * -std::log(p);
        else
          expect += (1.0 - alpha) * std::pow(p, gamma) * -std::log(1.0 - p);
      }
      if (target[j] >= 0) ++matched;
    }
    expect /= std::max(1, matched);
    CHECK(nn::relative_error(got, expect) < 1e-12);
  }
}

TEST_CASE("focal loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nn::ParamStore store;
    std::mt19937_64 rng(seed);
    nn::init_linear(store, "cls", 4, 6, rng);
    const Mat x = random_mat(5, 6, seed + 20);
    const std::vector<int> target = {1, -1, 3, -1, 0};
    auto loss_fn = [&](bool with_grad) {
      if (with_grad) store.zero_grads();
      Tape t;
      Var s = nn::linear(constant(t, x), nn::load_linear(t, store, "cls"));
      Var l = focal_loss(s, target, 0.25, 2.0);
      if (with_grad) t.backward(l.id);
      return l.val()(0, 0);
    };
    CHECK(nn::check_param_gradients(store, loss_fn).max_rel_err < 1e-4);
  }
}

TEST_CASE("reg loss value against the closed form") {
  Mat pred(3, 4);
  pred << 0.5, 0.5, 0.2, 0.1,
          0.3, 0.4, 0.25, 0.2,
          0.8, 0.8, 0.1, 0.1;
  Mat gt(2, 4);
  gt << 0.32, 0.42, 0.2, 0.22,
        0.5, 0.5, 0.2, 0.1;
  const std::vector<int> pred_of_ann = {1, 0};

  Tape t;
  const MaybeLoss l = reg_loss(constant(t, pred), gt, pred_of_ann, 5.0, 2.0);
  REQUIRE(l.active);
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    const int j = pred_of_ann[i];
    double l1 = 0.0;
    for (int c = 0; c < 4; ++c) l1 += std::abs(pred(j, c) - gt(i, c));
    double pb[4] = {pred(j, 0), pred(j, 1), pred(j, 2), pred(j, 3)};
    double gb[4] = {gt(i, 0), gt(i, 1), gt(i, 2), gt(i, 3)};
    expect += 5.0 * l1 + 2.0 * (1.0 - geom::aa_giou_xywh(pb, gb));
  }
  expect /= 2.0;
  CHECK(nn::relative_error(l.value.val()(0, 0), expect) < 1e-12);

  // Perfect boxes: zero L1 and unit GIoU.
  Tape t2;
  const std::vector<int> exact = {0};
  Mat gt2 = pred.topRows(1);
  const MaybeLoss l2 = reg_loss(constant(t2, pred), gt2, exact, 5.0, 2.0);
  CHECK(l2.value.val()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));

  // Unmatched annotations are skipped entirely; none matched -> inactive.
  Tape t3;
  const MaybeLoss l3 = reg_loss(constant(t3, pred), gt, {-1, -1}, 5.0, 2.0);
  CHECK_FALSE(l3.active);
}

TEST_CASE("reg loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nn::ParamStore store;
    std::mt19937_64 rng(seed);
    nn::init_linear(store, "box", 4, 6, rng);
    const Mat x = random_mat(5, 6, seed + 30);
    const Mat gt = (random_mat(2, 4, seed + 31).array() * 0.1 + 0.4).matrix();
    const std::vector<int> pred_of_ann = {3, 0};
    auto loss_fn = [&](bool with_grad) {
      if (with_grad) store.zero_grads();
      Tape t;
      Var boxes = nn::sigmoid(nn::linear(constant(t, x), nn::load_linear(t, store, "box")));
      const MaybeLoss l = reg_loss(boxes, gt, pred_of_ann, 5.0, 2.0);
      if (with_grad) t.backward(l.value.id);
      return l.value.val()(0, 0);
    };
    CHECK(nn::check_param_gradients(store, loss_fn).max_rel_err < 1e-4);
  }
}

TEST_CASE("angle loss value and gradients") {
  const int A = 36;
  {
    const Mat s = random_mat(4, A, 41, 1.5);
    const std::vector<double> gt_angles = {0.3, -1.1};
    const std::vector<int> pred_of_ann = {2, 0};
    Tape t;
    const MaybeLoss l = angle_csl_loss(constant(t, s), gt_angles, pred_of_ann, 4.0, 12);
    REQUIRE(l.active);
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
      const Eigen::VectorXd target = csl_target(gt_angles[i], A, 4.0, 12);
      for (int j = 0; j < A; ++j) expect += stable_bce(s(pred_of_ann[i], j), target(j));
    }
    expect /= 2.0 * A;  // mean over matched objects and bins
    CHECK(nn::relative_error(l.value.val()(0, 0), expect) < 1e-12);
  }
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nn::ParamStore store;
    std::mt19937_64 rng(seed);
    nn::init_linear(store, "ang", A, 6, rng);
    const Mat x = random_mat(5, 6, seed + 40);
    const std::vector<double> gt_angles = {0.5};
    const std::vector<int> pred_of_ann = {1};
    auto loss_fn = [&](bool with_grad) {
      if (with_grad) store.zero_grads();
      Tape t;
      Var s = nn::linear(constant(t, x), nn::load_linear(t, store, "ang"));
      const MaybeLoss l = angle_csl_loss(s, gt_angles, pred_of_ann, 4.0, 12);
      if (with_grad) t.backward(l.value.id);
      return l.value.val()(0, 0);
    };
    CHECK(nn::check_param_gradients(store, loss_fn, 1e-5, 60).max_rel_err < 1e-4);
  }
}

TEST_CASE("detector alignment term is the sum of two normalized contrastive losses") {
  const Mat enc = random_mat(3, 5, 51);
  const Mat dec = random_mat(3, 5, 52);
  const Mat obj = random_mat(3, 5, 53);
  Tape t;
  const MaybeLoss l = detector_alignment_loss(constant(t, enc), constant(t, dec),
                                              constant(t, obj), 0.2);
  const double expect = contrastive_oracle(unit_rows(enc), unit_rows(obj), 0.2) +
                        contrastive_oracle(unit_rows(dec), unit_rows(obj), 0.2);
  CHECK(nn::relative_error(l.value.val()(0, 0), expect) < 1e-12);
}

TEST_CASE("encoder feature distill stops teacher gradients") {
  nn::ParamStore store;
  std::mt19937_64 rng(3);
  nn::init_linear(store, "student", 6, 6, rng);
  nn::init_linear(store, "teacher", 6, 6, rng);
  const Mat x = random_mat(4, 6, 61);

  store.zero_grads();
  Tape t;
  Var f = nn::linear(constant(t, x), nn::load_linear(t, store, "student"));
  Var f_enh = nn::linear(constant(t, x), nn::load_linear(t, store, "teacher"));
  Var l = encoder_feature_distill(f, f_enh);
  const double mse = (f.val() - f_enh.val()).array().square().mean();
  CHECK(nn::relative_error(l.val()(0, 0), mse) < 1e-12);
  t.backward(l.id);
  CHECK(store.grad("teacher.W").cwiseAbs().maxCoeff() == 0.0);
  CHECK(store.grad("student.W").cwiseAbs().maxCoeff() > 0.0);

  // Student-side gradients agree with finite differences (teacher constant).
  const Mat teacher = random_mat(4, 6, 62);
  nn::ParamStore store2;
  std::mt19937_64 rng2(4);
  nn::init_linear(store2, "student", 6, 6, rng2);
  auto loss_fn = [&](bool with_grad) {
    if (with_grad) store2.zero_grads();
    Tape t2;
    Var f2 = nn::linear(constant(t2, x), nn::load_linear(t2, store2, "student"));
    Var l2 = encoder_feature_distill(f2, constant(t2, teacher));
    if (with_grad) t2.backward(l2.id);
    return l2.val()(0, 0);
  };
  CHECK(nn::check_param_gradients(store2, loss_fn).max_rel_err < 1e-4);
}

TEST_CASE("soft quality-focal term value and gradients") {
  const Mat s = random_mat(4, 5, 71, 1.2);
  Mat teacher = random_mat(4, 5, 72);
  teacher = teacher.unaryExpr([](double v) { return sigmoid(v); });
  Tape t;
  const double got = qfl_soft(constant(t, s), teacher, 2.0).val()(0, 0);
  double expect = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) {
      const double p = sigmoid(s(i, j));
      expect += std::pow(std::abs(teacher(i, j) - p), 2.0) * stable_bce(s(i, j), teacher(i, j));
    }
  expect /= 4.0;
  CHECK(nn::relative_error(got, expect) < 1e-12);

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nn::ParamStore store;
    std::mt19937_64 rng(seed);
    nn::init_linear(store, "cls", 5, 6, rng);
    const Mat x = random_mat(4, 6, seed + 70);
    auto loss_fn = [&](bool with_grad) {
      if (with_grad) store.zero_grads();
      Tape t2;
      Var logits = nn::linear(constant(t2, x), nn::load_linear(t2, store, "cls"));
      Var l = qfl_soft(logits, teacher, 2.0);
      if (with_grad) t2.backward(l.id);
      return l.val()(0, 0);
    };
    CHECK(nn::check_param_gradients(store, loss_fn).max_rel_err < 1e-4);
  }
}

TEST_CASE("mse_to_const matches the mean square error") {
  const Mat x = random_mat(3, 4, 81);
  const Mat target = random_mat(3, 4, 82);
  Tape t;
  const double got = mse_to_const(constant(t, x), target).val()(0, 0);
  CHECK(nn::relative_error(got, (x - target).array().square().mean()) < 1e-12);
}

TEST_CASE("calibration mode parsing") {
  CHECK(parse_calibration_mode("none") == CalibrationMode::none);
  CHECK(parse_calibration_mode("encoder-distill") == CalibrationMode::encoder_distill);
  CHECK(parse_calibration_mode("decoder-distill") == CalibrationMode::decoder_distill);
  CHECK(parse_calibration_mode("siamese") == CalibrationMode::siamese);
  CHECK_THROWS_AS(parse_calibration_mode("frobnicate"), ConfigError);
  for (auto m : {CalibrationMode::none, CalibrationMode::encoder_distill,
                 CalibrationMode::decoder_distill, CalibrationMode::siamese})
    CHECK(parse_calibration_mode(to_string(m)) == m);
}
