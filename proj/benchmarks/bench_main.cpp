#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mutdet/detector.hpp"
#include "mutdet/enhancement.hpp"
#include "mutdet/geometry.hpp"
#include "mutdet/losses.hpp"
#include "mutdet/matching.hpp"
#include "mutdet/tape.hpp"

using namespace mutdet;
using nn::Mat;

namespace {

Mat random_mat(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

Mat unit_rows(Mat x) {
  for (int i = 0; i < x.rows(); ++i) x.row(i) /= x.row(i).norm();
  return x;
}

void BM_RotatedIou(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<geom::OrientedBox, geom::OrientedBox>> pairs;
  for (int i = 0; i < 256; ++i)
    pairs.emplace_back(
        geom::OrientedBox(u(rng), u(rng), 0.5 + u(rng), 0.5 + u(rng), 3.0 * (u(rng) - 0.5)),
        geom::OrientedBox(u(rng), u(rng), 0.5 + u(rng), 0.5 + u(rng), 3.0 * (u(rng) - 0.5)));
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& [a, b] = pairs[i++ % pairs.size()];
    benchmark::DoNotOptimize(geom::rotated_iou(a, b));
  }
}
BENCHMARK(BM_RotatedIou);

void BM_MinAreaRect(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<geom::Vec2> pts;
  for (int i = 0; i < int(state.range(0)); ++i) pts.push_back({10.0 * u(rng), 10.0 * u(rng)});
  for (auto _ : state) benchmark::DoNotOptimize(geom::min_area_rect(pts));
}
BENCHMARK(BM_MinAreaRect)->Arg(16)->Arg(256);

void BM_Hungarian(benchmark::State& state) {
  const int n = int(state.range(0));
  const Mat cost = random_mat(n, n, 3).cwiseAbs();
  for (auto _ : state) benchmark::DoNotOptimize(match::hungarian(cost));
}
BENCHMARK(BM_Hungarian)->Arg(8)->Arg(32);

void BM_EnhancementForward(benchmark::State& state) {
  nn::EnhancementConfig cfg;
  cfg.dim = 32;
  cfg.n_layers = 3;
  cfg.n_heads = 4;
  nn::ParamStore store;
  nn::init_enhancement_params(store, "enh.", cfg, 7);
  const Mat O = unit_rows(random_mat(8, 32, 8));
  const Mat F = random_mat(80, 32, 9);
  for (auto _ : state) {
    nn::Tape t;
    benchmark::DoNotOptimize(
        nn::enhancement_forward(t, store, "enh.", nn::constant(t, O), nn::constant(t, F), cfg));
  }
}
BENCHMARK(BM_EnhancementForward);

void BM_PretrainStep(benchmark::State& state) {
  det::DetectorConfig cfg;  // desk-scale defaults
  nn::ParamStore store;
  det::Detector::init_params(store, cfg);
  det::Detector detector(cfg, store);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img;
  img.h = img.w = cfg.image_size;
  for (auto& ch : img.chan) {
    ch = Mat(cfg.image_size, cfg.image_size);
    for (int y = 0; y < cfg.image_size; ++y)
      for (int x = 0; x < cfg.image_size; ++x) ch(y, x) = u(rng);
  }
  loss::GtLabels gt;
  gt.boxes = Mat(3, 4);
  gt.boxes << 0.3, 0.3, 0.2, 0.15, 0.6, 0.5, 0.25, 0.2, 0.5, 0.7, 0.15, 0.3;
  gt.cls = {0, 1, 2};
  gt.angles = {0.1, -0.4, 1.0};
  gt.embeddings = unit_rows(random_mat(3, cfg.C, 12));
  loss::LossOptions opt;
  opt.mode = loss::CalibrationMode::siamese;

  for (auto _ : state) {
    store.zero_grads();
    nn::Tape t;
    const det::PretrainResult r = detector.pretrain_forward(t, img, gt, opt);
    t.backward(r.loss.total.id);
    benchmark::DoNotOptimize(r.loss.total.val());
  }
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
