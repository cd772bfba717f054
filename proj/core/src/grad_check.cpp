#include "mutdet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace mutdet::nn {

double relative_error(double a, double b) {
  // The denominator floor absorbs central-difference rounding noise,
  // roughly eps * |loss| / (2h), on parameters whose true gradient is
  // zero (an attention key bias, say: shifting every key by the same
  // vector never moves a row softmax). At h = 1e-5 and losses up to
  // O(100) that noise reaches a few 1e-10, so the floor sits well above
  // it while staying far below any live gradient.
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

GradCheckReport check_param_gradients(ParamStore& store,
                                      const std::function<double(bool)>& loss_fn,
                                      double h, std::int64_t max_coords_per_param,
                                      std::uint64_t seed) {
  loss_fn(true);
  std::map<std::string, Mat> analytic;
  for (const std::string& name : store.names()) analytic[name] = store.grad(name);

  std::mt19937_64 rng(seed);
  GradCheckReport rep;
  for (const std::string& name : store.names()) {
    Mat& v = store.mutable_value(name);
    const std::int64_t total = std::int64_t(v.size());
    std::vector<std::int64_t> coords(static_cast<std::size_t>(total));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_param >= 0 && total > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(std::size_t(max_coords_per_param));
      std::sort(coords.begin(), coords.end());
    }
    for (std::int64_t flat : coords) {
      const Eigen::Index r = Eigen::Index(flat) / v.cols();
      const Eigen::Index c = Eigen::Index(flat) % v.cols();
      const double orig = v(r, c);
      auto probe = [&](double delta) {
        v(r, c) = orig + delta;
        const double out = loss_fn(false);
        v(r, c) = orig;
        return out;
      };
      const double numeric = (probe(h) - probe(-h)) / (2.0 * h);
      const double half = (probe(0.5 * h) - probe(-0.5 * h)) / h;
      if (relative_error(numeric, half) > 1e-3) {
        ++rep.coords_skipped;
        continue;
      }
      const double err = relative_error(analytic[name](r, c), numeric);
      ++rep.coords_checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_param = name;
        rep.worst_row = r;
        rep.worst_col = c;
      }
    }
  }
  return rep;
}

}  // namespace mutdet::nn
