#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mutdet/param_store.hpp"

namespace mutdet::nn {

/// |a - b| / max(|a|, |b|, 1e-5).
double relative_error(double a, double b);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  Eigen::Index worst_row = -1;
  Eigen::Index worst_col = -1;
  std::int64_t coords_checked = 0;
  std::int64_t coords_skipped = 0;  // non-smooth points, see below
};

/// Central-difference check of analytic parameter gradients.
///
/// loss_fn(true) must zero the store's grads, run forward and backward, and
/// return the loss value. loss_fn(false) must return the loss for the current
/// parameter values without writing any gradients. Coordinates are subsampled
/// deterministically when a tensor has more than max_coords_per_param entries
/// (pass -1 to check everything).
///
/// At each coordinate the h and h/2 central-difference estimates are compared
/// first; when they disagree the loss is not C2 there (a relu kink or an
/// assignment flip sits inside the probed interval) and the coordinate is
/// counted in coords_skipped instead of being judged, since the numeric
/// quotient estimates nothing at such points. The filter never consults the
/// analytic gradient, so it cannot hide a wrong backward rule on smooth
/// ground.
GradCheckReport check_param_gradients(ParamStore& store,
                                      const std::function<double(bool)>& loss_fn,
                                      double h = 1e-5,
                                      std::int64_t max_coords_per_param = -1,
                                      std::uint64_t seed = 12345);

}  // namespace mutdet::nn
