#include "mutdet/layers.hpp"

namespace mutdet::nn {

Mat uniform_init(int rows, int cols, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  return m;
}

void init_linear(ParamStore& store, const std::string& base, int out, int in,
                 std::mt19937_64& rng) {
  store.create(base + ".W", uniform_init(out, in, in, rng));
  store.create(base + ".b", Mat::Zero(1, out));
}

void init_attention(ParamStore& store, const std::string& base, int dim,
                    std::mt19937_64& rng) {
  init_linear(store, base + ".q", dim, dim, rng);
  init_linear(store, base + ".k", dim, dim, rng);
  init_linear(store, base + ".v", dim, dim, rng);
  init_linear(store, base + ".out", dim, dim, rng);
}

void init_layer_norm(ParamStore& store, const std::string& base, int dim) {
  store.create(base + ".g", Mat::Ones(1, dim));
  store.create(base + ".b", Mat::Zero(1, dim));
}

void init_mlp(ParamStore& store, const std::string& base, int dim, int hidden,
              std::mt19937_64& rng) {
  init_linear(store, base + ".fc1", hidden, dim, rng);
  init_linear(store, base + ".fc2", dim, hidden, rng);
}

LinearParams load_linear(Tape& t, ParamStore& store, const std::string& base) {
  return {param(t, store, base + ".W"), param(t, store, base + ".b")};
}

AttentionParams load_attention(Tape& t, ParamStore& store, const std::string& base) {
  return {load_linear(t, store, base + ".q"), load_linear(t, store, base + ".k"),
          load_linear(t, store, base + ".v"), load_linear(t, store, base + ".out")};
}

MlpParams load_mlp(Tape& t, ParamStore& store, const std::string& base) {
  return {load_linear(t, store, base + ".fc1"), load_linear(t, store, base + ".fc2")};
}

LayerNormParams load_layer_norm(Tape& t, ParamStore& store, const std::string& base) {
  return {param(t, store, base + ".g"), param(t, store, base + ".b")};
}

}  // namespace mutdet::nn
