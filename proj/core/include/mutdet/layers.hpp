#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "mutdet/param_store.hpp"
#include "mutdet/tape.hpp"

namespace mutdet::nn {

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) init, the scheme used for every
/// trainable linear map in this project.
Mat uniform_init(int rows, int cols, int fan_in, std::mt19937_64& rng);

// Parameter tensors live under dotted names: "<base>.W"/"<base>.b" for linear
// maps, "<base>.{q,k,v,out}.*" for attention blocks, "<base>.{g,b}" for layer
// norms, "<base>.{fc1,fc2}.*" for MLPs. init_* creates and fills the tensors;
// load_* puts them on a tape for one forward pass.

void init_linear(ParamStore& store, const std::string& base, int out, int in,
                 std::mt19937_64& rng);
void init_attention(ParamStore& store, const std::string& base, int dim,
                    std::mt19937_64& rng);
void init_layer_norm(ParamStore& store, const std::string& base, int dim);
void init_mlp(ParamStore& store, const std::string& base, int dim, int hidden,
              std::mt19937_64& rng);

LinearParams load_linear(Tape& t, ParamStore& store, const std::string& base);
AttentionParams load_attention(Tape& t, ParamStore& store, const std::string& base);
MlpParams load_mlp(Tape& t, ParamStore& store, const std::string& base);

struct LayerNormParams {
  Var g;
  Var b;
};
LayerNormParams load_layer_norm(Tape& t, ParamStore& store, const std::string& base);

}  // namespace mutdet::nn
