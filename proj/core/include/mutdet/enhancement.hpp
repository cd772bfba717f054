#pragma once

#include <cstdint>
#include <string>

#include "mutdet/layers.hpp"

namespace mutdet::nn {

struct EnhancementConfig {
  int dim = 32;
  int n_layers = 3;
  int n_heads = 1;
  int mlp_hidden() const { return 4 * dim; }
};

void init_enhancement_params(ParamStore& store, const std::string& prefix,
                             const EnhancementConfig& cfg, std::uint64_t seed);

struct EnhancementOut {
  Var objects;   // N x dim
  Var features;  // K x dim
};

/// Stacked enhancement layers. Each layer refines the object embeddings with
/// self-attention, cross-attention into the image features, and an MLP (all
/// with residual + layer norm), then refreshes the features by letting them
/// attend to the refined objects. n_layers == 0 passes both inputs through.
EnhancementOut enhancement_forward(Tape& t, ParamStore& store, const std::string& prefix,
                                   Var objects, Var features, const EnhancementConfig& cfg);

}  // namespace mutdet::nn
