#include "mutdet/enhancement.hpp"

#include "mutdet/errors.hpp"

namespace mutdet::nn {

namespace {

std::string layer_base(const std::string& prefix, int i) {
  return prefix + "l" + std::to_string(i);
}

}  // namespace

void init_enhancement_params(ParamStore& store, const std::string& prefix,
                             const EnhancementConfig& cfg, std::uint64_t seed) {
  if (cfg.dim < 1 || cfg.n_layers < 0 || cfg.n_heads < 1 || cfg.dim % cfg.n_heads != 0)
    throw ConfigError("invalid enhancement configuration");
  std::mt19937_64 rng(seed);
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string base = layer_base(prefix, i);
    init_attention(store, base + ".self", cfg.dim, rng);
    init_attention(store, base + ".cross_of", cfg.dim, rng);
    init_attention(store, base + ".cross_fo", cfg.dim, rng);
    init_mlp(store, base + ".mlp", cfg.dim, cfg.mlp_hidden(), rng);
    init_layer_norm(store, base + ".ln1", cfg.dim);
    init_layer_norm(store, base + ".ln2", cfg.dim);
    init_layer_norm(store, base + ".ln3", cfg.dim);
    init_layer_norm(store, base + ".ln4", cfg.dim);
    // Damp each residual branch's exit so a fresh stack starts close to
    // per-row standardization and the enhanced embeddings begin strongly
    // correlated with their inputs instead of scrambled by random mixing.
    for (const char* w : {".self.out.W", ".cross_of.out.W", ".cross_fo.out.W", ".mlp.fc2.W"})
      store.mutable_value(base + w) *= 0.1;
  }
}

EnhancementOut enhancement_forward(Tape& t, ParamStore& store, const std::string& prefix,
                                   Var objects, Var features, const EnhancementConfig& cfg) {
  if (objects.cols() != cfg.dim && objects.rows() > 0)
    throw std::invalid_argument("enhancement_forward: object width does not match dim");
  if (features.cols() != cfg.dim)
    throw std::invalid_argument("enhancement_forward: feature width does not match dim");
  Var O = objects;
  Var F = features;
  const bool no_objects = objects.rows() == 0;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string base = layer_base(prefix, i);
    LayerNormParams ln4 = load_layer_norm(t, store, base + ".ln4");
    if (no_objects) {
      // Images without objects still refresh the feature side so that the
      // feature path stays exercised (and trained) regardless of labels.
      F = layer_norm(F, ln4.g, ln4.b);
      continue;
    }
    AttentionParams self_attn = load_attention(t, store, base + ".self");
    AttentionParams cross_of = load_attention(t, store, base + ".cross_of");
    AttentionParams cross_fo = load_attention(t, store, base + ".cross_fo");
    MlpParams mlp_p = load_mlp(t, store, base + ".mlp");
    LayerNormParams ln1 = load_layer_norm(t, store, base + ".ln1");
    LayerNormParams ln2 = load_layer_norm(t, store, base + ".ln2");
    LayerNormParams ln3 = load_layer_norm(t, store, base + ".ln3");

    Var o1 = layer_norm(add(multi_head_attention(O, O, self_attn, cfg.n_heads), O),
                        ln1.g, ln1.b);
    Var o2 = layer_norm(add(multi_head_attention(o1, F, cross_of, cfg.n_heads), o1),
                        ln2.g, ln2.b);
    Var o3 = layer_norm(add(mlp(o2, mlp_p), o2), ln3.g, ln3.b);
    // The feature refresh attends to the objects refined in this same layer,
    // not the layer's input objects.
    Var f1 = layer_norm(add(multi_head_attention(F, o3, cross_fo, cfg.n_heads), F),
                        ln4.g, ln4.b);
    O = o3;
    F = f1;
  }
  return {O, F};
}

}  // namespace mutdet::nn
