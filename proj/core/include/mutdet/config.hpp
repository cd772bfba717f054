#pragma once

#include <cstdint>
#include <string>

#include "mutdet/detector.hpp"
#include "mutdet/losses.hpp"

namespace mutdet::cfg {

/// Every tunable of a pre-training run, writable as flat `key = value` lines.
/// parse/serialize round-trip exactly; unknown keys are configuration errors.
struct RunConfig {
  // schedule
  std::uint64_t seed = 42;
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 1e-3;
  int lr_decay_epoch = 18;
  double lr_decay_factor = 0.1;
  int warmup_iters = 50;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int log_every = 1;
  int checkpoint_every = 0;  // epochs between mid-run checkpoints; 0 = end only
  std::string calibration_mode = "siamese";
  bool enhance = true;

  // detector
  int image_size = 64;
  int C = 32;
  int N = 20;
  int K_cls = 16;
  int A_bins = 180;
  int encoder_layers = 1;
  int decoder_layers = 2;
  int enhancement_layers = 3;
  bool two_stage_queries = false;
  bool deep_supervision = true;
  std::uint64_t init_seed = 7;
  std::uint64_t backbone_seed = 1234;

  // losses
  double tau = 0.2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double qfl_gamma = 2.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  double match_cls = 2.0;
  double match_l1 = 5.0;
  double match_giou = 2.0;
  double match_ang = 0.5;
  double csl_sigma = 4.0;
  int csl_radius = 12;

  det::DetectorConfig detector() const;
  loss::LossOptions loss_options() const;
  void validate() const;  // throws ConfigError
};

/// Applies one key=value pair. Unknown key or unparsable value -> ConfigError.
void apply_key_value(RunConfig& rc, const std::string& key, const std::string& value);

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);  // DataError if unreadable

/// One key = value line per field, fixed order, floats at 17 significant
/// digits so parse(serialize(rc)) reproduces rc bit-for-bit.
std::string serialize_config(const RunConfig& rc);

}  // namespace mutdet::cfg
