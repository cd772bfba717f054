#pragma once

#include <string>

#include "mutdet/config.hpp"
#include "mutdet/param_store.hpp"

namespace mutdet::ckpt {

inline constexpr const char* kMagic = "mutdet-ckpt-v1";

/// Self-describing binary container: magic line, the run config as key=value
/// text, then named row-major float64 tensors in ParamStore order. save/load
/// round-trips are bit-exact.
void save(const std::string& path, const cfg::RunConfig& rc, const nn::ParamStore& store);

struct Loaded {
  cfg::RunConfig config;
  nn::ParamStore store;
};

/// Throws DataError on missing files, bad magic, or truncation.
Loaded load(const std::string& path);

}  // namespace mutdet::ckpt
