#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mutdet/tape.hpp"

namespace mutdet::nn {

/// Named parameter tensors plus their gradient buffers. Iteration order is
/// insertion order, which keeps optimizer updates and checkpoints
/// deterministic. Reads through value() are counted per tensor so tests can
/// assert that a code path never touched a parameter group.
class ParamStore {
public:
  Mat& create(const std::string& name, int rows, int cols);
  Mat& create(const std::string& name, const Mat& init);

  bool has(const std::string& name) const;
  const Mat& value(const std::string& name) const;  // counted
  Mat& mutable_value(const std::string& name);      // not counted (optimizer)
  Mat& grad(const std::string& name);
  void zero_grads();

  const std::vector<std::string>& names() const { return order_; }
  std::int64_t read_count(const std::string& name) const;
  /// Sum of read counts over all names starting with `prefix`.
  std::int64_t read_count_prefix(const std::string& prefix) const;
  void reset_read_counts();

  std::size_t size() const { return order_.size(); }

private:
  struct Entry {
    Mat value;
    Mat grad;
    mutable std::int64_t reads = 0;
  };
  const Entry& entry(const std::string& name) const;
  Entry& entry(const std::string& name);

  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

}  // namespace mutdet::nn
