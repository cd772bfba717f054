#include "mutdet/param_store.hpp"

#include <stdexcept>

namespace mutdet::nn {

Mat& ParamStore::create(const std::string& name, int rows, int cols) {
  return create(name, Mat::Zero(rows, cols));
}

Mat& ParamStore::create(const std::string& name, const Mat& init) {
  if (entries_.count(name)) throw std::invalid_argument("parameter already exists: " + name);
  Entry e;
  e.value = init;
  e.grad = Mat::Zero(init.rows(), init.cols());
  auto [it, ok] = entries_.emplace(name, std::move(e));
  (void)ok;
  order_.push_back(name);
  return it->second.value;
}

bool ParamStore::has(const std::string& name) const { return entries_.count(name) > 0; }

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Mat& ParamStore::value(const std::string& name) const {
  const Entry& e = entry(name);
  ++e.reads;
  return e.value;
}

Mat& ParamStore::mutable_value(const std::string& name) { return entry(name).value; }

Mat& ParamStore::grad(const std::string& name) { return entry(name).grad; }

void ParamStore::zero_grads() {
  for (auto& [name, e] : entries_) e.grad.setZero();
}

std::int64_t ParamStore::read_count(const std::string& name) const { return entry(name).reads; }

std::int64_t ParamStore::read_count_prefix(const std::string& prefix) const {
  std::int64_t total = 0;
  for (const auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0) total += e.reads;
  return total;
}

void ParamStore::reset_read_counts() {
  for (auto& [name, e] : entries_) e.reads = 0;
}

}  // namespace mutdet::nn
