#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "m2f/tensor.hpp"

namespace m2f {

// Ordered, named collection of trainable tensors.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  // Registers `t` under `name` (names must be unique) and marks it trainable.
  Tensor add(std::string name, Tensor t);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t total_values() const;
  Tensor find(const std::string& name) const;
  void zero_grad();

  // Deep copy of every parameter value, in registration order.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<Entry> entries_;
};

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;  // decoupled: w -= lr * weight_decay * w
  double lr_decay = 0.0;       // time-based: lr_t = lr / (1 + lr_decay * (t - 1))
};

// AdamW with bias-corrected moments and decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // One update from the parameters' current gradients; a parameter with no
  // gradient is updated as if its gradient were zero.
  void step();
  void zero_grad();

  std::size_t steps() const { return step_count_; }
  const AdamWConfig& config() const { return config_; }
  double current_lr() const;

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  AdamWConfig config_;
  std::size_t step_count_ = 0;
};

}  // namespace m2f
