#include "m2f/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "m2f/kernels.hpp"

namespace m2f {

Tensor ParameterStore::add(std::string name, Tensor t) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
  t.set_requires_grad(true);
  entries_.push_back({std::move(name), t});
  return t;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

Tensor ParameterStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor.values());
  return out;
}

void ParameterStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != entries_.size()) throw std::invalid_argument("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = entries_[i].tensor.data();
    if (values[i].size() != dst.size()) {
      throw std::invalid_argument("snapshot mismatch for parameter '" + entries_[i].name + "'");
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  for (const auto& p : params_) {
    first_moment_.emplace_back(p.numel(), 0.0);
    second_moment_.emplace_back(p.numel(), 0.0);
  }
}

double AdamW::current_lr() const {
  const double t = static_cast<double>(step_count_ == 0 ? 0 : step_count_ - 1);
  return config_.lr / (1.0 + config_.lr_decay * t);
}

void AdamW::step() {
  ++step_count_;
  kernels::AdamWParams p;
  p.lr = current_lr();
  p.beta1 = config_.beta1;
  p.beta2 = config_.beta2;
  p.eps = config_.eps;
  p.weight_decay = config_.weight_decay;
  p.bias_correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  p.bias_correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& param = params_[i];
    std::span<const double> grad = param.grad();
    if (!param.has_grad()) {
      zeros.assign(param.numel(), 0.0);
      grad = zeros;
    }
    kernels::parallel::adamw_update(p, param.data(), grad, first_moment_[i], second_moment_[i]);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace m2f
