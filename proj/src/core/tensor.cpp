#include "m2f/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace m2f {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::from(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({n_rows, n_cols}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                      bool requires_grad) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return shape()[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw DimensionError("at(i, j) needs a matrix, got " + shape_str(shape()));
  return impl_->data.at(i * shape()[1] + j);
}

Tensor Tensor::clone() const {
  Tensor t(shape(), impl_->data, impl_->requires_grad);
  return t;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

ComputeGraph::ComputeGraph(const Tensor& root) : root_(root) {
  // Iterative post-order DFS; a tensor is emitted after all of its inputs.
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  if (root.defined() && root.requires_grad()) {
    stack.emplace_back(root.impl(), 0);
    seen.insert(root.impl());
  }
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const std::size_t n_inputs = impl->node ? impl->node->inputs.size() : 0;
    if (next < n_inputs) {
      TensorImpl* child = impl->node->inputs[next++].impl();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(impl);
      stack.pop_back();
    }
  }
}

void ComputeGraph::backward() {
  if (!root_.defined() || root_.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " +
                         (root_.defined() ? shape_str(root_.shape()) : std::string("undefined")));
  }
  if (!root_.requires_grad()) {
    throw std::logic_error("backward() on a loss that is not attached to a compute graph");
  }
  root_.impl()->grad_buffer()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorImpl* impl = *it;
    if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
  }
}

void backward(const Tensor& loss) { ComputeGraph(loss).backward(); }

}  // namespace m2f
