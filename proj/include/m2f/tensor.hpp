#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2f {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thrown for every shape/arity violation in tensor operations.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;
struct TensorImpl;

// Backward rule of one recorded operation. `out` is the output of the
// operation; the rule reads out.grad and accumulates into its inputs.
struct GradNode {
  const char* op = "";
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;  // null for leaves

  std::vector<double>& grad_buffer();
};

// Dense row-major float64 array with reverse-mode differentiation.
// Copies are shallow handles; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from(std::initializer_list<std::initializer_list<double>> rows,
                     bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);
  static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> grad_mutable() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->node == nullptr; }
  const GradNode* node() const { return impl_->node.get(); }

  double item() const;
  double at(std::size_t i) const { return impl_->data.at(i); }
  double at(std::size_t i, std::size_t j) const;

  Tensor clone() const;    // deep copy, detached leaf, same requires_grad
  Tensor detach() const;   // shared data copy without history

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reverse topological view of the operations reachable from a root.
class ComputeGraph {
 public:
  explicit ComputeGraph(const Tensor& root);

  // Nodes in topological order: every tensor appears after all of its inputs.
  const std::vector<TensorImpl*>& order() const { return order_; }

  // Seeds d(root)/d(root) = 1 and runs every backward rule once, in reverse order.
  void backward();

 private:
  Tensor root_;
  std::vector<TensorImpl*> order_;
};

// Populates grad for every requires_grad tensor reachable from `loss`.
// Gradients accumulate, so call zero_grad on parameters between steps.
void backward(const Tensor& loss);

// ---- operations -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

// b has the shape of x's last axis; it is broadcast over all leading axes.
Tensor add_row(const Tensor& x, const Tensor& b);
Tensor mul_row(const Tensor& x, const Tensor& g);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& x, Shape shape);

// x[..., p] * w[p, q] + b[q]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sqrt(const Tensor& x);  // derivative at 0 taken as 0
Tensor square(const Tensor& x);
Tensor log_clamped(const Tensor& x, double floor);  // log(max(x, floor))

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Elementwise max along `axis`; ties route the gradient to the first index.
Tensor max_pool_over_axis(const Tensor& x, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor stack(const std::vector<Tensor>& rows);  // new leading axis

// Divides each vector along the last axis by its Euclidean norm.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

// probs[n, C] -> [n] with out[i] = probs[i, labels[i]].
Tensor pick(const Tensor& probs, std::span<const int> labels);

// x [C, H, W], w [O, C, kh, kw], b [O] -> [O, H', W'].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding);

// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace m2f
