#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "m2f/kernels.hpp"
#include "m2f/tensor.hpp"

namespace m2f {

namespace {

using BackwardFn = std::function<void(const TensorImpl&)>;

Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::vector<Tensor> inputs, BackwardFn rule) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  const bool track = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (!track) return out;
  out.set_requires_grad(true);
  auto node = std::make_shared<GradNode>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(rule);
  out.impl()->node = std::move(node);
  return out;
}

// Gradient buffer of `t`, or nullptr when t does not take gradients.
double* grad_of(const Tensor& t) {
  return t.requires_grad() ? t.impl()->grad_buffer().data() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape without_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

// y = f(x) elementwise with dy/dx = df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return make_result(x.shape(), std::move(out), op, {x}, [x, df](const TensorImpl& o) {
    double* gx = grad_of(x);
    if (!gx) return;
    const auto xs = x.data();
    for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += o.grad[i] * df(xs[i], o.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [a, b](const TensorImpl& o) {
    if (double* g = grad_of(a)) for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (double* g = grad_of(b)) for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [a, b](const TensorImpl& o) {
    if (double* g = grad_of(a)) for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (double* g = grad_of(b)) for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [a, b](const TensorImpl& o) {
    if (double* g = grad_of(a))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * b.data()[i];
    if (double* g = grad_of(b))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * a.data()[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, "scale", [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, "add_scalar", [value](double x) { return x + value; },
               [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor add_row(const Tensor& x, const Tensor& b) {
  if (x.rank() == 0 || b.rank() != 1 || b.numel() != x.shape().back()) {
    throw DimensionError("add_row: cannot broadcast " + shape_str(b.shape()) + " over " +
                         shape_str(x.shape()));
  }
  const std::size_t d = b.numel(), rows = x.numel() / d;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] + b.data()[j];
  return make_result(x.shape(), std::move(out), "add_row", {x, b},
                     [x, b, rows, d](const TensorImpl& o) {
                       if (double* g = grad_of(x))
                         for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                       if (double* g = grad_of(b))
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
                     });
}

Tensor mul_row(const Tensor& x, const Tensor& gain) {
  if (x.rank() == 0 || gain.rank() != 1 || gain.numel() != x.shape().back()) {
    throw DimensionError("mul_row: cannot broadcast " + shape_str(gain.shape()) + " over " +
                         shape_str(x.shape()));
  }
  const std::size_t d = gain.numel(), rows = x.numel() / d;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] * gain.data()[j];
  return make_result(x.shape(), std::move(out), "mul_row", {x, gain},
                     [x, gain, rows, d](const TensorImpl& o) {
                       if (double* g = grad_of(x))
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j)
                             g[r * d + j] += o.grad[r * d + j] * gain.data()[j];
                       if (double* g = grad_of(gain))
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j)
                             g[j] += o.grad[r * d + j] * x.data()[r * d + j];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  kernels::parallel::gemm({m, n, k, false, false}, a.data(), b.data(), out, false);
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [a, b, m, n, k](const TensorImpl& o) {
    if (a.requires_grad()) {
      auto& ga = a.impl()->grad_buffer();
      kernels::parallel::gemm({m, k, n, false, true}, o.grad, b.data(), ga, true);
    }
    if (b.requires_grad()) {
      auto& gb = b.impl()->grad_buffer();
      kernels::parallel::gemm({k, n, m, true, false}, a.data(), o.grad, gb, true);
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  return make_result({c, r}, std::move(out), "transpose", {a}, [a, r, c](const TensorImpl& o) {
    if (double* g = grad_of(a))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_result(std::move(shape), x.values(), "reshape", {x}, [x](const TensorImpl& o) {
    if (double* g = grad_of(x)) for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() == 0 || w.rank() != 2 || x.shape().back() != w.shape()[0] || b.rank() != 1 ||
      b.numel() != w.shape()[1]) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                         ", bias " + shape_str(b.shape()) + " do not agree");
  }
  const std::size_t p = w.shape()[0], q = w.shape()[1];
  Shape out_shape = x.shape();
  out_shape.back() = q;
  const Tensor x2 = x.rank() == 2 ? x : reshape(x, {x.numel() / p, p});
  const Tensor y = add_row(matmul(x2, w), b);
  return y.shape() == out_shape ? y : reshape(y, out_shape);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) mx = std::max(mx, xs[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) {
        out[base + i * s.inner] = std::exp(xs[base + i * s.inner] - mx);
        z += out[base + i * s.inner];
      }
      for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [x, s](const TensorImpl& o) {
    double* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = ou * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.len; ++i) dot += o.grad[base + i * s.inner] * o.data[base + i * s.inner];
        for (std::size_t i = 0; i < s.len; ++i) {
          const std::size_t idx = base + i * s.inner;
          gx[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layer_norm: empty input");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: last axis of " + shape_str(x.shape()) + " vs gain " +
                         shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xs[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xs[r * d + j] - mu) * (xs[r * d + j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xs[r * d + j] - mu) * inv_std[r];
      out[r * d + j] = gain.data()[j] * xhat[r * d + j] + bias.data()[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](const TensorImpl& o) {
        double* gx = grad_of(x);
        double* gg = grad_of(gain);
        double* gb = grad_of(bias);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = o.grad.data() + r * d;
          const double* xh = xhat.data() + r * d;
          if (gg) for (std::size_t j = 0; j < d; ++j) gg[j] += g[j] * xh[j];
          if (gb) for (std::size_t j = 0; j < d; ++j) gb[j] += g[j];
          if (!gx) continue;
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[j] * gain.data()[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[j] * gain.data()[j];
            gx[r * d + j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor log_clamped(const Tensor& x, double floor) {
  return unary(x, "log_clamped", [floor](double v) { return std::log(std::max(v, floor)); },
               [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({}, {acc}, "sum", {x}, [x](const TensorImpl& o) {
    if (double* g = grad_of(x)) for (std::size_t i = 0; i < x.numel(); ++i) g[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum_axis");
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.len; ++i)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += x.data()[(o * s.len + i) * s.inner + in];
  return make_result(without_axis(x.shape(), axis), std::move(out), "sum_axis", {x},
                     [x, s](const TensorImpl& o) {
                       double* g = grad_of(x);
                       if (!g) return;
                       for (std::size_t ou = 0; ou < s.outer; ++ou)
                         for (std::size_t i = 0; i < s.len; ++i)
                           for (std::size_t in = 0; in < s.inner; ++in)
                             g[(ou * s.len + i) * s.inner + in] += o.grad[ou * s.inner + in];
                     });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor max_pool_over_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "max_pool_over_axis");
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = 0;
      double best_v = x.data()[o * s.len * s.inner + in];
      for (std::size_t i = 1; i < s.len; ++i) {
        const double v = x.data()[(o * s.len + i) * s.inner + in];
        if (v > best_v) {
          best_v = v;
          best = i;
        }
      }
      out[o * s.inner + in] = best_v;
      arg[o * s.inner + in] = (o * s.len + best) * s.inner + in;
    }
  }
  return make_result(without_axis(x.shape(), axis), std::move(out), "max_pool_over_axis", {x},
                     [x, arg = std::move(arg)](const TensorImpl& o) {
                       double* g = grad_of(x);
                       if (!g) return;
                       for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  Shape out_shape = ref;
  std::size_t total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size() && axis < ref.size();
    for (std::size_t i = 0; ok && i < ref.size(); ++i) ok = (i == axis) || p.shape()[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(ref) +
                           " along axis " + std::to_string(axis));
    }
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  const AxisSplit s = split_axis(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.shape()[axis];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(p.data().data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * s.len + offset) * s.inner);
    offset += len;
  }
  return make_result(out_shape, std::move(out), "concat", parts,
                     [parts, offsets, s, axis](const TensorImpl& o) {
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         double* g = grad_of(parts[k]);
                         if (!g) continue;
                         const std::size_t len = parts[k].shape()[axis];
                         for (std::size_t ou = 0; ou < s.outer; ++ou)
                           for (std::size_t i = 0; i < len * s.inner; ++i)
                             g[ou * len * s.inner + i] += o.grad[(ou * s.len + offsets[k]) * s.inner + i];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (length == 0 || start + length > s.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data().data() + (o * s.len + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  return make_result(std::move(out_shape), std::move(out), "slice", {x},
                     [x, s, start, length](const TensorImpl& o) {
                       double* g = grad_of(x);
                       if (!g) return;
                       for (std::size_t ou = 0; ou < s.outer; ++ou)
                         for (std::size_t i = 0; i < length * s.inner; ++i)
                           g[(ou * s.len + start) * s.inner + i] += o.grad[ou * length * s.inner + i];
                     });
}

Tensor stack(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack: no inputs");
  std::vector<Tensor> lifted;
  lifted.reserve(rows.size());
  for (const auto& r : rows) {
    Shape s = r.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(r, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor l2_normalize(const Tensor& x, double eps) {
  if (x.rank() == 0) throw DimensionError("l2_normalize needs at least one axis");
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  std::vector<double> out(x.numel()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += x.data()[r * d + j] * x.data()[r * d + j];
    norms[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] / norms[r];
  }
  return make_result(x.shape(), std::move(out), "l2_normalize", {x},
                     [x, norms = std::move(norms), rows, d, eps](const TensorImpl& o) {
                       double* g = grad_of(x);
                       if (!g) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gy = o.grad.data() + r * d;
                         const double* y = o.data.data() + r * d;
                         if (norms[r] <= eps) {
                           for (std::size_t j = 0; j < d; ++j) g[r * d + j] += gy[j] / eps;
                           continue;
                         }
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
                         for (std::size_t j = 0; j < d; ++j) g[r * d + j] += (gy[j] - y[j] * dot) / norms[r];
                       }
                     });
}

Tensor pick(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.shape()[0] != labels.size()) {
    throw DimensionError("pick: probabilities " + shape_str(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size(), c = probs.shape()[1];
  std::vector<std::size_t> idx(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::out_of_range("label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    idx[i] = i * c + static_cast<std::size_t>(labels[i]);
    out[i] = probs.data()[idx[i]];
  }
  return make_result({n}, std::move(out), "pick", {probs}, [probs, idx = std::move(idx)](const TensorImpl& o) {
    double* g = grad_of(probs);
    if (!g) return;
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += o.grad[i];
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 3 || w.rank() != 4 || w.shape()[1] != x.shape()[0] || b.rank() != 1 ||
      b.numel() != w.shape()[0] || stride == 0) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                         ", bias " + shape_str(b.shape()) + " do not agree");
  }
  kernels::ConvShape cs;
  cs.channels = x.shape()[0];
  cs.height = x.shape()[1];
  cs.width = x.shape()[2];
  cs.out_channels = w.shape()[0];
  cs.kernel_h = w.shape()[2];
  cs.kernel_w = w.shape()[3];
  cs.stride = stride;
  cs.padding = padding;
  if (cs.height + 2 * padding < cs.kernel_h || cs.width + 2 * padding < cs.kernel_w) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  std::vector<double> out(cs.out_channels * cs.out_height() * cs.out_width());
  kernels::parallel::conv2d_forward(cs, x.data(), w.data(), b.data(), out);
  return make_result({cs.out_channels, cs.out_height(), cs.out_width()}, std::move(out), "conv2d",
                     {x, w, b}, [x, w, b, cs](const TensorImpl& o) {
                       std::span<double> gx, gw, gb;
                       if (x.requires_grad()) gx = x.impl()->grad_buffer();
                       if (w.requires_grad()) gw = w.impl()->grad_buffer();
                       if (b.requires_grad()) gb = b.impl()->grad_buffer();
                       kernels::parallel::conv2d_backward(cs, x.data(), w.data(), o.grad, gx, gw, gb);
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel()), out(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(rng) ? inv : 0.0;
    out[i] = x.data()[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), "dropout", {x}, [x, mask = std::move(mask)](const TensorImpl& o) {
    double* g = grad_of(x);
    if (!g) return;
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] += o.grad[i] * mask[i];
  });
}

}  // namespace m2f
