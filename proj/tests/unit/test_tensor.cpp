#include <cmath>
#include <random>
#include <unordered_map>

#include "doctest.h"
#include "m2f/gradcheck.hpp"
#include "m2f/kernels.hpp"
#include "m2f/tensor.hpp"

using namespace m2f;

namespace {

void check_values(const Tensor& t, std::vector<double> expected, double tol = 1e-12) {
  REQUIRE(t.numel() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(t.at(i) == doctest::Approx(expected[i]).epsilon(tol));
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

std::size_t random_dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 4) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor id = Tensor::from({{1, 0}, {0, 1}});
  const Tensor m = Tensor::from({{1, 2}, {3, 4}});
  check_values(matmul(id, m), {1, 2, 3, 4});
  check_values(matmul(m, Tensor::from({{0}, {1}})), {2, 4});

  std::mt19937_64 rng(1);
  const Tensor z = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, rng));
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("and [2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples and properties") {
  check_values(softmax(Tensor::vector({0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  check_values(softmax(Tensor::vector({0, std::log(2.0)}), 0), {1.0 / 3, 2.0 / 3});

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({3, 5}, rng, -20, 20);
    const Tensor shifted = add_scalar(x, 123.25);
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const Tensor y = softmax(x, axis);
      const Tensor ys = softmax(shifted, axis);
      for (std::size_t i = 0; i < y.numel(); ++i) {
        CHECK(y.at(i) >= 0.0);
        CHECK(y.at(i) == doctest::Approx(ys.at(i)).epsilon(1e-12));
      }
      const Tensor sums = sum_axis(y, axis);
      for (double s : sums.data()) CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("layer_norm examples and properties") {
  const Tensor ones = Tensor::ones({4});
  const Tensor zeros = Tensor::zeros({4});
  check_values(layer_norm(Tensor::full({4}, 3.5), ones, zeros, 1e-5), {0, 0, 0, 0});
  const Tensor two = layer_norm(Tensor::vector({1, 3}), Tensor::ones({2}), Tensor::zeros({2}), 1e-15);
  check_values(two, {-1, 1}, 1e-9);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = random_dim(rng, 2, 9);
    const Tensor x = random_tensor({3, d}, rng, -5, 5);
    const Tensor plain = layer_norm(x, Tensor::ones({d}), Tensor::zeros({d}), 1e-12);
    for (std::size_t r = 0; r < 3; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += plain.at(r, j);
      mu /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) var += (plain.at(r, j) - mu) * (plain.at(r, j) - mu);
      var /= static_cast<double>(d);
      CHECK(std::abs(mu) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
    const Tensor g = random_tensor({d}, rng), b = random_tensor({d}, rng);
    const Tensor affine = layer_norm(x, g, b, 1e-12);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t j = 0; j < d; ++j)
        CHECK(affine.at(r, j) == doctest::Approx(g.at(j) * plain.at(r, j) + b.at(j)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 3}), Tensor::ones({4}), Tensor::zeros({4}), 1e-5),
                  DimensionError);
}

TEST_CASE("linear examples") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({3, 2}, rng);
  check_values(linear(x, Tensor::from({{1, 0}, {0, 1}}), Tensor::zeros({2})),
               std::vector<double>(x.values()));
  check_values(linear(Tensor::vector({1, 1}), Tensor::from({{1}, {2}}), Tensor::vector({0.5})), {3.5});
  check_values(linear(Tensor::zeros({2, 2}), random_tensor({2, 3}, rng), Tensor::vector({1, 2, 3})),
               {1, 2, 3, 1, 2, 3});
  CHECK_THROWS_AS(linear(Tensor::zeros({2, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2})), DimensionError);
}

TEST_CASE("max_pool_over_axis examples") {
  check_values(max_pool_over_axis(Tensor::from({{1, 5}, {3, 2}}), 0), {3, 5});
  check_values(max_pool_over_axis(Tensor::from({{4, 7}, {4, 7}, {4, 7}}), 0), {4, 7});
  check_values(max_pool_over_axis(Tensor::from({{9, -1, 2}}), 0), {9, -1, 2});

  // ties route to the first maximal index
  Tensor x = Tensor::from({{2, 1}, {2, 3}}, true);
  backward(sum(max_pool_over_axis(x, 0)));
  check_values(Tensor({4}, std::vector<double>(x.grad().begin(), x.grad().end())), {1, 0, 0, 1});
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::vector({1, -2, 3}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor s = Tensor::scalar(3.0, true);
  backward(square(s));
  CHECK(s.grad()[0] == 6.0);

  Tensor y = Tensor::vector({0.5, 1.5}, true);
  backward(add(sum(y), sum(y)));
  for (double g : y.grad()) CHECK(g == 2.0);

  CHECK_THROWS_AS(backward(Tensor::vector({1, 2}, true)), DimensionError);
}

TEST_CASE("compute graph is topologically ordered and visits each node once") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({2, 3}, rng);
  a.set_requires_grad(true);
  Tensor b = random_tensor({3, 2}, rng);
  b.set_requires_grad(true);
  const Tensor h = matmul(a, b);
  const Tensor loss = sum(add(gelu(h), softmax(h, 1)));

  ComputeGraph graph(loss);
  std::unordered_map<const TensorImpl*, std::size_t> position;
  for (std::size_t i = 0; i < graph.order().size(); ++i) {
    CHECK(position.emplace(graph.order()[i], i).second);
  }
  for (const TensorImpl* impl : graph.order()) {
    if (!impl->node) continue;
    for (const auto& in : impl->node->inputs) CHECK(position.at(in.impl()) < position.at(impl));
  }
  CHECK(graph.order().back() == loss.impl());
}

TEST_CASE("no-grad guard disables recording") {
  Tensor x = Tensor::vector({1, 2}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(sum(x).requires_grad());
  }
  CHECK(sum(x).requires_grad());
}

TEST_CASE("gradient correctness of every differentiable operation") {
  std::mt19937_64 rng(6);
  using Builder = std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(std::mt19937_64&)>;
  const std::vector<std::pair<const char*, Builder>> cases = {
      {"matmul", [](std::mt19937_64& r) {
         Tensor a = random_tensor({random_dim(r), random_dim(r)}, r);
         Tensor b = random_tensor({a.dim(1), random_dim(r)}, r);
         Tensor w = random_tensor({a.dim(0), b.dim(1)}, r);
         return std::pair{std::function<Tensor()>([=] { return sum(mul(matmul(a, b), w)); }),
                          std::vector<Tensor>{a, b}};
       }},
      {"softmax", [](std::mt19937_64& r) {
         Tensor x = random_tensor({random_dim(r, 2), random_dim(r, 2)}, r, -2, 2);
         Tensor w = random_tensor(x.shape(), r);
         const std::size_t axis = random_dim(r, 0, 1);
         return std::pair{std::function<Tensor()>([=] { return sum(mul(softmax(x, axis), w)); }),
                          std::vector<Tensor>{x}};
       }},
      {"layer_norm", [](std::mt19937_64& r) {
         const std::size_t d = random_dim(r, 2, 6);
         Tensor x = random_tensor({random_dim(r), d}, r, -2, 2);
         Tensor g = random_tensor({d}, r), b = random_tensor({d}, r);
         Tensor w = random_tensor(x.shape(), r);
         return std::pair{std::function<Tensor()>([=] { return sum(mul(layer_norm(x, g, b, 1e-5), w)); }),
                          std::vector<Tensor>{x, g, b}};
       }},
      {"linear", [](std::mt19937_64& r) {
         Tensor x = random_tensor({random_dim(r), random_dim(r)}, r);
         Tensor w = random_tensor({x.dim(1), random_dim(r)}, r);
         Tensor b = random_tensor({w.dim(1)}, r);
         Tensor t = random_tensor({x.dim(0), w.dim(1)}, r);
         return std::pair{std::function<Tensor()>([=] { return sum(mul(linear(x, w, b), t)); }),
                          std::vector<Tensor>{x, w, b}};
       }},
      {"max_pool_over_axis", [](std::mt19937_64& r) {
         Tensor x = random_tensor({random_dim(r, 2, 5), random_dim(r)}, r);
         Tensor w = random_tensor({x.dim(1)}, r);
         return std::pair{std::function<Tensor()>([=] { return sum(mul(max_pool_over_axis(x, 0), w)); }),
                          std::vector<Tensor>{x}};
       }},
      {"elementwise", [](std::mt19937_64& r) {
         Tensor x = random_tensor({random_dim(r), random_dim(r)}, r, 0.2, 1.5);
         Tensor y = random_tensor(x.shape(), r);
         return std::pair{std::function<Tensor()>([=] {
                            return sum(add(mul(gelu(y), sqrt(x)),
                                           sub(exp(scale(y, 0.5)), log_clamped(add_scalar(x, 0.1), 1e-12))));
                          }),
                          std::vector<Tensor>{x, y}};
       }},
      {"axis reductions and slicing", [](std::mt19937_64& r) {
         Tensor x = random_tensor({random_dim(r, 2), random_dim(r, 2), random_dim(r)}, r);
         Tensor w = random_tensor({x.dim(0), x.dim(2)}, r);
         return std::pair{std::function<Tensor()>([=] {
                            const Tensor part = slice(x, 1, 1, x.dim(1) - 1);
                            const Tensor joined = concat({part, x}, 1);
                            return sum(mul(square(mean_axis(joined, 1)), w));
                          }),
                          std::vector<Tensor>{x}};
       }},
      {"l2_normalize and pick", [](std::mt19937_64& r) {
         Tensor x = random_tensor({3, random_dim(r, 2)}, r);
         std::vector<int> labels(3);
         for (auto& l : labels) l = static_cast<int>(random_dim(r, 0, x.dim(1) - 1));
         return std::pair{std::function<Tensor()>([=] {
                            return sum(log_clamped(pick(softmax(l2_normalize(x), 1), labels), 1e-12));
                          }),
                          std::vector<Tensor>{x}};
       }},
      {"conv2d", [](std::mt19937_64& r) {
         Tensor x = random_tensor({random_dim(r, 1, 2), random_dim(r, 3, 5), random_dim(r, 3, 5)}, r);
         const std::size_t k = random_dim(r, 1, 3);
         Tensor w = random_tensor({random_dim(r, 1, 3), x.dim(0), k, k}, r);
         Tensor b = random_tensor({w.dim(0)}, r);
         const std::size_t stride = random_dim(r, 1, 2);
         return std::pair{std::function<Tensor()>([=] { return sum(square(conv2d(x, w, b, stride, k / 2))); }),
                          std::vector<Tensor>{x, w, b}};
       }},
      {"transpose, reshape, stack, row broadcasts", [](std::mt19937_64& r) {
         Tensor x = random_tensor({random_dim(r), random_dim(r)}, r);
         Tensor g = random_tensor({x.dim(0)}, r), b = random_tensor({x.dim(0)}, r);
         return std::pair{std::function<Tensor()>([=] {
                            const Tensor t = add_row(mul_row(transpose(x), g), b);
                            const Tensor s = stack({reshape(t, {t.numel()}), neg(reshape(t, {t.numel()}))});
                            return sum(square(s));
                          }),
                          std::vector<Tensor>{x, g, b}};
       }},
  };
  for (const auto& [name, build] : cases) {
    for (int trial = 0; trial < 20; ++trial) {
      auto [loss, inputs] = build(rng);
      const auto report = check_gradients(loss, inputs);
      INFO(name << " trial " << trial << ": " << report.worst_entry);
      CHECK(report.passed(1e-4));
    }
  }
}

TEST_CASE("dropout is identity in evaluation and unbiased in training") {
  std::mt19937_64 rng(7);
  const Tensor x = Tensor::ones({20000});
  CHECK(dropout(x, 0.4, false, rng).impl() == x.impl());
  const Tensor y = dropout(x, 0.4, true, rng);
  double kept = 0.0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.6) < 1e-12));
    kept += v > 0.0;
  }
  CHECK(kept / 20000.0 == doctest::Approx(0.6).epsilon(0.03));
  std::mt19937_64 a(9), b(9);
  CHECK(dropout(x, 0.5, true, a).values() == dropout(x, 0.5, true, b).values());
}

TEST_CASE("parallel kernels agree with the serial reference") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  auto fill = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
  };
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const kernels::GemmShape s{37, 29, 41, ta, tb};
      const auto a = fill(s.m * s.k), b = fill(s.k * s.n);
      auto c1 = fill(s.m * s.n);
      auto c2 = c1;
      kernels::reference::gemm(s, a, b, c1, true);
      kernels::parallel::gemm(s, a, b, c2, true);
      for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
    }
  }

  kernels::ConvShape cs;
  cs.channels = 3;
  cs.height = 11;
  cs.width = 9;
  cs.out_channels = 4;
  cs.kernel_h = cs.kernel_w = 3;
  cs.stride = 2;
  cs.padding = 1;
  const auto x = fill(3 * 11 * 9), w = fill(4 * 3 * 9), bias = fill(4);
  const std::size_t out_n = 4 * cs.out_height() * cs.out_width();
  std::vector<double> o1(out_n), o2(out_n);
  kernels::reference::conv2d_forward(cs, x, w, bias, o1);
  kernels::parallel::conv2d_forward(cs, x, w, bias, o2);
  for (std::size_t i = 0; i < out_n; ++i) CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-12));

  const auto g = fill(out_n);
  std::vector<double> gx1(x.size()), gx2(x.size()), gw1(w.size()), gw2(w.size()), gb1(4), gb2(4);
  kernels::reference::conv2d_backward(cs, x, w, g, gx1, gw1, gb1);
  kernels::parallel::conv2d_backward(cs, x, w, g, gx2, gw2, gb2);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(gx1[i] == doctest::Approx(gx2[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(gw1[i] == doctest::Approx(gw2[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < 4; ++i) CHECK(gb1[i] == doctest::Approx(gb2[i]).epsilon(1e-12));
}
