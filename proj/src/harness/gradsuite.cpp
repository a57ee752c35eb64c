#include "m2f/gradsuite.hpp"

#include <cmath>
#include <random>

#include "m2f/extractor.hpp"
#include "m2f/fusion.hpp"
#include "m2f/losses.hpp"

namespace m2f {

namespace {

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  Tensor input(Shape shape, double lo = -1.5, double hi = 1.5) {
    return Tensor::uniform(std::move(shape), lo, hi, rng_, true);
  }

  // Inputs whose entries stay at least `gap` away from zero, so kinks at 0
  // (relu) are never straddled by the finite-difference step.
  Tensor away_from_zero(Shape shape, double gap = 0.1) {
    Tensor t = input(std::move(shape));
    for (double& v : t.data()) v = v < 0 ? v - gap : v + gap;
    return t;
  }

  // Contracts `f`'s output with a fixed random tensor of the same shape.
  void check(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> inputs,
             std::size_t max_entries = 0) {
    Tensor out;
    {
      NoGradGuard probe;
      out = f();
    }
    const Tensor head = Tensor::normal(out.shape(), 0.0, 1.0, rng_);
    GradCheckOptions opts;
    opts.max_entries_per_input = max_entries;
    opts.seed = rng_();
    auto loss = [&] { return out.rank() == 0 ? f() : sum(mul(f(), head)); };
    results_.push_back({name, check_gradients(loss, std::move(inputs), opts)});
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<GradSuiteEntry> take() { return std::move(results_); }

 private:
  std::mt19937_64 rng_;
  std::vector<GradSuiteEntry> results_;
};

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParameterStore& params) {
  for (const Tensor& t : params.tensors()) inputs.push_back(t);
  return inputs;
}

void core_ops(Suite& s) {
  Tensor a = s.input({3, 4}), b = s.input({3, 4}), row = s.input({4});
  s.check("add", [&] { return add(a, b); }, {a, b});
  s.check("sub", [&] { return sub(a, b); }, {a, b});
  s.check("mul", [&] { return mul(a, b); }, {a, b});
  s.check("scale", [&] { return scale(a, -2.5); }, {a});
  s.check("add_scalar", [&] { return add_scalar(a, 0.75); }, {a});
  s.check("neg", [&] { return neg(a); }, {a});
  s.check("add_row", [&] { return add_row(a, row); }, {a, row});
  s.check("mul_row", [&] { return mul_row(a, row); }, {a, row});

  Tensor m1 = s.input({3, 5}), m2 = s.input({5, 2});
  s.check("matmul", [&] { return matmul(m1, m2); }, {m1, m2});
  s.check("transpose", [&] { return transpose(m1); }, {m1});
  s.check("reshape", [&] { return reshape(m1, {5, 3}); }, {m1});
  Tensor x3 = s.input({2, 3, 5}), w = s.input({5, 4}), bias = s.input({4});
  s.check("linear", [&] { return linear(x3, w, bias); }, {x3, w, bias});

  s.check("softmax axis 0", [&] { return softmax(a, 0); }, {a});
  s.check("softmax axis 1", [&] { return softmax(a, 1); }, {a});
  Tensor gain = s.input({4}), shift = s.input({4});
  s.check("layer_norm", [&] { return layer_norm(a, gain, shift, 1e-5); }, {a, gain, shift});

  Tensor kinked = s.away_from_zero({3, 4});
  s.check("relu", [&] { return relu(kinked); }, {kinked});
  s.check("gelu", [&] { return gelu(a); }, {a});
  s.check("exp", [&] { return exp(a); }, {a});
  Tensor positive = s.input({3, 4}, 0.2, 2.0);
  s.check("sqrt", [&] { return sqrt(positive); }, {positive});
  s.check("square", [&] { return square(a); }, {a});
  s.check("log_clamped", [&] { return log_clamped(positive, 1e-12); }, {positive});

  s.check("sum", [&] { return sum(a); }, {a});
  s.check("mean", [&] { return mean(a); }, {a});
  s.check("sum_axis", [&] { return sum_axis(x3, 1); }, {x3});
  s.check("mean_axis", [&] { return mean_axis(x3, 2); }, {x3});
  s.check("max_pool_over_axis", [&] { return max_pool_over_axis(x3, 0); }, {x3});
  s.check("concat", [&] { return concat({a, b}, 1); }, {a, b});
  s.check("slice", [&] { return slice(x3, 2, 1, 3); }, {x3});
  s.check("stack", [&] { return stack({row, gain}); }, {row, gain});
  s.check("l2_normalize", [&] { return l2_normalize(a); }, {a});
  const std::vector<int> labels{2, 0, 3};
  s.check("pick", [&] { return pick(softmax(a, 1), labels); }, {a});

  Tensor image = s.input({2, 5, 6}), kernel = s.input({3, 2, 3, 3}), kb = s.input({3});
  s.check("conv2d stride 1", [&] { return conv2d(image, kernel, kb, 1, 1); }, {image, kernel, kb});
  s.check("conv2d stride 2", [&] { return conv2d(image, kernel, kb, 2, 1); }, {image, kernel, kb});
  const std::uint64_t mask_seed = s.rng()();
  s.check("dropout", [&] {
    std::mt19937_64 mask(mask_seed);
    return dropout(a, 0.4, true, mask);
  }, {a});
}

void loss_functions(Suite& s) {
  Tensor u = s.input({6}), v = s.input({6});
  s.check("pairwise_distance", [&] { return losses::pairwise_distance(u, v); }, {u, v});
  Tensor ap = s.input({5}, 0.0, 2.0), an = s.input({5}, 0.0, 2.0), pn = s.input({5}, 0.0, 2.0);
  s.check("amt_loss", [&] { return losses::amt_loss(ap, an, pn); }, {ap, an, pn});
  Tensor z = s.input({6, 4});
  s.check("variance_loss", [&] { return losses::variance_loss(z); }, {z});
  s.check("covariance_loss", [&] { return losses::covariance_loss(z); }, {z});
  Tensor za = s.input({4, 5}), zp = s.input({4, 5}), zn = s.input({4, 5});
  s.check("extractor_loss", [&] {
    return losses::extractor_loss(l2_normalize(za), l2_normalize(zp), l2_normalize(zn)).total;
  }, {za, zp, zn});
  Tensor logits = s.input({2, 3, 4});
  const std::vector<int> labels{0, 3, 1, 2, 2, 1};
  s.check("cross_entropy", [&] { return losses::cross_entropy(softmax(logits, 2), labels); }, {logits});
}

void layers(Suite& s) {
  ParameterStore attn_params;
  const MultiHeadAttention mha(attn_params, "mha", 8, 6, 2, s.rng());
  Tensor q = s.input({3, 8}), key = s.input({3, 6}), val = s.input({3, 8});
  s.check("multi_head_attention", [&] { return mha(q, key, val); }, with_params({q, key, val}, attn_params));

  ParameterStore block_params;
  const EncoderBlock block(block_params, "block", 8, 2, 32, s.rng());
  const ForwardContext eval;
  Tensor x = s.input({3, 8});
  s.check("encoder_block", [&] { return block(x, eval); }, with_params({x}, block_params), 24);

  ParameterStore fusion_params;
  const FusionLayer fusion(fusion_params, "fusion", 8, 6, 4, 2, true, true, s.rng());
  Tensor fa = s.input({3, 6}), ft = s.input({3, 8}), fv = s.input({3, 4});
  s.check("fusion_layer", [&] { return fusion(fa, ft, fv, eval); }, with_params({fa, ft, fv}, fusion_params), 24);

  ExtractorConfig ecfg;
  ecfg.input_shape = {6, 6, 1};
  ecfg.encoder_channels = {3, 4};
  ecfg.representation_dim = 5;
  ecfg.init_seed = s.rng()();
  const Extractor extractor(ecfg);
  Tensor img = s.input({1, 6, 6});
  s.check("extractor", [&] { return extractor.represent(img); }, with_params({img}, extractor.parameters()), 12);
}

void full_model(Suite& s) {
  ModelConfig c;
  c.d_t = 16;
  c.d_a = 8;
  c.d_v = 12;
  c.n_t = c.n_a = c.n_v = 1;
  c.m = 2;
  c.heads = 2;
  c.dropout = 0.0;
  c.n_classes = 4;
  c.init_seed = s.rng()();
  const FusionModel model(c);
  DialogFeatures d;
  d.f_it = s.input({3, 16});
  d.f_ia = s.input({3, 8});
  d.f_iv = s.input({3, 12});
  d.labels = {1, 3, 0};
  s.check("full model (k=3, C=4)", [&] { return losses::cross_entropy(model.forward(d).probs, d.labels); },
          with_params({d.f_it, d.f_ia, d.f_iv}, model.parameters()), 16);
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  Suite s(seed);
  core_ops(s);
  loss_functions(s);
  layers(s);
  full_model(s);
  return s.take();
}

}  // namespace m2f
