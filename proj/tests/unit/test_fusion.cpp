#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "m2f/errors.hpp"
#include "m2f/fusion.hpp"
#include "m2f/gradcheck.hpp"
#include "m2f/losses.hpp"

using namespace m2f;

namespace {

void set_values(Tensor t, const std::vector<double>& v) {
  REQUIRE(t.numel() == v.size());
  std::copy(v.begin(), v.end(), t.data().begin());
}

void set_identity(Tensor w) {
  REQUIRE(w.rank() == 2);
  for (std::size_t i = 0; i < w.dim(0); ++i)
    for (std::size_t j = 0; j < w.dim(1); ++j) w.data()[i * w.dim(1) + j] = i == j ? 1.0 : 0.0;
}

DialogFeatures random_dialog(const ModelConfig& c, std::size_t k, std::mt19937_64& rng) {
  DialogFeatures d;
  d.f_it = Tensor::normal({k, c.d_t}, 0.0, 1.0, rng);
  d.f_ia = Tensor::normal({k, c.d_a}, 0.0, 1.0, rng);
  d.f_iv = Tensor::normal({k, c.d_v}, 0.0, 1.0, rng);
  for (std::size_t i = 0; i < k; ++i) d.labels.push_back(static_cast<int>(rng() % c.n_classes));
  return d;
}

ModelConfig micro_config() {
  ModelConfig c;
  c.d_t = 8;
  c.d_a = 6;
  c.d_v = 4;
  c.n_t = c.n_a = c.n_v = 1;
  c.m = 2;
  c.heads = 2;
  c.dropout = 0.0;
  c.n_classes = 4;
  c.init_seed = 3;
  return c;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::vector<double> out(x.numel());
  const std::size_t w = x.dim(1);
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(x.values().begin() + perm[i] * w, w, out.begin() + i * w);
  return Tensor(x.shape(), out);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  return worst;
}

}  // namespace

TEST_CASE("multi_head_attention") {
  std::mt19937_64 rng(1);
  ParameterStore params;
  const MultiHeadAttention mha(params, "mha", 8, 5, 2, rng);
  CHECK(params.size() == 8);

  SUBCASE("single utterance attends to itself with weight exactly 1") {
    const Tensor q = Tensor::normal({1, 8}, 0, 1, rng), key = Tensor::normal({1, 5}, 0, 1, rng),
                 v = Tensor::normal({1, 8}, 0, 1, rng);
    std::vector<Tensor> weights;
    const Tensor out = mha(q, key, v, &weights);
    REQUIRE(weights.size() == 2);
    for (const Tensor& w : weights) CHECK(w.item() == 1.0);
    const Tensor expected = mha.output(mha.value(v));
    CHECK(max_abs_diff(out, expected) < 1e-14);
  }

  SUBCASE("zero value projection gives zero output") {
    ParameterStore p2;
    MultiHeadAttention zero(p2, "z", 4, 4, 2, rng);
    for (double& x : zero.value.weight.data()) x = 0.0;
    const Tensor out = zero(Tensor::normal({3, 4}, 0, 1, rng), Tensor::normal({3, 4}, 0, 1, rng),
                            Tensor::normal({3, 4}, 0, 1, rng));
    for (double x : out.values()) CHECK(x == 0.0);
  }

  SUBCASE("identity projections match hand-computed softmax(QK^T/sqrt(d))V") {
    ParameterStore p2;
    MultiHeadAttention id(p2, "id", 2, 2, 1, rng);
    for (const Linear* l : {&id.query, &id.key, &id.value, &id.output}) set_identity(l->weight);
    const Tensor q = Tensor::from({{1, 0}, {0, 1}}), key = Tensor::from({{1, 0}, {0, 2}}),
                 v = Tensor::from({{1, 2}, {3, 4}});
    const double s = 1.0 / std::sqrt(2.0);
    // row 0 scores [s, 0], row 1 scores [0, 2s]
    const double a0 = std::exp(s) / (std::exp(s) + 1.0), a1 = 1.0 / (1.0 + std::exp(2 * s));
    const std::vector<double> expected{a0 * 1 + (1 - a0) * 3, a0 * 2 + (1 - a0) * 4, a1 * 1 + (1 - a1) * 3,
                                       a1 * 2 + (1 - a1) * 4};
    const Tensor out = id(q, key, v);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(expected[i]).epsilon(1e-14));
  }

  SUBCASE("attention rows sum to one and shapes are checked") {
    std::vector<Tensor> weights;
    mha(Tensor::normal({4, 8}, 0, 1, rng), Tensor::normal({4, 5}, 0, 1, rng), Tensor::normal({4, 8}, 0, 1, rng),
        &weights);
    for (const Tensor& w : weights) {
      for (std::size_t i = 0; i < 4; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 4; ++j) row += w.at(i, j);
        CHECK(std::abs(row - 1.0) < 1e-12);
      }
    }
    CHECK_THROWS_AS(mha(Tensor::zeros({3, 8}), Tensor::zeros({2, 5}), Tensor::zeros({3, 8})), DimensionError);
    CHECK_THROWS_AS(mha(Tensor::zeros({3, 8}), Tensor::zeros({3, 8}), Tensor::zeros({3, 8})), DimensionError);
    ParameterStore p3;
    CHECK_THROWS_AS(MultiHeadAttention(p3, "bad", 6, 6, 4, rng), std::invalid_argument);
  }

  SUBCASE("gradients") {
    for (int trial = 0; trial < 5; ++trial) {
      Tensor q = Tensor::normal({3, 8}, 0, 1, rng, true), key = Tensor::normal({3, 5}, 0, 1, rng, true),
             v = Tensor::normal({3, 8}, 0, 1, rng, true);
      const Tensor head = Tensor::normal({3, 8}, 0, 1, rng);
      std::vector<Tensor> inputs{q, key, v};
      for (const Tensor& t : params.tensors()) inputs.push_back(t);
      const auto report = check_gradients([&] { return sum(mul(mha(q, key, v), head)); }, inputs);
      INFO(report.worst_entry);
      CHECK(report.passed(1e-4));
    }
  }
}

TEST_CASE("transformer encoder stack") {
  std::mt19937_64 rng(2);
  ParameterStore params;
  const ForwardContext eval;
  const EncoderStack empty(params, "e0", 0, 8, 2, 32, rng);
  const Tensor x = Tensor::normal({5, 8}, 0, 1, rng);
  CHECK(empty(x, eval).values() == x.values());
  CHECK(params.size() == 0);

  const EncoderStack two(params, "e2", 2, 8, 2, 32, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor in = Tensor::normal({5, 8}, 0, 1, rng);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(max_abs_diff(two(permute_rows(in, perm), eval), permute_rows(two(in, eval), perm)) < 1e-12);
  }

  for (int trial = 0; trial < 3; ++trial) {
    Tensor in = Tensor::normal({4, 8}, 0, 1, rng, true);
    const Tensor head = Tensor::normal({4, 8}, 0, 1, rng);
    std::vector<Tensor> inputs{in};
    for (const Tensor& t : params.tensors()) inputs.push_back(t);
    GradCheckOptions opts;
    opts.max_entries_per_input = 16;
    opts.seed = 50 + trial;
    const auto report = check_gradients([&] { return sum(mul(two(in, eval), head)); }, inputs, opts);
    INFO(report.worst_entry);
    CHECK(report.passed(1e-4));
  }

  // dropout is active only in training mode and reproducible from the seed
  std::mt19937_64 a(9), b(9);
  const ForwardContext train_a{true, 0.4, &a}, train_b{true, 0.4, &b};
  const Tensor ya = two(x, train_a), yb = two(x, train_b);
  CHECK(ya.values() == yb.values());
  CHECK(ya.values() != two(x, eval).values());
  const ForwardContext missing{true, 0.4, nullptr};
  CHECK_THROWS_AS(two(x, missing), std::invalid_argument);
}

TEST_CASE("attention fusion layer") {
  std::mt19937_64 rng(3);
  const ForwardContext eval;

  SUBCASE("single utterance") {
    ParameterStore params;
    const FusionLayer layer(params, "f", 8, 6, 4, 2, true, true, rng);
    const Tensor t = Tensor::normal({1, 8}, 0, 1, rng);
    const Tensor out = layer(Tensor::normal({1, 6}, 0, 1, rng), t, Tensor::normal({1, 4}, 0, 1, rng), eval);
    const MultiHeadAttention& a = *layer.audio_branch();
    const MultiHeadAttention& v = *layer.visual_branch();
    const Tensor expected = layer.projection()(concat({a.output(a.value(t)), v.output(v.value(t))}, 1));
    CHECK(max_abs_diff(out, expected) < 1e-14);
  }

  SUBCASE("shape contract and utterance-count mismatch") {
    ParameterStore params;
    const FusionLayer layer(params, "f", 16, 8, 12, 4, true, true, rng);
    const Tensor out = layer(Tensor::normal({3, 8}, 0, 1, rng), Tensor::normal({3, 16}, 0, 1, rng),
                             Tensor::normal({3, 12}, 0, 1, rng), eval);
    CHECK(out.shape() == Shape{3, 16});
    CHECK_THROWS_AS(layer(Tensor::normal({2, 8}, 0, 1, rng), Tensor::normal({3, 16}, 0, 1, rng),
                          Tensor::normal({3, 12}, 0, 1, rng), eval),
                    DimensionError);
  }

  SUBCASE("identity projections match a hand trace") {
    ParameterStore params;
    const FusionLayer layer(params, "f", 2, 2, 2, 1, true, true, rng);
    for (const MultiHeadAttention* m : {layer.audio_branch(), layer.visual_branch()})
      for (const Linear* l : {&m->query, &m->key, &m->value, &m->output}) set_identity(l->weight);
    set_values(layer.projection().weight, {1, 0, 0, 1, 1, 0, 0, 1});  // sums the two branches
    const Tensor t = Tensor::from({{1, 0}, {0, 1}});
    const Tensor fa = Tensor::from({{2, 0}, {0, 0}});
    const Tensor fv = Tensor::from({{0, 0}, {0, 3}});
    const double s = 1.0 / std::sqrt(2.0);
    // audio branch: row 0 scores [2s, 0], row 1 scores [0, 0]
    const double pa = std::exp(2 * s) / (std::exp(2 * s) + 1.0);
    // visual branch: row 0 scores [0, 0], row 1 scores [0, 3s]
    const double pv = 1.0 / (1.0 + std::exp(3 * s));
    const std::vector<double> expected{pa + 0.5, (1 - pa) + 0.5, 0.5 + pv, 0.5 + (1 - pv)};
    const Tensor out = layer(fa, t, fv, eval);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(expected[i]).epsilon(1e-14));
  }

  SUBCASE("gradients") {
    ParameterStore params;
    const FusionLayer layer(params, "f", 8, 6, 4, 2, true, true, rng);
    for (int trial = 0; trial < 3; ++trial) {
      Tensor fa = Tensor::normal({3, 6}, 0, 1, rng, true), ft = Tensor::normal({3, 8}, 0, 1, rng, true),
             fv = Tensor::normal({3, 4}, 0, 1, rng, true);
      const Tensor head = Tensor::normal({3, 8}, 0, 1, rng);
      std::vector<Tensor> inputs{fa, ft, fv};
      for (const Tensor& t : params.tensors()) inputs.push_back(t);
      GradCheckOptions opts;
      opts.max_entries_per_input = 16;
      opts.seed = 70 + trial;
      const auto report = check_gradients([&] { return sum(mul(layer(fa, ft, fv, eval), head)); }, inputs, opts);
      INFO(report.worst_entry);
      CHECK(report.passed(1e-4));
    }
  }
}

TEST_CASE("fusion stack composition") {
  std::mt19937_64 rng(4);
  for (std::size_t m : {1, 2, 3}) {
    ModelConfig c = micro_config();
    c.m = m;
    const FusionModel model(c);
    const DialogFeatures d = random_dialog(c, 4, rng);
    const DialogForwardState s = model.forward(d);
    REQUIRE(s.fusion_outputs.size() == m);
    for (const Tensor& f : s.fusion_outputs) CHECK(f.shape() == Shape{4, c.d_t});
    const ForwardContext eval;
    const auto& layers = model.fusion_layers();
    Tensor manual = layers[0](s.f_a, s.f_t, s.f_v, eval);
    CHECK(max_abs_diff(manual, s.fusion_outputs[0]) == 0.0);
    for (std::size_t j = 1; j < m; ++j) {
      manual = layers[j](s.f_a, manual, s.f_v, eval);
      CHECK(max_abs_diff(manual, s.fusion_outputs[j]) == 0.0);
    }
  }
}

TEST_CASE("forward and classify") {
  std::mt19937_64 rng(5);
  const ModelConfig c = micro_config();
  const FusionModel model(c);

  const DialogForwardState one = model.forward(random_dialog(c, 1, rng));
  CHECK(one.probs.shape() == Shape{1, 4});

  const DialogForwardState s = model.forward(random_dialog(c, 5, rng));
  CHECK(s.f_final.shape() == Shape{5, c.d_t + c.d_a + c.d_v});
  CHECK(s.logits.shape() == Shape{5, 4});
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j) row += s.probs.at(i, j);
    CHECK(std::abs(row - 1.0) < 1e-9);
  }

  // identical utterances get identical probabilities
  DialogFeatures same = random_dialog(c, 1, rng);
  DialogFeatures twice;
  twice.f_it = concat({same.f_it, same.f_it, same.f_it}, 0);
  twice.f_ia = concat({same.f_ia, same.f_ia, same.f_ia}, 0);
  twice.f_iv = concat({same.f_iv, same.f_iv, same.f_iv}, 0);
  twice.labels = {1, 1, 1};
  const Tensor p = model.forward(twice).probs;
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(p.at(0, j) == p.at(1, j));
    CHECK(p.at(0, j) == p.at(2, j));
  }

  // evaluation mode is deterministic
  const DialogFeatures d = random_dialog(c, 3, rng);
  CHECK(model.forward(d).probs.values() == model.forward(d).probs.values());

  DialogFeatures bad = random_dialog(c, 3, rng);
  bad.f_ia = Tensor::zeros({2, c.d_a});
  CHECK_THROWS_AS(model.forward(bad), DimensionError);
  bad = random_dialog(c, 3, rng);
  bad.labels[1] = 4;
  CHECK_THROWS_AS(model.forward(bad), std::out_of_range);
}

TEST_CASE("full micro-model gradient check") {
  std::mt19937_64 rng(6);
  const FusionModel model(micro_config());
  for (int trial = 0; trial < 2; ++trial) {
    DialogFeatures d = random_dialog(model.config(), 3, rng);
    d.f_it.set_requires_grad(true);
    d.f_ia.set_requires_grad(true);
    d.f_iv.set_requires_grad(true);
    std::vector<Tensor> inputs{d.f_it, d.f_ia, d.f_iv};
    for (const Tensor& t : model.parameters().tensors()) inputs.push_back(t);
    GradCheckOptions opts;
    opts.max_entries_per_input = 6;
    opts.seed = 90 + trial;
    const auto report = check_gradients(
        [&] { return losses::cross_entropy(model.forward(d).probs, d.labels); }, inputs, opts);
    INFO(report.worst_entry);
    CHECK(report.passed(1e-4));
  }
}

TEST_CASE("permutation equivariance without positional encoding") {
  std::mt19937_64 rng(7);
  ModelConfig c = micro_config();
  const FusionModel model(c);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + trial % 6;
    const DialogFeatures d = random_dialog(c, k, rng);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    DialogFeatures pd{permute_rows(d.f_it, perm), permute_rows(d.f_ia, perm), permute_rows(d.f_iv, perm), {}};
    for (std::size_t i = 0; i < k; ++i) pd.labels.push_back(d.labels[perm[i]]);
    CHECK(max_abs_diff(model.forward(pd).probs, permute_rows(model.forward(d).probs, perm)) < 1e-12);
  }

  // the positional encoding breaks the symmetry
  c.positional_encoding = true;
  const FusionModel pe_model(c);
  const DialogFeatures d = random_dialog(c, 4, rng);
  const std::vector<std::size_t> swap{1, 0, 2, 3};
  DialogFeatures pd{permute_rows(d.f_it, swap), permute_rows(d.f_ia, swap), permute_rows(d.f_iv, swap), d.labels};
  CHECK(max_abs_diff(pe_model.forward(pd).probs, permute_rows(pe_model.forward(d).probs, swap)) > 1e-6);

  const Tensor pe = sinusoidal_positions(3, 4);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(2, 0) == doctest::Approx(std::sin(2.0)));
  CHECK(pe.at(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)));
}

TEST_CASE("concat ablation is a separate code path") {
  std::mt19937_64 rng(8);
  ModelConfig c = micro_config();
  for (int variant = 0; variant < 2; ++variant) {
    ModelConfig cc = c;
    if (variant == 0) cc.fusion = FusionMode::concat;
    else cc.m = 0;
    const FusionModel model(cc);
    CHECK(model.fusion_layers().empty());
    for (const auto& e : model.parameters().entries()) CHECK(e.name.rfind("fusion", 0) == std::string::npos);
    const DialogFeatures d = random_dialog(cc, 3, rng);
    const DialogForwardState s = model.forward(d);
    CHECK(s.fusion_outputs.empty());
    CHECK(s.f_final.values() == concat({s.f_t, s.f_a, s.f_v}, 1).values());
  }
}

TEST_CASE("modality masks") {
  std::mt19937_64 rng(9);
  struct Case {
    const char* list;
    std::size_t width;
    bool fusion;
  };
  for (const Case& k : {Case{"t", 8, false}, Case{"a", 6, false}, Case{"a,v", 10, false}, Case{"t,a", 14, true},
                        Case{"t,v", 12, true}, Case{"v,t,a", 18, true}}) {
    ModelConfig c = micro_config();
    c.modalities = ModalityMask::parse(k.list);
    const FusionModel model(c);
    CHECK(model.final_width() == k.width);
    CHECK(model.fusion_layers().empty() == !k.fusion);
    DialogFeatures d = random_dialog(c, 3, rng);
    if (!c.modalities.audio) d.f_ia = Tensor();
    const DialogForwardState s = model.forward(d);
    CHECK(s.f_final.shape() == Shape{3, k.width});
  }
  CHECK(ModalityMask::parse("v,a").str() == "a,v");
  CHECK_THROWS_AS(ModalityMask::parse("t,x"), ValidationError);
  CHECK_THROWS_AS(ModalityMask::parse("t,t"), ValidationError);
  CHECK_THROWS_AS(ModalityMask::parse(""), ValidationError);
}

TEST_CASE("model config validation and serialization") {
  ModelConfig c = micro_config();
  c.heads = 3;
  CHECK_THROWS_AS(FusionModel{c}, ValidationError);
  c = micro_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = micro_config();
  c.n_classes = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  c = micro_config();
  c.fusion = FusionMode::concat;
  c.modalities = ModalityMask::parse("t,v");
  c.positional_encoding = true;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(ModelConfig::from_json("{\"d_t\": 4}"), ValidationError);

  CHECK(heads_for(16, 4) == 4);
  CHECK(heads_for(6, 4) == 3);
  CHECK(heads_for(7, 4) == 1);
  CHECK(heads_for(2, 4) == 2);
}

TEST_CASE("every parameter receives gradient") {
  std::mt19937_64 rng(10);
  const FusionModel model(micro_config());
  FusionModel& m = const_cast<FusionModel&>(model);
  m.parameters().zero_grad();
  for (int b = 0; b < 3; ++b) {
    const DialogFeatures d = random_dialog(model.config(), 4, rng);
    backward(losses::cross_entropy(model.forward(d).probs, d.labels));
  }
  for (const auto& e : model.parameters().entries()) {
    double norm = 0.0;
    for (double g : e.tensor.grad()) norm += g * g;
    INFO(e.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("overfit a toy dialog") {
  std::mt19937_64 rng(11);
  ModelConfig c = micro_config();
  c.dropout = 0.1;
  FusionModel model(c);
  const DialogFeatures d = random_dialog(c, 6, rng);
  AdamWConfig oc;
  oc.lr = 1e-2;
  AdamW opt(model.parameters().tensors(), oc);
  std::mt19937_64 drop_rng(12);
  for (int step = 0; step < 150; ++step) {
    opt.zero_grad();
    backward(losses::cross_entropy(model.forward(d, true, &drop_rng).probs, d.labels));
    opt.step();
  }
  const Tensor p = model.forward(d).probs;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto row = p.values().begin() + i * c.n_classes;
    CHECK(std::max_element(row, row + c.n_classes) - row == d.labels[i]);
  }
}

TEST_CASE("fusion model checkpoint round trip") {
  std::mt19937_64 rng(12);
  ModelConfig c = micro_config();
  c.modalities = ModalityMask::parse("t,a");
  const FusionModel model(c);
  const auto path = std::filesystem::temp_directory_path() / "m2f_test_fusion.ckpt";
  model.save(path);
  const FusionModel back = FusionModel::load(path);
  CHECK(back.config().to_json() == c.to_json());
  CHECK(back.parameters().snapshot() == model.parameters().snapshot());
  DialogFeatures d = random_dialog(c, 3, rng);
  CHECK(back.forward(d).probs.values() == model.forward(d).probs.values());
  std::filesystem::remove(path);
}
