#include "m2f/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <json.hpp>

#include "m2f/checkpoint.hpp"
#include "m2f/errors.hpp"

namespace m2f {

namespace {

constexpr const char* kKind = "extractor";

Tensor conv_weight(std::size_t out, std::size_t in, std::size_t k, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  return Tensor::uniform({out, in, k, k}, -bound, bound, rng);
}

}  // namespace

void ExtractorConfig::validate() const {
  if (input_shape.height == 0 || input_shape.width == 0 || input_shape.channels == 0) {
    throw ValidationError("extractor input shape must be positive");
  }
  if (encoder_channels.empty()) throw ValidationError("extractor needs at least one encoder stage");
  for (std::size_t c : encoder_channels) {
    if (c == 0) throw ValidationError("extractor stage widths must be positive");
  }
  if (representation_dim < 1) throw ValidationError("representation_dim must be >= 1");
}

std::string ExtractorConfig::to_json() const {
  nlohmann::json j;
  j["input_shape"] = {input_shape.height, input_shape.width, input_shape.channels};
  j["encoder_channels"] = encoder_channels;
  j["representation_dim"] = representation_dim;
  j["normalize_output"] = normalize_output;
  j["init_seed"] = init_seed;
  return j.dump();
}

ExtractorConfig ExtractorConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ExtractorConfig c;
    const auto shape = j.at("input_shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw ValidationError("input_shape must have 3 entries");
    c.input_shape = {shape[0], shape[1], shape[2]};
    c.encoder_channels = j.at("encoder_channels").get<std::vector<std::size_t>>();
    c.representation_dim = j.at("representation_dim").get<std::size_t>();
    c.normalize_output = j.at("normalize_output").get<bool>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("extractor config: ") + e.what());
  }
}

Extractor::Extractor(ExtractorConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const std::size_t first = config_.encoder_channels.front();
  stem_w_ = params_.add("stem.w", conv_weight(first, config_.input_shape.channels, 3, rng));
  stem_b_ = params_.add("stem.b", Tensor::zeros({first}));
  std::size_t in = first;
  for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
    const std::size_t out = config_.encoder_channels[i];
    const std::string p = "stage" + std::to_string(i) + ".";
    Stage s;
    s.conv1_w = params_.add(p + "conv1.w", conv_weight(out, in, 3, rng));
    s.conv1_b = params_.add(p + "conv1.b", Tensor::zeros({out}));
    s.conv2_w = params_.add(p + "conv2.w", conv_weight(out, out, 3, rng));
    s.conv2_b = params_.add(p + "conv2.b", Tensor::zeros({out}));
    s.skip_w = params_.add(p + "skip.w", conv_weight(out, in, 1, rng));
    s.skip_b = params_.add(p + "skip.b", Tensor::zeros({out}));
    stages_.push_back(s);
    in = out;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  proj_w_ = params_.add("proj.w", Tensor::uniform({in, config_.representation_dim}, -bound, bound, rng));
  proj_b_ = params_.add("proj.b", Tensor::zeros({config_.representation_dim}));
}

Tensor Extractor::encode(const Tensor& x) const {
  const InputShape& s = config_.input_shape;
  if (x.shape() != Shape{s.channels, s.height, s.width}) {
    throw DimensionError("extractor input " + shape_str(x.shape()) + " does not match " +
                         shape_str({s.channels, s.height, s.width}));
  }
  Tensor h = relu(conv2d(x, stem_w_, stem_b_, 1, 1));
  for (const Stage& st : stages_) {
    const Tensor body = conv2d(relu(conv2d(h, st.conv1_w, st.conv1_b, 2, 1)), st.conv2_w, st.conv2_b, 1, 1);
    h = relu(add(body, conv2d(h, st.skip_w, st.skip_b, 2, 0)));
  }
  return mean_axis(reshape(h, {h.dim(0), h.dim(1) * h.dim(2)}), 1);
}

Tensor Extractor::project(const Tensor& e) const {
  if (e.rank() == 0 || e.shape().back() != embedding_dim()) {
    throw DimensionError("projector expects last axis " + std::to_string(embedding_dim()) + ", got " +
                         shape_str(e.shape()));
  }
  const Tensor z = linear(e, proj_w_, proj_b_);
  return config_.normalize_output ? l2_normalize(z) : z;
}

Tensor Extractor::represent_batch(std::span<const Tensor> xs) const {
  if (xs.empty()) throw std::invalid_argument("represent_batch: empty input list");
  std::vector<Tensor> rows;
  rows.reserve(xs.size());
  for (const Tensor& x : xs) rows.push_back(encode(x));
  return project(stack(rows));
}

void Extractor::save(const std::filesystem::path& path) const {
  save_checkpoint(path, {kKind, config_.to_json()}, params_);
}

Extractor Extractor::load(const std::filesystem::path& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  if (h.kind != kKind) throw ValidationError(path.string() + " holds a " + h.kind + " checkpoint");
  Extractor model(ExtractorConfig::from_json(h.config_json));
  load_checkpoint(path, model.params_);
  return model;
}

std::vector<Triplet> sample_triplets(std::span<const int> labels, std::size_t batch, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) throw std::invalid_argument("sample_triplets: need at least 2 classes");
  std::vector<int> anchor_classes;
  for (const auto& [c, items] : by_class) {
    if (items.size() >= 2) anchor_classes.push_back(c);
  }
  if (anchor_classes.empty()) throw std::invalid_argument("sample_triplets: no class has 2 samples");

  std::mt19937_64 rng(seed);
  auto uniform = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::vector<Triplet> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int c = anchor_classes[uniform(anchor_classes.size())];
    const auto& same = by_class[c];
    const std::size_t a = uniform(same.size());
    std::size_t p = uniform(same.size() - 1);
    if (p >= a) ++p;
    const std::size_t others = labels.size() - same.size();
    std::size_t n = uniform(others);
    // map the n-th item outside class c to its index
    std::size_t idx = 0;
    for (;; ++idx) {
      if (labels[idx] == c) continue;
      if (n-- == 0) break;
    }
    out.push_back({same[a], same[p], idx});
  }
  return out;
}

AdamWConfig extractor_optimizer_defaults() {
  AdamWConfig c;
  c.lr = 1e-4;
  c.weight_decay = 0.0;
  c.lr_decay = 1e-6;
  return c;
}

namespace {

struct TripletBatches {
  std::vector<Tensor> anchors, positives, negatives;
};

TripletBatches gather(const LabeledInputs& data, std::span<const Triplet> batch) {
  TripletBatches b;
  for (const Triplet& t : batch) {
    if (t.anchor >= data.size() || t.positive >= data.size() || t.negative >= data.size()) {
      throw std::out_of_range("triplet index outside the dataset");
    }
    b.anchors.push_back(data.inputs[t.anchor]);
    b.positives.push_back(data.inputs[t.positive]);
    b.negatives.push_back(data.inputs[t.negative]);
  }
  return b;
}

}  // namespace

ExtractorStepResult extractor_train_step(Extractor& model, const LabeledInputs& data,
                                         std::span<const Triplet> batch, const losses::ExtractorLossConfig& loss_cfg,
                                         AdamW& optimizer) {
  if (batch.size() < 2) throw std::invalid_argument("extractor_train_step: need at least 2 triplets");
  const TripletBatches b = gather(data, batch);
  const losses::ExtractorLoss loss = losses::extractor_loss(
      model.represent_batch(b.anchors), model.represent_batch(b.positives), model.represent_batch(b.negatives),
      loss_cfg);
  optimizer.zero_grad();
  backward(loss.total);
  optimizer.step();

  ExtractorStepResult r;
  r.loss = loss.total.item();
  r.amt = loss.amt.item();
  r.cov = loss.cov.item();
  r.var = loss.var.item();
  r.mean_d_ap = mean(loss.d_ap).item();
  r.mean_d_an = mean(loss.d_an).item();
  if (!std::isfinite(r.loss)) throw NumericalError("extractor loss is not finite");
  return r;
}

TripletEvaluation evaluate_triplets(const Extractor& model, const LabeledInputs& data,
                                    std::span<const Triplet> triplets) {
  if (triplets.size() < 2) throw std::invalid_argument("evaluate_triplets: need at least 2 triplets");
  NoGradGuard no_grad;
  const TripletBatches b = gather(data, triplets);
  const Tensor za = model.represent_batch(b.anchors);
  const Tensor zp = model.represent_batch(b.positives);
  const Tensor zn = model.represent_batch(b.negatives);
  TripletEvaluation e;
  e.mean_d_ap = mean(losses::row_distances(za, zp)).item();
  e.mean_d_an = mean(losses::row_distances(za, zn)).item();
  for (const Tensor& z : {za, zp, zn}) {
    const Tensor norms = sqrt(sum_axis(square(z), 1));
    for (double n : norms.values()) e.max_norm_deviation = std::max(e.max_norm_deviation, std::abs(n - 1.0));
  }
  e.variance_loss = losses::variance_loss(za).item();
  return e;
}

LabeledInputs make_blob_dataset(std::size_t n_classes, std::size_t per_class, InputShape shape, double noise,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Shape s{shape.channels, shape.height, shape.width};
  std::vector<Tensor> prototypes;
  for (std::size_t c = 0; c < n_classes; ++c) prototypes.push_back(Tensor::normal(s, 0.0, 1.0, rng));
  LabeledInputs data;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      data.inputs.push_back(add(prototypes[c], Tensor::normal(s, 0.0, noise, rng)).detach());
      data.labels.push_back(static_cast<int>(c));
    }
  }
  return data;
}

}  // namespace m2f
