#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "m2f/losses.hpp"
#include "m2f/optim.hpp"

namespace m2f {

struct InputShape {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;

  bool operator==(const InputShape&) const = default;
};

struct ExtractorConfig {
  InputShape input_shape;
  std::vector<std::size_t> encoder_channels{16, 32, 64};  // one residual stage each
  std::size_t representation_dim = 300;
  bool normalize_output = true;
  std::uint64_t init_seed = 1;

  void validate() const;  // throws ValidationError
  std::string to_json() const;
  static ExtractorConfig from_json(const std::string& text);
};

// Small residual image encoder followed by a linear projector. Inputs are
// channel-major tensors [channels, height, width]; an audio clip enters as a
// single-channel [1, frames, n_mels] spectrogram.
class Extractor {
 public:
  explicit Extractor(ExtractorConfig config);

  const ExtractorConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  // Backbone embedding, shape [encoder_channels.back()].
  Tensor encode(const Tensor& x) const;
  std::size_t embedding_dim() const { return config_.encoder_channels.back(); }

  // Affine map [..., embedding_dim] -> [..., representation_dim], then unit
  // L2 norm along the last axis when normalize_output.
  Tensor project(const Tensor& e) const;

  Tensor represent(const Tensor& x) const { return project(encode(x)); }
  // Stacks the representations of several inputs into [N, representation_dim].
  Tensor represent_batch(std::span<const Tensor> xs) const;

  void save(const std::filesystem::path& path) const;
  static Extractor load(const std::filesystem::path& path);

 private:
  struct Stage {
    Tensor conv1_w, conv1_b, conv2_w, conv2_b, skip_w, skip_b;
  };

  ExtractorConfig config_;
  ParameterStore params_;
  Tensor stem_w_, stem_b_;
  std::vector<Stage> stages_;
  Tensor proj_w_, proj_b_;
};

struct LabeledInputs {
  std::vector<Tensor> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

// Anchor class uniform over the classes holding at least two items; anchor and
// positive are distinct items of that class; negative is uniform over items of
// any other class. Throws std::invalid_argument when no valid triplet exists.
std::vector<Triplet> sample_triplets(std::span<const int> labels, std::size_t batch, std::uint64_t seed);

// Optimizer settings used for extractor training.
AdamWConfig extractor_optimizer_defaults();

struct ExtractorStepResult {
  double loss = 0.0;
  double amt = 0.0;
  double cov = 0.0;
  double var = 0.0;
  double mean_d_ap = 0.0;
  double mean_d_an = 0.0;
};

// One forward/backward/update on a triplet batch (at least two triplets).
ExtractorStepResult extractor_train_step(Extractor& model, const LabeledInputs& data,
                                         std::span<const Triplet> batch, const losses::ExtractorLossConfig& loss_cfg,
                                         AdamW& optimizer);

struct TripletEvaluation {
  double mean_d_ap = 0.0;
  double mean_d_an = 0.0;
  double max_norm_deviation = 0.0;  // max |‖z‖ - 1| over all representations
  double variance_loss = 0.0;       // anchors' variance term
};

TripletEvaluation evaluate_triplets(const Extractor& model, const LabeledInputs& data,
                                    std::span<const Triplet> triplets);

// Class prototypes drawn from N(0, 1) per entry; each item is its prototype
// plus N(0, noise^2) noise.
LabeledInputs make_blob_dataset(std::size_t n_classes, std::size_t per_class, InputShape shape, double noise,
                                std::uint64_t seed);

}  // namespace m2f
