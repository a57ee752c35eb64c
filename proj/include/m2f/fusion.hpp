#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "m2f/optim.hpp"

namespace m2f {

// ---- building blocks ------------------------------------------------------

// y = x W + b with W [in, out]; W is fan-in scaled uniform, b starts at 0.
struct Linear {
  Tensor weight, bias;

  Linear() = default;
  Linear(ParameterStore& params, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
  Tensor gain, bias;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParameterStore& params, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
};

// Per-step switches shared by every layer of one forward pass.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0

  Tensor drop(const Tensor& x) const;
};

// Scaled dot-product attention with `heads` heads. Queries and values live in
// d_q; keys may have any width d_k and are projected to d_q, so each head sees
// a d_k -> d_q/heads key map.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& params, const std::string& name, std::size_t d_q, std::size_t d_k,
                     std::size_t heads, std::mt19937_64& rng);

  // q [k, d_q], key [k, d_k], v [k, d_q] -> [k, d_q]. When `weights` is given
  // it receives the per-head attention matrices [k, k].
  Tensor operator()(const Tensor& q, const Tensor& key, const Tensor& v,
                    std::vector<Tensor>* weights = nullptr) const;

  std::size_t heads() const { return heads_; }
  Linear query, key, value, output;

 private:
  std::size_t d_q_ = 0, d_k_ = 0, heads_ = 1;
};

// Post-norm transformer encoder block:
// h = LN(x + drop(attn(x, x, x))), out = LN(h + drop(W2 gelu(W1 h))).
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(ParameterStore& params, const std::string& name, std::size_t dim, std::size_t heads,
               std::size_t ffn_width, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;

 private:
  MultiHeadAttention attention_;
  LayerNorm norm1_, norm2_;
  Linear ffn1_, ffn2_;
};

// n encoder blocks, each wrapped in an additional identity skip:
// x_{i+1} = block_i(x_i) + x_i. n = 0 is the identity.
class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(ParameterStore& params, const std::string& name, std::size_t n, std::size_t dim, std::size_t heads,
               std::size_t ffn_width, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
  std::size_t size() const { return blocks_.size(); }

 private:
  std::vector<EncoderBlock> blocks_;
};

// One fusion layer: an attention branch per enabled key modality, with the
// text-space features as both query and value, followed by one joint linear
// map from the concatenated branches back to d_t.
class FusionLayer {
 public:
  FusionLayer() = default;
  FusionLayer(ParameterStore& params, const std::string& name, std::size_t d_t, std::size_t d_a, std::size_t d_v,
              std::size_t heads, bool use_audio, bool use_visual, std::mt19937_64& rng);

  // f_a or f_v may be undefined when the corresponding branch is disabled.
  Tensor operator()(const Tensor& f_a, const Tensor& f_text, const Tensor& f_v, const ForwardContext& ctx) const;

  const MultiHeadAttention* audio_branch() const { return use_audio_ ? &audio_ : nullptr; }
  const MultiHeadAttention* visual_branch() const { return use_visual_ ? &visual_ : nullptr; }
  const Linear& projection() const { return fc_; }

 private:
  bool use_audio_ = false, use_visual_ = false;
  MultiHeadAttention audio_, visual_;
  Linear fc_;
};

// Sinusoidal encoding of utterance positions: pe[p, 2i] = sin(p / 10000^(2i/d)),
// pe[p, 2i+1] = cos(p / 10000^(2i/d)).
Tensor sinusoidal_positions(std::size_t k, std::size_t dim);

// ---- dialog model -----------------------------------------------------------

enum class FusionMode { attention, concat };

struct ModalityMask {
  bool text = true, audio = true, visual = true;

  bool operator==(const ModalityMask&) const = default;
  std::string str() const;                    // e.g. "t,a,v"
  static ModalityMask parse(const std::string& list);  // throws ValidationError
};

struct ModelConfig {
  std::size_t d_t = 32, d_a = 16, d_v = 16;
  std::size_t n_t = 1, n_a = 1, n_v = 1;  // encoder blocks per modality
  std::size_t m = 5;                      // fusion layers
  std::size_t heads = 4;
  std::size_t hidden = 0;                 // classifier hidden width; 0 means d_t
  std::size_t ffn_multiplier = 4;         // encoder feed-forward width / model width
  double dropout = 0.4;
  std::size_t n_classes = 7;
  bool positional_encoding = false;
  FusionMode fusion = FusionMode::attention;
  ModalityMask modalities;
  std::uint64_t init_seed = 1;

  void validate() const;  // throws ValidationError
  std::size_t classifier_hidden() const { return hidden == 0 ? d_t : hidden; }
  // Whether attention fusion layers are built under this configuration.
  bool uses_fusion() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct DialogFeatures {
  Tensor f_it;  // [k, d_t]
  Tensor f_ia;  // [k, d_a]
  Tensor f_iv;  // [k, d_v]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct DialogForwardState {
  Tensor f_t, f_a, f_v;                 // after the encoder stacks (undefined when masked)
  std::vector<Tensor> fusion_outputs;   // one [k, d_t] map per fusion layer
  Tensor f_final;                       // [k, width of the enabled parts]
  Tensor logits, probs;                 // [k, C]
};

class FusionModel {
 public:
  explicit FusionModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  // Training mode applies dropout with `rng`; evaluation mode is deterministic.
  DialogForwardState forward(const DialogFeatures& d, bool training = false, std::mt19937_64* rng = nullptr) const;

  // Final feature width fed to the classifier.
  std::size_t final_width() const;

  const EncoderStack& text_encoder() const { return text_encoder_; }
  const std::vector<FusionLayer>& fusion_layers() const { return fusion_; }

  void save(const std::filesystem::path& path) const;
  static FusionModel load(const std::filesystem::path& path);

 private:
  void check(const DialogFeatures& d) const;

  ModelConfig config_;
  ParameterStore params_;
  EncoderStack text_encoder_, audio_encoder_, visual_encoder_;
  std::vector<FusionLayer> fusion_;
  Linear classifier_hidden_, classifier_out_;
};

// Largest divisor of `dim` not exceeding `heads`.
std::size_t heads_for(std::size_t dim, std::size_t heads);

}  // namespace m2f
