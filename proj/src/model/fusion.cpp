#include <json.hpp>
#include <sstream>

#include "m2f/checkpoint.hpp"
#include "m2f/errors.hpp"
#include "m2f/fusion.hpp"

namespace m2f {

namespace {

constexpr const char* kKind = "fusion-model";

}  // namespace

std::string ModalityMask::str() const {
  std::string out;
  auto put = [&out](bool on, const char* tag) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += tag;
  };
  put(text, "t");
  put(audio, "a");
  put(visual, "v");
  return out;
}

ModalityMask ModalityMask::parse(const std::string& list) {
  ModalityMask mask{false, false, false};
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    bool* slot = item == "t" ? &mask.text : item == "a" ? &mask.audio : item == "v" ? &mask.visual : nullptr;
    if (slot == nullptr) throw ValidationError("unknown modality '" + item + "' (expected t, a or v)");
    if (*slot) throw ValidationError("modality '" + item + "' listed twice");
    *slot = true;
  }
  if (!mask.text && !mask.audio && !mask.visual) throw ValidationError("at least one modality is required");
  return mask;
}

void ModelConfig::validate() const {
  if (d_t == 0 || d_a == 0 || d_v == 0) throw ValidationError("embedding dimensions must be positive");
  if (heads == 0) throw ValidationError("heads must be positive");
  if (n_classes < 2) throw ValidationError("n_classes must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
  if (ffn_multiplier == 0) throw ValidationError("ffn_multiplier must be positive");
  if (!modalities.text && !modalities.audio && !modalities.visual) {
    throw ValidationError("at least one modality is required");
  }
  const bool text_attention = modalities.text && (n_t > 0 || uses_fusion());
  if (text_attention && d_t % heads != 0) {
    throw ValidationError("d_t = " + std::to_string(d_t) + " is not divisible by heads = " + std::to_string(heads));
  }
}

bool ModelConfig::uses_fusion() const {
  return fusion == FusionMode::attention && m > 0 && modalities.text && (modalities.audio || modalities.visual);
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_t"] = d_t;
  j["d_a"] = d_a;
  j["d_v"] = d_v;
  j["n_t"] = n_t;
  j["n_a"] = n_a;
  j["n_v"] = n_v;
  j["m"] = m;
  j["heads"] = heads;
  j["hidden"] = hidden;
  j["ffn_multiplier"] = ffn_multiplier;
  j["dropout"] = dropout;
  j["n_classes"] = n_classes;
  j["positional_encoding"] = positional_encoding;
  j["fusion"] = fusion == FusionMode::attention ? "attention" : "concat";
  j["modalities"] = modalities.str();
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.d_t = j.at("d_t").get<std::size_t>();
    c.d_a = j.at("d_a").get<std::size_t>();
    c.d_v = j.at("d_v").get<std::size_t>();
    c.n_t = j.at("n_t").get<std::size_t>();
    c.n_a = j.at("n_a").get<std::size_t>();
    c.n_v = j.at("n_v").get<std::size_t>();
    c.m = j.at("m").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.ffn_multiplier = j.at("ffn_multiplier").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.positional_encoding = j.at("positional_encoding").get<bool>();
    const auto fusion = j.at("fusion").get<std::string>();
    if (fusion != "attention" && fusion != "concat") throw ValidationError("unknown fusion mode " + fusion);
    c.fusion = fusion == "attention" ? FusionMode::attention : FusionMode::concat;
    c.modalities = ModalityMask::parse(j.at("modalities").get<std::string>());
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

FusionModel::FusionModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const ModelConfig& c = config_;
  std::mt19937_64 rng(c.init_seed);
  if (c.modalities.text) {
    text_encoder_ = EncoderStack(params_, "enc_t", c.n_t, c.d_t, c.heads, c.ffn_multiplier * c.d_t, rng);
  }
  if (c.modalities.audio) {
    audio_encoder_ =
        EncoderStack(params_, "enc_a", c.n_a, c.d_a, heads_for(c.d_a, c.heads), c.ffn_multiplier * c.d_a, rng);
  }
  if (c.modalities.visual) {
    visual_encoder_ =
        EncoderStack(params_, "enc_v", c.n_v, c.d_v, heads_for(c.d_v, c.heads), c.ffn_multiplier * c.d_v, rng);
  }
  if (c.uses_fusion()) {
    for (std::size_t i = 0; i < c.m; ++i) {
      fusion_.emplace_back(params_, "fusion." + std::to_string(i), c.d_t, c.d_a, c.d_v, c.heads, c.modalities.audio,
                           c.modalities.visual, rng);
    }
  }
  classifier_hidden_ = Linear(params_, "cls.hidden", final_width(), c.classifier_hidden(), rng);
  classifier_out_ = Linear(params_, "cls.out", c.classifier_hidden(), c.n_classes, rng);
}

std::size_t FusionModel::final_width() const {
  const ModalityMask& mask = config_.modalities;
  return (mask.text ? config_.d_t : 0) + (mask.audio ? config_.d_a : 0) + (mask.visual ? config_.d_v : 0);
}

void FusionModel::check(const DialogFeatures& d) const {
  const std::size_t k = d.labels.size();
  if (k == 0) throw DimensionError("dialog has no utterances");
  auto expect = [k](const Tensor& t, std::size_t width, const char* name) {
    if (!t.defined() || t.shape() != Shape{k, width}) {
      throw DimensionError(std::string(name) + " must be [" + std::to_string(k) + ", " + std::to_string(width) +
                           "], got " + (t.defined() ? shape_str(t.shape()) : std::string("nothing")));
    }
  };
  if (config_.modalities.text) expect(d.f_it, config_.d_t, "text features");
  if (config_.modalities.audio) expect(d.f_ia, config_.d_a, "audio features");
  if (config_.modalities.visual) expect(d.f_iv, config_.d_v, "visual features");
  for (int y : d.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= config_.n_classes) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(config_.n_classes) +
                              ")");
    }
  }
}

DialogForwardState FusionModel::forward(const DialogFeatures& d, bool training, std::mt19937_64* rng) const {
  check(d);
  const ModelConfig& c = config_;
  const ForwardContext ctx{training, c.dropout, rng};
  const std::size_t k = d.size();
  auto prepare = [&](const Tensor& x, std::size_t dim) {
    return c.positional_encoding ? add(x, sinusoidal_positions(k, dim)) : x;
  };

  DialogForwardState s;
  if (c.modalities.text) s.f_t = text_encoder_(prepare(d.f_it, c.d_t), ctx);
  if (c.modalities.audio) s.f_a = audio_encoder_(prepare(d.f_ia, c.d_a), ctx);
  if (c.modalities.visual) s.f_v = visual_encoder_(prepare(d.f_iv, c.d_v), ctx);

  Tensor text_slot = s.f_t;
  for (const FusionLayer& layer : fusion_) {
    text_slot = layer(s.f_a, text_slot, s.f_v, ctx);
    s.fusion_outputs.push_back(text_slot);
  }

  std::vector<Tensor> parts;
  if (c.modalities.text) parts.push_back(text_slot);
  if (c.modalities.audio) parts.push_back(s.f_a);
  if (c.modalities.visual) parts.push_back(s.f_v);
  s.f_final = parts.size() == 1 ? parts.front() : concat(parts, 1);
  s.logits = classifier_out_(gelu(classifier_hidden_(s.f_final)));
  s.probs = softmax(s.logits, 1);
  return s;
}

void FusionModel::save(const std::filesystem::path& path) const {
  save_checkpoint(path, {kKind, config_.to_json()}, params_);
}

FusionModel FusionModel::load(const std::filesystem::path& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  if (h.kind != kKind) throw ValidationError(path.string() + " holds a " + h.kind + " checkpoint");
  FusionModel model(ModelConfig::from_json(h.config_json));
  load_checkpoint(path, model.params_);
  return model;
}

}  // namespace m2f
