#include "m2f/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "m2f/errors.hpp"
#include "m2f/signal.hpp"

namespace m2f {

namespace {

using nlohmann::json;

std::vector<double> read_floats(const json& j, const char* field) {
  if (!j.is_array()) throw ValidationError(std::string(field) + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const json& v : j) {
    if (!v.is_number()) throw ValidationError(std::string(field) + " must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

visual::UtteranceFrames read_frames(const json& j) {
  if (!j.is_array()) throw ValidationError("frames must be an array");
  visual::UtteranceFrames u;
  for (const json& f : j) {
    visual::FrameObservation frame;
    frame.scene_feature = read_floats(f.at("scene"), "scene");
    for (const json& face : f.value("faces", json::array())) {
      visual::FaceObservation obs;
      obs.feature = read_floats(face.at("feature"), "feature");
      obs.bbox_area = face.at("area").get<double>();
      obs.confidence = face.value("confidence", 1.0);
      frame.faces.push_back(std::move(obs));
    }
    u.frames.push_back(std::move(frame));
  }
  return u;
}

json write_frames(const visual::UtteranceFrames& u) {
  json frames = json::array();
  for (const auto& f : u.frames) {
    json faces = json::array();
    for (const auto& face : f.faces) {
      faces.push_back({{"feature", face.feature}, {"area", face.bbox_area}, {"confidence", face.confidence}});
    }
    frames.push_back({{"scene", f.scene_feature}, {"faces", faces}});
  }
  return frames;
}

DialogRecord parse_dialog(const json& j, std::size_t n_classes) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  DialogRecord d;
  d.dialog_id = j.at("dialog_id").get<std::string>();
  try {
    const json& utts = j.at("utterances");
    if (!utts.is_array() || utts.empty()) throw ValidationError("utterances must be a non-empty array");
    for (const json& u : utts) {
      UtteranceRecord r;
      r.text = read_floats(u.at("text"), "text");
      const bool has_audio = u.contains("audio"), has_wav = u.contains("audio_wav");
      if (has_audio == has_wav) throw ValidationError("each utterance needs exactly one of audio or audio_wav");
      if (has_audio) r.audio = read_floats(u.at("audio"), "audio");
      if (has_wav) r.audio_wav = u.at("audio_wav").get<std::string>();
      const bool has_visual = u.contains("visual"), has_frames = u.contains("frames");
      if (has_visual == has_frames) throw ValidationError("each utterance needs exactly one of visual or frames");
      if (has_visual) r.visual = read_floats(u.at("visual"), "visual");
      if (has_frames) r.frames = read_frames(u.at("frames"));
      if (!u.at("label").is_number_integer()) throw ValidationError("label must be an integer");
      r.label = u.at("label").get<int>();
      if (r.label < 0 || static_cast<std::size_t>(r.label) >= n_classes) {
        throw ValidationError("label " + std::to_string(r.label) + " outside [0, " + std::to_string(n_classes) + ")");
      }
      d.utterances.push_back(std::move(r));
    }
    const UtteranceRecord& first = d.utterances.front();
    for (const UtteranceRecord& r : d.utterances) {
      if (r.text.size() != first.text.size() || r.audio.size() != first.audio.size() ||
          r.visual.size() != first.visual.size() || r.text.empty() ||
          (r.audio_wav.empty() && r.audio.empty()) || (!r.frames && r.visual.empty())) {
        throw ValidationError("utterances carry inconsistent or empty embedding dimensions");
      }
    }
  } catch (const ValidationError& e) {
    throw ValidationError("dialog '" + d.dialog_id + "': " + e.what());
  } catch (const json::exception& e) {
    throw ValidationError("dialog '" + d.dialog_id + "': " + e.what());
  }
  return d;
}

json dialog_json(const DialogRecord& d) {
  json utts = json::array();
  for (const UtteranceRecord& r : d.utterances) {
    json u;
    u["text"] = r.text;
    if (r.audio_wav.empty()) u["audio"] = r.audio;
    else u["audio_wav"] = r.audio_wav;
    if (r.frames) u["frames"] = write_frames(*r.frames);
    else u["visual"] = r.visual;
    u["label"] = r.label;
    utts.push_back(std::move(u));
  }
  return {{"dialog_id", d.dialog_id}, {"utterances", utts}};
}

}  // namespace

std::size_t Corpus::utterance_count() const {
  std::size_t n = 0;
  for (const auto& d : dialogs) n += d.utterances.size();
  return n;
}

Corpus load_corpus(const std::filesystem::path& path, std::size_t n_classes) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus " + path.string());
  Corpus corpus;
  corpus.base_dir = path.parent_path();
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    try {
      corpus.dialogs.push_back(parse_dialog(j, n_classes));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    for (const UtteranceRecord& r : corpus.dialogs.back().utterances) {
      if (!r.audio_wav.empty() && !std::filesystem::exists(corpus.base_dir / r.audio_wav)) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": dialog '" +
                              corpus.dialogs.back().dialog_id + "': missing WAV " + r.audio_wav);
      }
    }
  }
  return corpus;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write corpus " + path.string());
  for (const DialogRecord& d : corpus.dialogs) out << dialog_json(d).dump() << '\n';
  if (!out) throw ValidationError("failed writing corpus " + path.string());
}

Tensor spectrogram_input(const audio::AudioClip& clip, const InputShape& shape) {
  if (shape.channels != 1) throw ValidationError("spectrogram inputs need a single-channel extractor");
  audio::MelConfig mel_cfg;
  mel_cfg.n_mels = shape.width;
  const audio::MelSpectrogram mel = audio::mel_spectrogram(clip, mel_cfg);
  std::vector<double> values(shape.height * shape.width, 0.0);
  const std::size_t rows = std::min(shape.height, mel.frames());
  // entries are log1p of mel power; rows past the clip stay zero
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < shape.width; ++c) values[r * shape.width + c] = std::log1p(mel.values.at(r, c));
  return Tensor({1, shape.height, shape.width}, std::move(values));
}

std::vector<DialogFeatures> corpus_features(const Corpus& corpus, const Extractor* audio_extractor) {
  std::vector<DialogFeatures> out;
  out.reserve(corpus.dialogs.size());
  FeatureDims dims;
  for (const DialogRecord& d : corpus.dialogs) {
    std::vector<double> text, audio_values, visual_values;
    DialogFeatures f;
    std::size_t d_t = 0, d_a = 0, d_v = 0;
    for (const UtteranceRecord& r : d.utterances) {
      std::vector<double> a = r.audio;
      if (!r.audio_wav.empty()) {
        if (audio_extractor == nullptr) {
          throw ValidationError("dialog '" + d.dialog_id + "' references WAV audio; an audio extractor is required");
        }
        NoGradGuard no_grad;
        const Tensor input = spectrogram_input(audio::read_wav(corpus.base_dir / r.audio_wav),
                                               audio_extractor->config().input_shape);
        a = audio_extractor->represent(input).values();
      }
      const std::vector<double> v = r.frames ? visual::visual_utterance_embedding(*r.frames) : r.visual;
      d_t = r.text.size();
      if (d_a != 0 && a.size() != d_a) throw ValidationError("dialog '" + d.dialog_id + "': audio widths differ");
      if (d_v != 0 && v.size() != d_v) throw ValidationError("dialog '" + d.dialog_id + "': visual widths differ");
      d_a = a.size();
      d_v = v.size();
      text.insert(text.end(), r.text.begin(), r.text.end());
      audio_values.insert(audio_values.end(), a.begin(), a.end());
      visual_values.insert(visual_values.end(), v.begin(), v.end());
      f.labels.push_back(r.label);
    }
    if (!out.empty() && (d_t != dims.d_t || d_a != dims.d_a || d_v != dims.d_v)) {
      throw ValidationError("dialog '" + d.dialog_id + "' has feature widths (" + std::to_string(d_t) + ", " +
                            std::to_string(d_a) + ", " + std::to_string(d_v) + "), expected (" +
                            std::to_string(dims.d_t) + ", " + std::to_string(dims.d_a) + ", " +
                            std::to_string(dims.d_v) + ")");
    }
    dims = {d_t, d_a, d_v};
    const std::size_t k = f.labels.size();
    f.f_it = Tensor({k, d_t}, std::move(text));
    f.f_ia = Tensor({k, d_a}, std::move(audio_values));
    f.f_iv = Tensor({k, d_v}, std::move(visual_values));
    out.push_back(std::move(f));
  }
  return out;
}

FeatureDims feature_dims(const std::vector<DialogFeatures>& dialogs) {
  if (dialogs.empty()) return {};
  return {dialogs.front().f_it.dim(1), dialogs.front().f_ia.dim(1), dialogs.front().f_iv.dim(1)};
}

void SynthConfig::validate() const {
  if (n_dialogs == 0 || k == 0 || d_t == 0 || d_a == 0 || d_v == 0 || n_classes == 0) {
    throw ValidationError("synthetic corpus sizes must be positive");
  }
  if (!(separation >= 0.0)) throw ValidationError("separation must be non-negative");
  if (cross_modal_only && k < 2) throw ValidationError("cross-modal corpora need at least 2 utterances per dialog");
  if (cross_modal_only && d_t < 2) throw ValidationError("cross-modal corpora need d_t >= 2");
}

namespace {

std::vector<double> gaussian(std::size_t n, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Vertices of a regular simplex, randomly rotated into `dim` dimensions, so
// that every pair of class means is exactly `separation` apart. Needs
// dim >= classes; narrower spaces use random directions of norm
// separation / sqrt(2) instead, where pairwise distances are only approximate.
std::vector<std::vector<double>> class_means(std::size_t classes, std::size_t dim, double separation,
                                             std::mt19937_64& rng) {
  std::vector<std::vector<double>> basis;  // orthonormal, one vector per class
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> u = gaussian(dim, 1.0, rng);
    if (dim >= classes) {
      for (const auto& b : basis) {
        const double dot = std::inner_product(u.begin(), u.end(), b.begin(), 0.0);
        for (std::size_t i = 0; i < dim; ++i) u[i] -= dot * b[i];
      }
    }
    const double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
    for (double& x : u) x /= norm;
    basis.push_back(std::move(u));
  }
  if (dim < classes) {
    for (auto& u : basis) {
      for (double& x : u) x *= separation / std::sqrt(2.0);
    }
    return basis;
  }
  // e_c minus the centroid has pairwise distance sqrt(2)
  std::vector<double> centroid(dim, 0.0);
  for (const auto& b : basis) {
    for (std::size_t i = 0; i < dim; ++i) centroid[i] += b[i] / static_cast<double>(classes);
  }
  for (auto& b : basis) {
    for (std::size_t i = 0; i < dim; ++i) b[i] = (b[i] - centroid[i]) * separation / std::sqrt(2.0);
  }
  return basis;
}

std::vector<double> plus(std::vector<double> a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

std::vector<std::size_t> derangement(std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> p(k);
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    bool fixed = false;
    for (std::size_t i = 0; i < k; ++i) fixed |= p[i] == i;
    if (!fixed) return p;
  }
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> label_dist(0, static_cast<int>(cfg.n_classes) - 1);
  Corpus corpus;
  constexpr double kKeyNoise = 0.1;

  if (!cfg.cross_modal_only) {
    const auto mt = class_means(cfg.n_classes, cfg.d_t, cfg.separation, rng);
    const auto ma = class_means(cfg.n_classes, cfg.d_a, cfg.separation, rng);
    const auto mv = class_means(cfg.n_classes, cfg.d_v, cfg.separation, rng);
    for (std::size_t i = 0; i < cfg.n_dialogs; ++i) {
      DialogRecord d;
      d.dialog_id = "synth-" + std::to_string(i);
      for (std::size_t j = 0; j < cfg.k; ++j) {
        UtteranceRecord r;
        r.label = label_dist(rng);
        r.text = plus(gaussian(cfg.d_t, 1.0, rng), mt[r.label]);
        r.audio = plus(gaussian(cfg.d_a, 1.0, rng), ma[r.label]);
        r.visual = plus(gaussian(cfg.d_v, 1.0, rng), mv[r.label]);
        d.utterances.push_back(std::move(r));
      }
      corpus.dialogs.push_back(std::move(d));
    }
    return corpus;
  }

  const std::size_t d_key = std::min({cfg.d_a, cfg.d_v, cfg.d_t / 2});
  const std::size_t d_payload = cfg.d_t - d_key;
  const auto payload_means = class_means(cfg.n_classes, d_payload, cfg.separation, rng);
  for (std::size_t i = 0; i < cfg.n_dialogs; ++i) {
    std::vector<std::vector<double>> keys;
    std::vector<int> content;
    for (std::size_t j = 0; j < cfg.k; ++j) {
      keys.push_back(gaussian(d_key, 1.0, rng));
      content.push_back(label_dist(rng));
    }
    const std::vector<std::size_t> partner = derangement(cfg.k, rng);
    DialogRecord d;
    d.dialog_id = "synth-" + std::to_string(i);
    for (std::size_t j = 0; j < cfg.k; ++j) {
      UtteranceRecord r;
      r.label = content[partner[j]];
      r.text = plus(gaussian(d_key, kKeyNoise, rng), keys[partner[j]]);
      const auto payload = plus(gaussian(d_payload, 1.0, rng), payload_means[content[j]]);
      r.text.insert(r.text.end(), payload.begin(), payload.end());
      auto keyed = [&](std::size_t width) {
        std::vector<double> v = plus(gaussian(d_key, kKeyNoise, rng), keys[j]);
        const auto filler = gaussian(width - d_key, 1.0, rng);
        v.insert(v.end(), filler.begin(), filler.end());
        return v;
      };
      r.audio = keyed(cfg.d_a);
      r.visual = keyed(cfg.d_v);
      d.utterances.push_back(std::move(r));
    }
    corpus.dialogs.push_back(std::move(d));
  }
  return corpus;
}

}  // namespace m2f
