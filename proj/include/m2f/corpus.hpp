#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "m2f/extractor.hpp"
#include "m2f/fusion.hpp"
#include "m2f/signal.hpp"
#include "m2f/visual.hpp"

namespace m2f {

struct UtteranceRecord {
  std::vector<double> text;
  std::vector<double> audio;     // precomputed features; empty when audio_wav is set
  std::string audio_wav;         // path relative to the corpus file
  std::vector<double> visual;    // precomputed features; empty when frames is set
  std::optional<visual::UtteranceFrames> frames;
  int label = 0;
};

struct DialogRecord {
  std::string dialog_id;
  std::vector<UtteranceRecord> utterances;
};

struct Corpus {
  std::vector<DialogRecord> dialogs;
  std::filesystem::path base_dir;  // WAV paths resolve against this

  std::size_t utterance_count() const;
};

// One JSON object per line:
//   {"dialog_id": "...", "utterances": [{"text": [...], "audio": [...] or
//    "audio_wav": "clip.wav", "visual": [...] or "frames": [{"scene": [...],
//    "faces": [{"feature": [...], "area": a, "confidence": c}]}, ...],
//    "label": y}, ...]}
// Blank lines are skipped. Throws ValidationError naming the line number for
// malformed lines and the dialog_id for schema or dimension violations.
Corpus load_corpus(const std::filesystem::path& path, std::size_t n_classes);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

struct FeatureDims {
  std::size_t d_t = 0, d_a = 0, d_v = 0;
};

// Converts records to model inputs. WAV audio goes through the mel front end
// and `audio_extractor` (required when any record references a WAV); frame
// payloads go through the weighted face model. Every dialog must end up with
// the same feature widths.
std::vector<DialogFeatures> corpus_features(const Corpus& corpus, const Extractor* audio_extractor = nullptr);
FeatureDims feature_dims(const std::vector<DialogFeatures>& dialogs);

// Mel spectrogram of a clip laid out as a single-channel extractor input
// [1, height, width]: frames are cropped or zero-padded to `height`, and the
// mel band count must equal `width`.
Tensor spectrogram_input(const audio::AudioClip& clip, const InputShape& shape);

struct SynthConfig {
  std::size_t n_dialogs = 20;
  std::size_t k = 8;
  std::size_t d_t = 32, d_a = 16, d_v = 16;
  std::size_t n_classes = 7;
  double separation = 5.0;
  bool cross_modal_only = false;
  std::uint64_t seed = 1;

  void validate() const;
};

// Class-conditional mode: every utterance draws a uniform label y and each
// modality is N(mu_y, I), with per-modality class means at pairwise distance
// close to `separation`.
//
// Cross-modal mode: utterance j carries a random key kappa_j in its audio and
// visual features, and its text holds the key of a partner utterance pi(j)
// (pi a random derangement) next to a class pattern for a hidden content class
// c_j. The label is y_j = c_pi(j): it is recoverable only by matching text
// against audio or visual keys, and each modality alone is independent of it.
Corpus generate_synthetic_corpus(const SynthConfig& cfg);

}  // namespace m2f
