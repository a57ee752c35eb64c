#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "m2f/fusion.hpp"
#include "m2f/metrics.hpp"

namespace m2f {

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_dialogs = 4;  // whole dialogs per update
  std::uint64_t seed = 1;
  double dropout = 0.4;
  double val_fraction = 0.1;

  void validate() const;  // throws ValidationError
  AdamWConfig optimizer() const;
};

// Model and training settings as read from a flat "key = value" file. Lines
// starting with '#' are comments. Feature widths left unset are taken from the
// corpus; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool dims_set = false;  // any of d_t, d_a, d_v given explicitly

  void set(const std::string& key, const std::string& value);  // throws ValidationError
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  static const std::vector<std::string>& keys();
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;      // utterance-weighted mean over the epoch's updates
  double train_accuracy = 0.0;  // evaluation mode, after the epoch
  double val_accuracy = 0.0;
  double val_weighted_f1 = 0.0;
};

struct DataSplit {
  std::vector<std::size_t> train, validation;  // dialog indices
};

// Seeded shuffle of dialog indices; the first round(fraction * n) become the
// validation set, leaving at least one training dialog.
DataSplit split_dialogs(std::size_t n, double fraction, std::uint64_t seed);

struct TrainResult {
  FusionModel model;  // parameters of the best validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  DataSplit split;
};

// Per-epoch hook; returning false stops training early.
using EpochCallback = std::function<bool(const EpochLog&)>;

// Cross-entropy training with AdamW over batches of whole dialogs. The best
// epoch maximizes validation weighted F1 (training accuracy when there is no
// validation split); ties keep the earlier epoch. Throws NumericalError on a
// non-finite loss. Bitwise reproducible for fixed inputs.
TrainResult train_model(ModelConfig model_cfg, const std::vector<DialogFeatures>& dialogs, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

// Argmax predictions for every utterance, dialogs in order. Dialogs are
// processed in parallel without gradient recording.
std::vector<int> predict(const FusionModel& model, const std::vector<DialogFeatures>& dialogs);
std::vector<int> predict(const FusionModel& model, const std::vector<DialogFeatures>& dialogs,
                         const std::vector<std::size_t>& subset);

MetricsReport evaluate(const FusionModel& model, const std::vector<DialogFeatures>& dialogs);
MetricsReport evaluate(const FusionModel& model, const std::vector<DialogFeatures>& dialogs,
                       const std::vector<std::size_t>& subset);

// One line per epoch, values printed with 17 significant digits.
std::string format_train_log(const std::vector<EpochLog>& log);

enum class Modality { text, audio, visual };

// Held-out accuracy of a softmax-regression probe trained on one modality's
// per-utterance features (train dialogs -> test dialogs), full-batch AdamW.
double linear_probe_accuracy(const std::vector<DialogFeatures>& dialogs, const DataSplit& split, Modality modality,
                             std::size_t n_classes, std::size_t steps = 300, std::uint64_t seed = 1);

}  // namespace m2f
