#include "m2f/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "m2f/errors.hpp"
#include "m2f/losses.hpp"

namespace m2f {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be positive");
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (batch_dialogs == 0) throw ValidationError("batch_dialogs must be positive");
  if (!(dropout >= 0.0 && dropout <= 0.5)) throw ValidationError("dropout must lie in [0, 0.5]");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in [0, 1)");
}

AdamWConfig TrainConfig::optimizer() const {
  AdamWConfig c;
  c.lr = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.eps = adam_eps;
  c.weight_decay = weight_decay;
  return c;
}

// ---- configuration file -----------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(out)) {
    throw ValidationError("config key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config key '" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "d_t",     "d_a",          "d_v",     "n_t",   "n_a",        "n_v",      "m",          "heads",
      "hidden",  "ffn_multiplier", "n_classes", "positional_encoding", "fusion", "modalities", "lr",
      "weight_decay", "beta1", "beta2",   "adam_eps", "epochs", "batch_dialogs", "seed",   "dropout",
      "val_fraction"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  ModelConfig& m = model;
  TrainConfig& t = train;
  if (key == "d_t") m.d_t = parse_size(key, value), dims_set = true;
  else if (key == "d_a") m.d_a = parse_size(key, value), dims_set = true;
  else if (key == "d_v") m.d_v = parse_size(key, value), dims_set = true;
  else if (key == "n_t") m.n_t = parse_size(key, value);
  else if (key == "n_a") m.n_a = parse_size(key, value);
  else if (key == "n_v") m.n_v = parse_size(key, value);
  else if (key == "m") m.m = parse_size(key, value);
  else if (key == "heads") m.heads = parse_size(key, value);
  else if (key == "hidden") m.hidden = parse_size(key, value);
  else if (key == "ffn_multiplier") m.ffn_multiplier = parse_size(key, value);
  else if (key == "n_classes") m.n_classes = parse_size(key, value);
  else if (key == "positional_encoding") m.positional_encoding = parse_bool(key, value);
  else if (key == "fusion") {
    if (value != "attention" && value != "concat") {
      throw ValidationError("config key 'fusion' expects attention or concat, got '" + value + "'");
    }
    m.fusion = value == "attention" ? FusionMode::attention : FusionMode::concat;
  } else if (key == "modalities") m.modalities = ModalityMask::parse(value);
  else if (key == "lr") t.lr = parse_double(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "beta1") t.beta1 = parse_double(key, value);
  else if (key == "beta2") t.beta2 = parse_double(key, value);
  else if (key == "adam_eps") t.adam_eps = parse_double(key, value);
  else if (key == "epochs") t.epochs = parse_size(key, value);
  else if (key == "batch_dialogs") t.batch_dialogs = parse_size(key, value);
  else if (key == "seed") t.seed = parse_size(key, value), m.init_seed = t.seed;
  else if (key == "dropout") t.dropout = parse_double(key, value), m.dropout = t.dropout;
  else if (key == "val_fraction") t.val_fraction = parse_double(key, value);
  else throw ValidationError("unknown config key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  cfg.model.dropout = cfg.train.dropout;
  std::istringstream in(text);
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.train.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

// ---- training -----------------------------------------------------------------

DataSplit split_dialogs(std::size_t n, double fraction, std::uint64_t seed) {
  if (n == 0) throw ValidationError("cannot split an empty corpus");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_val = std::min(n_val, n - 1);
  DataSplit split;
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

std::vector<int> predict(const FusionModel& model, const std::vector<DialogFeatures>& dialogs,
                         const std::vector<std::size_t>& subset) {
  std::vector<std::vector<int>> per_dialog(subset.size());
  const std::size_t classes = model.config().n_classes;
  const long long n = static_cast<long long>(subset.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n; ++i) {
    NoGradGuard no_grad;
    const DialogFeatures& d = dialogs.at(subset[static_cast<std::size_t>(i)]);
    const Tensor probs = model.forward(d).probs;
    std::vector<int>& out = per_dialog[static_cast<std::size_t>(i)];
    for (std::size_t u = 0; u < d.size(); ++u) {
      const auto row = probs.values().begin() + static_cast<std::ptrdiff_t>(u * classes);
      out.push_back(static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(classes)) - row));
    }
  }
  std::vector<int> flat;
  for (const auto& p : per_dialog) flat.insert(flat.end(), p.begin(), p.end());
  return flat;
}

std::vector<int> predict(const FusionModel& model, const std::vector<DialogFeatures>& dialogs) {
  std::vector<std::size_t> all(dialogs.size());
  std::iota(all.begin(), all.end(), 0);
  return predict(model, dialogs, all);
}

MetricsReport evaluate(const FusionModel& model, const std::vector<DialogFeatures>& dialogs,
                       const std::vector<std::size_t>& subset) {
  if (subset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<int> truth;
  for (std::size_t i : subset) truth.insert(truth.end(), dialogs.at(i).labels.begin(), dialogs.at(i).labels.end());
  const std::vector<int> pred = predict(model, dialogs, subset);
  return compute_metrics(truth, pred, model.config().n_classes);
}

MetricsReport evaluate(const FusionModel& model, const std::vector<DialogFeatures>& dialogs) {
  std::vector<std::size_t> all(dialogs.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(model, dialogs, all);
}

TrainResult train_model(ModelConfig model_cfg, const std::vector<DialogFeatures>& dialogs, const TrainConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  if (dialogs.empty()) throw ValidationError("training needs a non-empty corpus");
  model_cfg.dropout = cfg.dropout;
  TrainResult result{FusionModel(model_cfg), {}, 0, split_dialogs(dialogs.size(), cfg.val_fraction, cfg.seed)};
  FusionModel& model = result.model;
  AdamW optimizer(model.parameters().tensors(), cfg.optimizer());
  std::mt19937_64 order_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 dropout_rng(cfg.seed + 0x3c6ef372fe94f82bULL);

  double best_score = -1.0;
  std::vector<std::vector<double>> best_params = model.parameters().snapshot();
  std::vector<std::size_t> order = result.split.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t utterances = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_dialogs) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_dialogs);
      std::vector<Tensor> probs;
      std::vector<int> labels;
      for (std::size_t b = start; b < end; ++b) {
        const DialogFeatures& d = dialogs[order[b]];
        probs.push_back(model.forward(d, true, &dropout_rng).probs);
        labels.insert(labels.end(), d.labels.begin(), d.labels.end());
      }
      const Tensor loss = losses::cross_entropy(probs.size() == 1 ? probs.front() : concat(probs, 0), labels);
      if (!std::isfinite(loss.item())) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      optimizer.zero_grad();
      backward(loss);
      optimizer.step();
      loss_sum += loss.item() * static_cast<double>(labels.size());
      utterances += labels.size();
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(utterances);
    log.train_accuracy = evaluate(model, dialogs, result.split.train).accuracy;
    double score = log.train_accuracy;
    if (!result.split.validation.empty()) {
      const MetricsReport val = evaluate(model, dialogs, result.split.validation);
      log.val_accuracy = val.accuracy;
      log.val_weighted_f1 = val.weighted_f1;
      score = val.weighted_f1;
    }
    result.log.push_back(log);
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      best_params = model.parameters().snapshot();
    }
    if (on_epoch && !on_epoch(log)) break;
  }
  model.parameters().restore(best_params);
  return result;
}

std::string format_train_log(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,train_accuracy,val_accuracy,val_weighted_f1\n";
  char line[200];
  for (const EpochLog& e : log) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.train_accuracy,
                  e.val_accuracy, e.val_weighted_f1);
    out << line;
  }
  return out.str();
}

// ---- linear probe -------------------------------------------------------------

namespace {

Tensor modality_features(const DialogFeatures& d, Modality m) {
  switch (m) {
    case Modality::text: return d.f_it;
    case Modality::audio: return d.f_ia;
    case Modality::visual: return d.f_iv;
  }
  return d.f_it;
}

void gather(const std::vector<DialogFeatures>& dialogs, const std::vector<std::size_t>& subset, Modality m,
            std::vector<Tensor>& rows, std::vector<int>& labels) {
  for (std::size_t i : subset) {
    rows.push_back(modality_features(dialogs.at(i), m));
    labels.insert(labels.end(), dialogs[i].labels.begin(), dialogs[i].labels.end());
  }
}

}  // namespace

double linear_probe_accuracy(const std::vector<DialogFeatures>& dialogs, const DataSplit& split, Modality modality,
                             std::size_t n_classes, std::size_t steps, std::uint64_t seed) {
  if (split.train.empty() || split.validation.empty()) throw std::invalid_argument("probe needs train and test dialogs");
  std::vector<Tensor> train_rows, test_rows;
  std::vector<int> train_y, test_y;
  gather(dialogs, split.train, modality, train_rows, train_y);
  gather(dialogs, split.validation, modality, test_rows, test_y);
  const Tensor x_train = concat(train_rows, 0), x_test = concat(test_rows, 0);
  const std::size_t dim = x_train.dim(1);

  std::mt19937_64 rng(seed);
  ParameterStore params;
  const Tensor w = params.add("w", Tensor::normal({dim, n_classes}, 0.0, 0.01, rng));
  const Tensor b = params.add("b", Tensor::zeros({n_classes}));
  AdamWConfig oc;
  oc.lr = 1e-2;
  oc.weight_decay = 0.0;
  AdamW opt(params.tensors(), oc);
  for (std::size_t s = 0; s < steps; ++s) {
    opt.zero_grad();
    backward(losses::cross_entropy(softmax(linear(x_train, w, b), 1), train_y));
    opt.step();
  }
  NoGradGuard no_grad;
  const Tensor logits = linear(x_test, w, b);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_y.size(); ++i) {
    const auto row = logits.values().begin() + static_cast<std::ptrdiff_t>(i * n_classes);
    correct += (std::max_element(row, row + static_cast<std::ptrdiff_t>(n_classes)) - row) == test_y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test_y.size());
}

}  // namespace m2f
