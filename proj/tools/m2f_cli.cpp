#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "m2f/corpus.hpp"
#include "m2f/errors.hpp"
#include "m2f/extractor.hpp"
#include "m2f/gradsuite.hpp"
#include "m2f/training.hpp"

namespace fs = std::filesystem;
using namespace m2f;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

struct CommonOptions {
  std::string config;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string corpus;
  std::string out = ".";
  std::string modalities;
  std::string fusion;
  std::size_t encoders = 0;
  bool encoders_given = false;
  std::size_t fusion_layers = 0;
  bool fusion_layers_given = false;
};

enum CommonFlag : unsigned {
  kConfig = 1, kSeed = 2, kCorpus = 4, kOut = 8, kModalities = 16, kFusion = 32, kEncoders = 64, kFusionLayers = 128,
  kAll = 255
};

void add_common(CLI::App* sub, CommonOptions& o, unsigned flags) {
  if (flags & kConfig) sub->add_option("--config", o.config, "flat key = value configuration file");
  if (flags & kSeed) {
    sub->add_option_function<std::uint64_t>("--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_given = true; },
                                            "random seed");
  }
  if (flags & kCorpus) sub->add_option("--corpus", o.corpus, "corpus file (JSON lines)");
  if (flags & kOut) sub->add_option("--out", o.out, "output directory")->capture_default_str();
  if (flags & kModalities) sub->add_option("--modalities", o.modalities, "enabled modalities, e.g. t,a,v");
  if (flags & kFusion) {
    sub->add_option("--fusion", o.fusion, "fusion mode")->check(CLI::IsMember({"attention", "concat"}));
  }
  if (flags & kEncoders) {
    sub->add_option_function<std::size_t>(
        "--encoders", [&o](std::size_t n) { o.encoders = n, o.encoders_given = true; },
        "encoder blocks per modality (N_T = N_A = N_V)");
  }
  if (flags & kFusionLayers) {
    sub->add_option_function<std::size_t>(
        "--fusion-layers", [&o](std::size_t m) { o.fusion_layers = m, o.fusion_layers_given = true; },
        "number of attention fusion layers");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

std::vector<std::size_t> parse_list(const std::string& text, std::size_t expected, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(std::string(what) + ": '" + item + "' is not a non-negative integer");
    }
  }
  if (expected != 0 && out.size() != expected) {
    throw ValidationError(std::string(what) + " needs " + std::to_string(expected) + " comma-separated values");
  }
  return out;
}

// ---- gen-synth ------------------------------------------------------------------

struct SynthOptions {
  SynthConfig cfg;
  std::string dims = "32,16,16";
};

int run_gen_synth(const CommonOptions& o, SynthOptions& s) {
  const auto dims = parse_list(s.dims, 3, "--dims");
  s.cfg.d_t = dims[0];
  s.cfg.d_a = dims[1];
  s.cfg.d_v = dims[2];
  s.cfg.seed = o.seed;
  const Corpus corpus = generate_synthetic_corpus(s.cfg);
  const fs::path path = prepare_out(o.out) / "corpus.jsonl";
  save_corpus(path, corpus);
  std::printf("wrote %zu dialogs (%zu utterances) to %s\n", corpus.dialogs.size(), corpus.utterance_count(),
              path.string().c_str());
  return kExitOk;
}

// ---- train-extractor ---------------------------------------------------------------

struct ExtractorOptions {
  std::string input_shape = "16,16,1";
  std::string widths = "16,32,64";
  std::size_t representation_dim = 300;
  std::size_t steps = 200;
  std::size_t batch = 8;
  double lr = 0.0;  // 0 keeps the extractor default
  std::size_t classes = 3;
  std::size_t per_class = 20;
  double noise = 1.0;
};

int run_train_extractor(const CommonOptions& o, const ExtractorOptions& e) {
  ExtractorConfig cfg;
  const auto shape = parse_list(e.input_shape, 3, "--input-shape");
  cfg.input_shape = {shape[0], shape[1], shape[2]};
  cfg.encoder_channels = parse_list(e.widths, 0, "--widths");
  cfg.representation_dim = e.representation_dim;
  cfg.init_seed = o.seed;
  cfg.validate();
  if (e.steps == 0 || e.batch < 2) throw ValidationError("--steps must be positive and --batch at least 2");

  LabeledInputs data;
  if (!o.corpus.empty()) {
    const Corpus corpus = load_corpus(o.corpus, e.classes);
    for (const auto& d : corpus.dialogs) {
      for (const auto& u : d.utterances) {
        if (u.audio_wav.empty()) continue;
        data.inputs.push_back(spectrogram_input(audio::read_wav(corpus.base_dir / u.audio_wav), cfg.input_shape));
        data.labels.push_back(u.label);
      }
    }
    if (data.size() == 0) throw ValidationError("corpus has no WAV-backed utterances to train on");
  } else {
    data = make_blob_dataset(e.classes, e.per_class, cfg.input_shape, e.noise, o.seed);
  }
  // hold out every fifth item
  LabeledInputs train, held;
  for (std::size_t i = 0; i < data.size(); ++i) {
    LabeledInputs& dst = i % 5 == 4 ? held : train;
    dst.inputs.push_back(data.inputs[i]);
    dst.labels.push_back(data.labels[i]);
  }

  Extractor model(cfg);
  AdamWConfig oc = extractor_optimizer_defaults();
  if (e.lr > 0.0) oc.lr = e.lr;
  AdamW optimizer(model.parameters().tensors(), oc);
  std::ostringstream log;
  log << "step,loss,amt,cov,var,mean_d_ap,mean_d_an\n";
  for (std::size_t step = 0; step < e.steps; ++step) {
    const auto batch = sample_triplets(train.labels, e.batch, o.seed * 1000003ULL + step);
    const ExtractorStepResult r = extractor_train_step(model, train, batch, {}, optimizer);
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step + 1, r.loss, r.amt, r.cov,
                  r.var, r.mean_d_ap, r.mean_d_an);
    log << line;
    if ((step + 1) % 20 == 0 || step + 1 == e.steps) {
      std::printf("step %4zu  loss %.5f  d_ap %.4f  d_an %.4f\n", step + 1, r.loss, r.mean_d_ap, r.mean_d_an);
    }
  }
  const fs::path out = prepare_out(o.out);
  write_text(out / "extractor_log.csv", log.str());
  model.save(out / "extractor.ckpt");
  const auto eval = evaluate_triplets(model, held, sample_triplets(held.labels, 64, o.seed + 17));
  std::printf("held-out: mean d_ap %.4f, mean d_an %.4f, max |norm - 1| %.2e\n", eval.mean_d_ap, eval.mean_d_an,
              eval.max_norm_deviation);
  return kExitOk;
}

// ---- train-model / evaluate -----------------------------------------------------------

std::vector<DialogFeatures> load_features(const std::string& corpus_path, std::size_t n_classes,
                                          const std::string& audio_extractor) {
  if (corpus_path.empty()) throw ValidationError("--corpus is required");
  const Corpus corpus = load_corpus(corpus_path, n_classes);
  if (corpus.dialogs.empty()) throw ValidationError("corpus " + corpus_path + " is empty");
  std::optional<Extractor> extractor;
  if (!audio_extractor.empty()) extractor.emplace(Extractor::load(audio_extractor));
  return corpus_features(corpus, extractor ? &*extractor : nullptr);
}

std::string effective_config(const ModelConfig& m, const TrainConfig& t) {
  std::ostringstream out;
  out.precision(17);
  out << "d_t = " << m.d_t << "\nd_a = " << m.d_a << "\nd_v = " << m.d_v << "\nn_t = " << m.n_t
      << "\nn_a = " << m.n_a << "\nn_v = " << m.n_v << "\nm = " << m.m << "\nheads = " << m.heads
      << "\nhidden = " << m.hidden << "\nffn_multiplier = " << m.ffn_multiplier << "\nn_classes = " << m.n_classes
      << "\npositional_encoding = " << (m.positional_encoding ? "true" : "false")
      << "\nfusion = " << (m.fusion == FusionMode::attention ? "attention" : "concat")
      << "\nmodalities = " << m.modalities.str() << "\nlr = " << t.lr << "\nweight_decay = " << t.weight_decay
      << "\nbeta1 = " << t.beta1 << "\nbeta2 = " << t.beta2 << "\nadam_eps = " << t.adam_eps
      << "\nepochs = " << t.epochs << "\nbatch_dialogs = " << t.batch_dialogs << "\nseed = " << t.seed
      << "\ndropout = " << t.dropout << "\nval_fraction = " << t.val_fraction << "\n";
  return out.str();
}

struct TrainOptions {
  std::size_t epochs = 0;  // 0 keeps the configured value
  std::string audio_extractor;
  bool quiet = false;
};

int run_train_model(const CommonOptions& o, const TrainOptions& t) {
  RunConfig run = o.config.empty() ? RunConfig::parse("") : RunConfig::load(o.config);
  if (o.seed_given) run.set("seed", std::to_string(o.seed));
  if (!o.modalities.empty()) run.model.modalities = ModalityMask::parse(o.modalities);
  if (!o.fusion.empty()) run.set("fusion", o.fusion);
  if (o.encoders_given) run.model.n_t = run.model.n_a = run.model.n_v = o.encoders;
  if (o.fusion_layers_given) run.model.m = o.fusion_layers;
  if (t.epochs > 0) run.train.epochs = t.epochs;
  run.train.validate();

  const auto dialogs = load_features(o.corpus, run.model.n_classes, t.audio_extractor);
  const FeatureDims dims = feature_dims(dialogs);
  if (run.dims_set && (dims.d_t != run.model.d_t || dims.d_a != run.model.d_a || dims.d_v != run.model.d_v)) {
    throw ValidationError("configured widths (" + std::to_string(run.model.d_t) + ", " + std::to_string(run.model.d_a) +
                          ", " + std::to_string(run.model.d_v) + ") do not match the corpus (" +
                          std::to_string(dims.d_t) + ", " + std::to_string(dims.d_a) + ", " +
                          std::to_string(dims.d_v) + ")");
  }
  run.model.d_t = dims.d_t;
  run.model.d_a = dims.d_a;
  run.model.d_v = dims.d_v;
  run.model.validate();

  const fs::path out = prepare_out(o.out);
  write_text(out / "config.txt", effective_config(run.model, run.train));
  TrainResult result = train_model(run.model, dialogs, run.train, [&](const EpochLog& e) {
    if (!t.quiet) {
      std::printf("epoch %4zu  loss %.5f  train acc %.4f  val acc %.4f  val wF1 %.4f\n", e.epoch, e.train_loss,
                  e.train_accuracy, e.val_accuracy, e.val_weighted_f1);
    }
    return true;
  });
  write_text(out / "train_log.csv", format_train_log(result.log));
  result.model.save(out / "model.ckpt");
  std::printf("best epoch %zu; checkpoint %s\n", result.best_epoch, (out / "model.ckpt").string().c_str());
  if (!result.split.validation.empty()) {
    const MetricsReport val = evaluate(result.model, dialogs, result.split.validation);
    emit_report(val, out / "validation");
    std::printf("validation accuracy %.4f, weighted F1 %.4f\n", val.accuracy, val.weighted_f1);
  }
  return kExitOk;
}

struct EvaluateOptions {
  std::string checkpoint;
  std::string audio_extractor;
};

int run_evaluate(const CommonOptions& o, const EvaluateOptions& e) {
  if (e.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  const FusionModel model = FusionModel::load(e.checkpoint);
  const auto dialogs = load_features(o.corpus, model.config().n_classes, e.audio_extractor);
  const MetricsReport report = evaluate(model, dialogs);
  emit_report(report, prepare_out(o.out));
  std::fputs(format_summary(report).c_str(), stdout);
  return kExitOk;
}

int run_report(const CommonOptions& o, const std::string& metrics) {
  if (metrics.empty()) throw ValidationError("--metrics is required");
  const MetricsReport report = read_metrics_json(metrics);
  emit_report(report, prepare_out(o.out));
  std::fputs(format_summary(report).c_str(), stdout);
  return kExitOk;
}

int run_gradcheck(const CommonOptions& o, double tolerance) {
  const auto entries = run_gradient_suite(o.seed);
  std::ostringstream csv;
  csv << "check,entries,max_relative_error,passed\n";
  bool all = true;
  for (const auto& e : entries) {
    const bool ok = e.report.passed(tolerance);
    all = all && ok;
    std::printf("%-24s %6zu  %.3e  %s\n", e.name.c_str(), e.report.entries_checked, e.report.max_relative_error,
                ok ? "ok" : "FAIL");
    csv << '"' << e.name << "\"," << e.report.entries_checked << ',' << e.report.max_relative_error << ','
        << (ok ? "true" : "false") << '\n';
  }
  write_text(prepare_out(o.out) / "gradcheck.csv", csv.str());
  std::printf("%zu checks, %s at tolerance %g\n", entries.size(), all ? "all passed" : "FAILURES", tolerance);
  return all ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal dialog emotion recognition toolkit"};
  app.require_subcommand(1);
  CommonOptions common;

  SynthOptions synth;
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic corpus to <out>/corpus.jsonl");
  add_common(gen, common, kSeed | kOut);
  gen->add_option("--dialogs", synth.cfg.n_dialogs, "number of dialogs")->capture_default_str();
  gen->add_option("--utterances", synth.cfg.k, "utterances per dialog")->capture_default_str();
  gen->add_option("--dims", synth.dims, "text,audio,visual widths")->capture_default_str();
  gen->add_option("--classes", synth.cfg.n_classes, "number of classes")->capture_default_str();
  gen->add_option("--separation", synth.cfg.separation, "distance between class means")->capture_default_str();
  gen->add_flag("--cross-modal", synth.cfg.cross_modal_only, "class signal only across modalities");

  ExtractorOptions ext;
  auto* te = app.add_subcommand("train-extractor", "train a triplet feature extractor");
  add_common(te, common, kSeed | kCorpus | kOut);
  te->add_option("--input-shape", ext.input_shape, "height,width,channels")->capture_default_str();
  te->add_option("--widths", ext.widths, "residual stage widths")->capture_default_str();
  te->add_option("--rep-dim", ext.representation_dim, "representation size")->capture_default_str();
  te->add_option("--steps", ext.steps, "training steps")->capture_default_str();
  te->add_option("--batch", ext.batch, "triplets per step")->capture_default_str();
  te->add_option("--lr", ext.lr, "learning rate (default 1e-4)");
  te->add_option("--classes", ext.classes, "classes (corpus labels or synthetic blobs)")->capture_default_str();
  te->add_option("--per-class", ext.per_class, "synthetic items per class")->capture_default_str();
  te->add_option("--noise", ext.noise, "synthetic noise level")->capture_default_str();

  TrainOptions train_opts;
  auto* tm = app.add_subcommand("train-model", "train the dialog fusion model");
  add_common(tm, common, kAll);
  tm->add_option("--epochs", train_opts.epochs, "override the configured epoch count");
  tm->add_option("--audio-extractor", train_opts.audio_extractor, "extractor checkpoint for WAV audio");
  tm->add_flag("--quiet", train_opts.quiet, "suppress per-epoch output");

  EvaluateOptions eval_opts;
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint and write a report");
  add_common(ev, common, kCorpus | kOut);
  ev->add_option("--checkpoint", eval_opts.checkpoint, "model checkpoint");
  ev->add_option("--audio-extractor", eval_opts.audio_extractor, "extractor checkpoint for WAV audio");

  std::string metrics_path;
  auto* rp = app.add_subcommand("report", "render summary and CSV files from metrics.json");
  add_common(rp, common, kOut);
  rp->add_option("--metrics", metrics_path, "metrics.json written by evaluate");

  double tolerance = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc, common, kSeed | kOut);
  gc->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*gen) return run_gen_synth(common, synth);
    if (*te) return run_train_extractor(common, ext);
    if (*tm) return run_train_model(common, train_opts);
    if (*ev) return run_evaluate(common, eval_opts);
    if (*rp) return run_report(common, metrics_path);
    if (*gc) return run_gradcheck(common, tolerance);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitValidation;
}
