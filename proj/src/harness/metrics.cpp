#include "m2f/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "m2f/errors.hpp"

namespace m2f {

MetricsReport metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
  const std::size_t c = confusion.size();
  MetricsReport r;
  r.confusion = confusion;
  r.per_class_f1.assign(c, 0.0);
  r.precision.assign(c, 0.0);
  r.recall.assign(c, 0.0);
  r.support.assign(c, 0);
  std::vector<std::size_t> predicted(c, 0);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < c; ++t) {
    if (confusion[t].size() != c) throw std::invalid_argument("confusion matrix must be square");
    for (std::size_t p = 0; p < c; ++p) {
      r.support[t] += confusion[t][p];
      predicted[p] += confusion[t][p];
      r.total += confusion[t][p];
    }
    correct += confusion[t][t];
  }
  if (r.total == 0) throw std::invalid_argument("metrics need at least one prediction");
  const double total = static_cast<double>(r.total);
  r.accuracy = static_cast<double>(correct) / total;
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t tp = confusion[k][k];
    if (predicted[k] > 0) r.precision[k] = static_cast<double>(tp) / static_cast<double>(predicted[k]);
    if (r.support[k] > 0) r.recall[k] = static_cast<double>(tp) / static_cast<double>(r.support[k]);
    const double pr = r.precision[k] + r.recall[k];
    r.per_class_f1[k] = pr == 0.0 ? 0.0 : 2.0 * r.precision[k] * r.recall[k] / pr;
    r.weighted_f1 += static_cast<double>(r.support[k]) / total * r.per_class_f1[k];
  }
  return r;
}

MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes) {
  if (truth.size() != pred.size()) {
    throw std::invalid_argument("compute_metrics: " + std::to_string(truth.size()) + " labels vs " +
                                std::to_string(pred.size()) + " predictions");
  }
  if (truth.empty()) throw std::invalid_argument("compute_metrics: empty dataset");
  std::vector<std::vector<std::size_t>> confusion(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= n_classes ||
        static_cast<std::size_t>(pred[i]) >= n_classes) {
      throw std::out_of_range("compute_metrics: label outside [0, " + std::to_string(n_classes) + ")");
    }
    ++confusion[truth[i]][pred[i]];
  }
  return metrics_from_confusion(confusion);
}

std::string format_summary(const MetricsReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "utterances   %zu\naccuracy     %.4f\nweighted F1  %.4f\n\n", r.total, r.accuracy,
                r.weighted_f1);
  out << line;
  out << "class  support  precision  recall  F1\n";
  for (std::size_t c = 0; c < r.n_classes(); ++c) {
    std::snprintf(line, sizeof line, "%5zu  %7zu  %9.4f  %6.4f  %.4f\n", c, r.support[c], r.precision[c], r.recall[c],
                  r.per_class_f1[c]);
    out << line;
  }
  out << "\nconfusion (rows: true, columns: predicted)\n";
  for (const auto& row : r.confusion) {
    for (std::size_t p = 0; p < row.size(); ++p) out << (p ? " " : "") << row[p];
    out << '\n';
  }
  return out.str();
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["weighted_f1"] = r.weighted_f1;
  j["total"] = r.total;
  j["per_class_f1"] = r.per_class_f1;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["support"] = r.support;
  j["confusion"] = r.confusion;
  return j.dump(2);
}

MetricsReport read_metrics_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open metrics file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return metrics_from_confusion(j.at("confusion").get<std::vector<std::vector<std::size_t>>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("failed writing " + path.string());
}

}  // namespace

void emit_report(const MetricsReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create report directory " + dir.string() + ": " + ec.message());

  std::ostringstream confusion;
  confusion << "true\\pred";
  for (std::size_t c = 0; c < r.n_classes(); ++c) confusion << ',' << c;
  confusion << '\n';
  for (std::size_t t = 0; t < r.n_classes(); ++t) {
    confusion << t;
    for (std::size_t v : r.confusion[t]) confusion << ',' << v;
    confusion << '\n';
  }

  std::ostringstream per_class;
  per_class << "class,support,precision,recall,f1\n";
  char line[160];
  for (std::size_t c = 0; c < r.n_classes(); ++c) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g\n", c, r.support[c], r.precision[c], r.recall[c],
                  r.per_class_f1[c]);
    per_class << line;
  }

  write_file(dir / "summary.txt", format_summary(r));
  write_file(dir / "confusion.csv", confusion.str());
  write_file(dir / "per_class_f1.csv", per_class.str());
  write_file(dir / "metrics.json", metrics_json(r) + "\n");
}

std::vector<std::vector<std::size_t>> read_confusion_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<std::size_t>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');  // row label
    std::vector<std::size_t> row;
    while (std::getline(cells, cell, ',')) row.push_back(std::stoull(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace m2f
