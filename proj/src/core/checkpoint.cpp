#include "m2f/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "m2f/errors.hpp"

namespace m2f {

namespace {

constexpr const char* kMagic = "m2f-checkpoint";

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

CheckpointHeader read_header(std::istream& in, const std::filesystem::path& path) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (!in || magic != kMagic) throw ValidationError(path.string() + ": not a checkpoint file");
  if (version != kCheckpointVersion) {
    throw ValidationError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointHeader h;
  std::string tag;
  in >> tag >> h.kind;
  if (tag != "kind") throw ValidationError(path.string() + ": missing kind line");
  in >> tag;
  if (tag != "config") throw ValidationError(path.string() + ": missing config line");
  std::getline(in >> std::ws, h.config_json);
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const ParameterStore& params) {
  if (header.config_json.find('\n') != std::string::npos) {
    throw std::invalid_argument("checkpoint config must be a single line");
  }
  std::ostringstream out;
  out << kMagic << ' ' << kCheckpointVersion << '\n';
  out << "kind " << header.kind << '\n';
  out << "config " << header.config_json << '\n';
  out << "params " << params.size() << '\n';
  for (const auto& e : params.entries()) {
    out << e.name << ' ' << e.tensor.rank();
    for (std::size_t d : e.tensor.shape()) out << ' ' << d;
    out << '\n';
    const auto& v = e.tensor.values();
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << hexfloat(v[i]);
    out << '\n';
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw ValidationError("cannot write checkpoint " + path.string());
  file << out.str();
  if (!file) throw ValidationError("failed writing checkpoint " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  return read_header(in, path);
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, ParameterStore& params) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  CheckpointHeader h = read_header(in, path);
  std::string tag;
  std::size_t count = 0;
  in >> tag >> count;
  if (tag != "params" || count != params.size()) {
    throw ValidationError(path.string() + ": expected " + std::to_string(params.size()) + " parameters");
  }
  std::vector<std::vector<double>> values;
  for (const auto& e : params.entries()) {
    std::string name;
    std::size_t rank = 0;
    in >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) in >> d;
    if (!in || name != e.name || shape != e.tensor.shape()) {
      throw ValidationError(path.string() + ": parameter " + e.name + " " + shape_str(e.tensor.shape()) +
                            " does not match stored " + name + " " + shape_str(shape));
    }
    std::vector<double> v(e.tensor.numel());
    for (auto& x : v) {
      std::string token;
      in >> token;
      char* end = nullptr;
      x = std::strtod(token.c_str(), &end);
      if (token.empty() || *end != '\0') throw ValidationError(path.string() + ": bad value in " + name);
    }
    values.push_back(std::move(v));
  }
  params.restore(values);
  return h;
}

}  // namespace m2f
