#pragma once

#include <filesystem>
#include <string>

#include "m2f/optim.hpp"

namespace m2f {

// Text checkpoint: a version line, the model kind, the model configuration as
// one line of JSON, then every parameter as "name rank dims..." followed by
// its values in hexadecimal floating point. Values round-trip bit-exactly.
struct CheckpointHeader {
  std::string kind;
  std::string config_json;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const ParameterStore& params);

// Reads only the header lines.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Loads values into `params`, which must already hold the same named tensors
// in the same order with matching shapes. Returns the header.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, ParameterStore& params);

}  // namespace m2f
