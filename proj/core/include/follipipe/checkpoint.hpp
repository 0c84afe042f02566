#pragma once

#include <filesystem>

#include "follipipe/model.hpp"

// Checkpoint layout:
//   FOLLIPIPE1\n
//   model <key=value ...>\n          model configuration
//   params <count>\n
//   <name> <d0>x<d1>x...\n           one line per parameter, in model order
//   end\n
//   <little-endian float64 blobs, concatenated in header order>
namespace follipipe {

inline constexpr const char* kCheckpointMagic = "FOLLIPIPE1";

void save_checkpoint(const std::filesystem::path& path, const HybridModel& model);
/// Throws std::runtime_error describing the first header mismatch or I/O fault.
HybridModel load_checkpoint(const std::filesystem::path& path);

std::string model_config_line(const ModelConfig& config);
ModelConfig parse_model_config_line(const std::string& line);

}  // namespace follipipe
