#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "gacr/encoder.hpp"
#include "gacr/training.hpp"

namespace gacr {

// File layout:
//   "GACR1\n"
//   text header: one "key value" per line (configs, then "array <name> <rows> <cols>")
//   "params\n" followed by every parameter array, row-major little-endian float64
//   "optimizer <step>\n" followed by first moments, then second moments
struct Checkpoint {
  EncoderConfig encoder;
  TrainConfig train;
  EncoderParams params;
  OptimizerState optimizer;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Loads a checkpoint. When `expected` is given, its shape fields must match
/// the stored encoder config or a LoadError naming the field is thrown.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<EncoderConfig>& expected = std::nullopt);

/// FNV-1a of the file bytes; identifies the encoder an index was built with.
std::uint64_t file_fingerprint(const std::filesystem::path& path);

}  // namespace gacr
