#pragma once

// Synthetic cases and the on-disk dataset layout:
//   <dir>/manifest.json
//   <dir>/<id>_img.pgm   binary P5, 8-bit intensities
//   <dir>/<id>_msk.pgm   binary P5, values 0 or 255

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tepo/grid.hpp"

namespace tepo {

struct SynthConfig {
  int height = 64;
  int width = 64;
  int blobs_min = 1;
  int blobs_max = 3;
  /// Blob axis scale range, as a fraction of the shorter grid side.
  double blob_scale_min = 0.05;
  double blob_scale_max = 0.14;
  std::size_t min_foreground = 64;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kMaxGenerationAttempts = 100;

std::string case_id_for(std::size_t index);

/// Deterministic in (cfg.seed, index). Intensities are already 8-bit quantized.
Case generate_case(const SynthConfig& cfg, std::size_t index);
std::vector<Case> generate_cases(const SynthConfig& cfg, std::size_t count,
                                 std::size_t first_index = 0);

enum class Split : std::uint8_t { Train, Val, Test };
/// 80/10/10 split by a hash of the case id.
Split split_of(const std::string& id);
std::string split_name(Split s);
Split parse_split(const std::string& s);
std::vector<Case> filter_split(const std::vector<Case>& cases, Split s);

// PGM (P5, maxval 255)
void write_pgm(const std::filesystem::path& path, int h, int w, const std::vector<std::uint8_t>& px);
struct PgmImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};
PgmImage read_pgm(const std::filesystem::path& path);

std::uint8_t quantize_intensity(double v) noexcept;

/// `generator` is recorded in the manifest when the cases are synthetic.
void write_dataset(const std::filesystem::path& dir, const std::vector<Case>& cases,
                   const std::optional<SynthConfig>& generator = std::nullopt);
std::vector<Case> read_dataset(const std::filesystem::path& dir);

}  // namespace tepo
