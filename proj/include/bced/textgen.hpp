#ifndef BCED_TEXTGEN_HPP
#define BCED_TEXTGEN_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bced/bintensor.hpp"

namespace bced {

constexpr int kSampleHeight = 32;
constexpr int kSampleWidth = 128;
constexpr int kNumClasses = 27;  // background + A..Z

struct RenderParams {
  double scale_min = 2.0, scale_max = 3.5;
  double max_rotation = 0.08;   // radians
  double max_shear = 0.12;
  double max_perspective = 0.0015;
  double min_contrast = 0.2;
  double noise_sigma = 0.03;
  double max_jitter = 1.5;      // per-character horizontal offset, pixels
  int min_length = 1, max_length = 8;

  void validate() const;  // throws std::invalid_argument on degenerate ranges
};

struct LabeledSample {
  RealTensor image;             // 32 x 128 x 1, values in [0,1]
  std::vector<uint8_t> labels;  // 4096 class values, row-major
  std::string text;
  uint64_t seed = 0;
  double scale = 0, rotation = 0, shear = 0;
  double fg = 0, bg = 0;
  int face = 0;
};

struct DatasetManifest {
  size_t count = 0;
  uint64_t seed = 0;
  std::array<uint64_t, kNumClasses> class_pixels{};
};

LabeledSample render_sample(uint64_t seed, const RenderParams& params);

// Writes `count` samples to a dataset directory (manifest.txt + NNNNNN.pgm /
// NNNNNN.lbl pairs). Sample i uses seed + i, so generation order is free.
DatasetManifest render_dataset(size_t count, uint64_t seed,
                               const RenderParams& params,
                               const std::string& out_path);

struct DatasetSample {
  RealTensor image;
  std::vector<uint8_t> labels;
};

// Loads a dataset directory; also serves as the import shim for externally
// supplied image+label pairs in the same layout.
std::vector<DatasetSample> load_dataset(const std::string& path);

}  // namespace bced

#endif
