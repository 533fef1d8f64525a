#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "l2g/rng.hpp"
#include "l2g/tensor.hpp"

namespace l2g {

struct SegSample {
  Tensor image;                      // [C, H, W], values in [0, 1], float-representable
  std::vector<std::uint8_t> labels;  // H * W, row-major
};

struct SegDataset {
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::string split;
  std::uint64_t seed = 0;
  std::vector<SegSample> samples;

  std::size_t size() const { return samples.size(); }
  /// Throws std::invalid_argument on inconsistent shapes or labels.
  void validate() const;
};

/// Raised by load_dataset; `kind` tells the failure classes apart.
class DatasetFormatError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kVersionMismatch, kTruncated };
  DatasetFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Smallest side length that fits the generated structures.
inline constexpr std::size_t kMinSyntheticSide = 12;

/// One ellipse (class 1) and one convex polygon per further class over a
/// background, each class drawn from its own intensity band, plus Gaussian
/// noise with standard deviation 0.05 * difficulty. Labels are rendered from
/// the same shapes that paint the image.
SegDataset gen_synthetic(std::size_t classes, std::size_t count, std::size_t height,
                         std::size_t width, std::uint64_t seed, double difficulty = 1.0,
                         std::string split = "train");

/// Intensity band [lo, hi] used for class `c` before noise.
std::pair<double, double> class_intensity_band(std::size_t c, std::size_t classes);

/// Binary layout: "L2GS", u32 version, u32 count, u16 H, W, C, classes, u64
/// seed, then per sample C*H*W little-endian f32 and H*W u8 labels.
void save_dataset(const SegDataset& ds, const std::filesystem::path& path);
/// The split name is not part of the file; it is taken from the file stem.
SegDataset load_dataset(const std::filesystem::path& path);

inline constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace l2g
