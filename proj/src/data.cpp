#include "l2g/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace l2g {

void SegDataset::validate() const {
  if (classes < 2) throw std::invalid_argument("dataset: need at least 2 classes");
  const std::size_t pixels = height * width;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SegSample& s = samples[i];
    if (s.image.shape() != Shape{channels, height, width} || s.labels.size() != pixels) {
      throw std::invalid_argument("dataset: sample " + std::to_string(i) + " has shape " +
                                  shape_string(s.image.shape()) + ", expected " +
                                  shape_string({channels, height, width}));
    }
    for (std::uint8_t l : s.labels) {
      if (l >= classes) {
        throw std::invalid_argument("dataset: sample " + std::to_string(i) + " has label " +
                                    std::to_string(l) + " outside [0, " + std::to_string(classes) +
                                    ")");
      }
    }
  }
}

std::pair<double, double> class_intensity_band(std::size_t c, std::size_t classes) {
  const double k = static_cast<double>(classes);
  return {(static_cast<double>(c) + 0.15) / k, (static_cast<double>(c) + 0.85) / k};
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle;
  bool contains(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dy = y - cy, dx = x - cx;
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

struct Polygon {
  std::vector<std::pair<double, double>> vertices;  // (y, x), counter-clockwise in (x, y)
  bool contains(double y, double x) const {
    const std::size_t m = vertices.size();
    for (std::size_t k = 0; k < m; ++k) {
      const auto [y0, x0] = vertices[k];
      const auto [y1, x1] = vertices[(k + 1) % m];
      if ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) < 0.0) return false;
    }
    return true;
  }
};

Polygon random_polygon(Rng& rng, double cy, double cx, double radius) {
  const std::size_t m = 3 + rng.below(4);
  std::vector<double> angles(m);
  for (double& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::sort(angles.begin(), angles.end());
  Polygon p;
  for (double a : angles) {
    const double r = radius * rng.uniform(0.7, 1.0);
    p.vertices.emplace_back(cy + r * std::sin(a), cx + r * std::cos(a));
  }
  return p;
}

// Rejection-samples shapes until every foreground class keeps a visible area.
std::vector<std::uint8_t> render_labels(Rng& rng, std::size_t classes, std::size_t h,
                                        std::size_t w) {
  const double side = static_cast<double>(std::min(h, w));
  const double hd = static_cast<double>(h), wd = static_cast<double>(w);
  const std::size_t min_pixels = std::max<std::size_t>(4, h * w / 100);
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<std::uint8_t> labels(h * w, 0);
    Ellipse e{rng.uniform(0.3, 0.7) * hd, rng.uniform(0.3, 0.7) * wd,
              rng.uniform(0.12, 0.25) * side, rng.uniform(0.12, 0.25) * side,
              rng.uniform(0.0, std::numbers::pi)};
    std::vector<Polygon> polys;
    for (std::size_t c = 2; c < classes; ++c) {
      polys.push_back(random_polygon(rng, rng.uniform(0.2, 0.8) * hd, rng.uniform(0.2, 0.8) * wd,
                                     rng.uniform(0.12, 0.22) * side));
    }
    std::vector<std::size_t> area(classes, 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
        std::uint8_t l = e.contains(py, px) ? 1 : 0;
        for (std::size_t k = 0; k < polys.size(); ++k)
          if (polys[k].contains(py, px)) l = static_cast<std::uint8_t>(k + 2);
        labels[y * w + x] = l;
        ++area[l];
      }
    if (std::all_of(area.begin() + 1, area.end(), [&](std::size_t a) { return a >= min_pixels; }))
      return labels;
  }
  throw std::invalid_argument("gen_synthetic: could not fit " + std::to_string(classes - 1) +
                              " structures into " + std::to_string(h) + "x" + std::to_string(w));
}

}  // namespace

SegDataset gen_synthetic(std::size_t classes, std::size_t count, std::size_t height,
                         std::size_t width, std::uint64_t seed, double difficulty,
                         std::string split) {
  if (classes < 2 || classes > 255) throw std::invalid_argument("gen_synthetic: classes must be in [2, 255]");
  if (count < 1) throw std::invalid_argument("gen_synthetic: count must be >= 1");
  if (!(difficulty >= 0.0)) throw std::invalid_argument("gen_synthetic: difficulty must be >= 0");
  if (height < kMinSyntheticSide || width < kMinSyntheticSide || height > 65535 || width > 65535) {
    throw std::invalid_argument("gen_synthetic: " + std::to_string(height) + "x" +
                                std::to_string(width) + " is too small for the shapes (minimum " +
                                std::to_string(kMinSyntheticSide) + ")");
  }
  SegDataset ds;
  ds.classes = classes;
  ds.height = height;
  ds.width = width;
  ds.channels = 1;
  ds.split = std::move(split);
  ds.seed = seed;
  Rng rng(seed);
  const double noise = 0.05 * difficulty;
  for (std::size_t i = 0; i < count; ++i) {
    SegSample s;
    s.labels = render_labels(rng, classes, height, width);
    std::vector<double> level(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      const auto [lo, hi] = class_intensity_band(c, classes);
      level[c] = rng.uniform(lo, hi);
    }
    s.image = Tensor({1, height, width});
    for (std::size_t p = 0; p < height * width; ++p) {
      double v = level[s.labels[p]];
      if (noise > 0.0) v += noise * rng.normal();
      // Stored as f32 on disk; keep the in-memory value float-exact.
      s.image[p] = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

namespace {

constexpr std::array<char, 4> kMagic = {'L', '2', 'G', 'S'};

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f32(std::ostream& out, float f) { put(out, std::bit_cast<std::uint32_t>(f)); }

template <typename T>
bool get(std::istream& in, T& v) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(bytes[b]) << (8 * b);
  return true;
}

}  // namespace

void save_dataset(const SegDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  if (ds.height > 65535 || ds.width > 65535 || ds.channels > 65535 || ds.classes > 255) {
    throw std::invalid_argument("save_dataset: dimensions exceed the file format");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.samples.size()));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(ds.height));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(ds.width));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(ds.channels));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(ds.classes));
  put<std::uint64_t>(out, ds.seed);
  for (const SegSample& s : ds.samples) {
    for (double v : s.image.data()) put_f32(out, static_cast<float>(v));
    out.write(reinterpret_cast<const char*>(s.labels.data()),
              static_cast<std::streamsize>(s.labels.size()));
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path.string());
}

SegDataset load_dataset(const std::filesystem::path& path) {
  using Kind = DatasetFormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetFormatError(Kind::kIo, "load_dataset: cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DatasetFormatError(Kind::kBadMagic, "load_dataset: bad magic in " + path.string());
  }
  std::uint32_t version = 0, count = 0;
  std::uint16_t h = 0, w = 0, c = 0, classes = 0;
  std::uint64_t seed = 0;
  if (!get(in, version)) throw DatasetFormatError(Kind::kTruncated, "load_dataset: truncated file (header)");
  if (version != kDatasetVersion) {
    throw DatasetFormatError(Kind::kVersionMismatch,
                             "load_dataset: version mismatch (file " + std::to_string(version) +
                                 ", supported " + std::to_string(kDatasetVersion) + ")");
  }
  if (!get(in, count) || !get(in, h) || !get(in, w) || !get(in, c) || !get(in, classes) ||
      !get(in, seed)) {
    throw DatasetFormatError(Kind::kTruncated, "load_dataset: truncated file (header)");
  }
  SegDataset ds;
  ds.classes = classes;
  ds.height = h;
  ds.width = w;
  ds.channels = c;
  ds.seed = seed;
  ds.split = path.stem().string();
  const std::size_t values = std::size_t{c} * h * w, pixels = std::size_t{h} * w;
  std::vector<unsigned char> buf(values * 4);
  for (std::uint32_t i = 0; i < count; ++i) {
    SegSample s;
    s.image = Tensor({c, h, w});
    s.labels.resize(pixels);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())) ||
        !in.read(reinterpret_cast<char*>(s.labels.data()), static_cast<std::streamsize>(pixels))) {
      throw DatasetFormatError(Kind::kTruncated, "load_dataset: truncated file at sample " +
                                                     std::to_string(i) + " of " +
                                                     std::to_string(count));
    }
    for (std::size_t k = 0; k < values; ++k) {
      std::uint32_t bits = 0;
      for (std::size_t b = 0; b < 4; ++b) bits |= std::uint32_t{buf[4 * k + b]} << (8 * b);
      s.image[k] = static_cast<double>(std::bit_cast<float>(bits));
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace l2g
