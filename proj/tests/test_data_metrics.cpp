#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "l2g/data.hpp"
#include "l2g/metrics.hpp"
#include "oracles.hpp"

using namespace l2g;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "l2g_tests";
  fs::create_directories(dir);
  return dir / name;
}

LabelMap rect(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t rh,
              std::size_t rw, std::uint8_t cls = 1) {
  LabelMap m(h * w, 0);
  for (std::size_t y = y0; y < y0 + rh; ++y)
    for (std::size_t x = x0; x < x0 + rw; ++x) m[y * w + x] = cls;
  return m;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("generator is deterministic and seeds differ") {
  const SegDataset a = gen_synthetic(3, 10, 32, 32, 7);
  const SegDataset b = gen_synthetic(3, 10, 32, 32, 7);
  const SegDataset c = gen_synthetic(3, 10, 32, 32, 8);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].labels == b.samples[i].labels);
  }
  for (const SegSample& x : a.samples)
    for (const SegSample& y : c.samples) CHECK_FALSE(x.image == y.image);
}

TEST_CASE("noise-free samples keep class intensity bands apart") {
  const SegDataset ds = gen_synthetic(4, 20, 24, 24, 3, 0.0);
  for (const SegSample& s : ds.samples) {
    for (std::size_t p = 0; p < s.labels.size(); ++p) {
      const auto [lo, hi] = class_intensity_band(s.labels[p], 4);
      CHECK(s.image[p] >= lo - 1e-6);
      CHECK(s.image[p] <= hi + 1e-6);
    }
  }
  for (std::size_t c = 0; c + 1 < 4; ++c)
    CHECK(class_intensity_band(c, 4).second < class_intensity_band(c + 1, 4).first);
}

TEST_CASE("every class is present in nearly all samples") {
  const SegDataset ds = gen_synthetic(3, 200, 32, 32, 11);
  for (std::uint8_t c = 0; c < 3; ++c) {
    std::size_t present = 0;
    for (const SegSample& s : ds.samples)
      present += std::count(s.labels.begin(), s.labels.end(), c) > 0;
    CHECK(present >= 190);
  }
  for (const SegSample& s : ds.samples)
    for (double v : s.image.data()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("generator rejects impossible requests") {
  CHECK_THROWS_AS(gen_synthetic(3, 4, 4, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic(1, 4, 32, 32, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic(3, 0, 32, 32, 1), std::invalid_argument);
}

TEST_CASE("dataset file round trip and corruption errors") {
  const fs::path path = temp_file("roundtrip.l2gs");
  const SegDataset ds = gen_synthetic(3, 5, 16, 20, 9);
  save_dataset(ds, path);
  const SegDataset back = load_dataset(path);
  CHECK(back.classes == ds.classes);
  CHECK(back.height == 16);
  CHECK(back.width == 20);
  CHECK(back.channels == 1);
  CHECK(back.seed == 9);
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.samples[i].image == ds.samples[i].image);
    CHECK(back.samples[i].labels == ds.samples[i].labels);
  }
  // Saving twice gives identical bytes.
  const fs::path again = temp_file("roundtrip2.l2gs");
  save_dataset(back, again);
  CHECK(file_bytes(path) == file_bytes(again));
  // Header size: 4 + 4 + 4 + 2 * 4 + 8.
  CHECK(file_bytes(path).size() == 28 + 5 * (16 * 20 * 4 + 16 * 20));

  auto expect_kind = [](const fs::path& p, DatasetFormatError::Kind kind, const std::string& text) {
    try {
      load_dataset(p);
      FAIL("expected a format error");
    } catch (const DatasetFormatError& e) {
      CHECK(e.kind() == kind);
      CHECK(std::string(e.what()).find(text) != std::string::npos);
    }
  };

  std::vector<char> bytes = file_bytes(path);
  const fs::path bad = temp_file("bad.l2gs");
  auto write = [&](const std::vector<char>& b) {
    std::ofstream out(bad, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  std::vector<char> magic = bytes;
  magic[1] = 'X';
  write(magic);
  expect_kind(bad, DatasetFormatError::Kind::kBadMagic, "bad magic");

  std::vector<char> version = bytes;
  version[4] = 2;
  write(version);
  expect_kind(bad, DatasetFormatError::Kind::kVersionMismatch, "version mismatch");

  std::vector<char> truncated(bytes.begin(), bytes.end() - 10);
  write(truncated);
  expect_kind(bad, DatasetFormatError::Kind::kTruncated, "sample 4");

  expect_kind(temp_file("missing.l2gs"), DatasetFormatError::Kind::kIo, "cannot open");
}

TEST_CASE("dice values") {
  const LabelMap a = rect(10, 10, 2, 2, 4, 4);
  CHECK(dice(a, a, 1) == 1.0);
  CHECK(dice(a, rect(10, 10, 6, 6, 3, 3), 1) == 0.0);
  CHECK(dice(LabelMap(100, 0), LabelMap(100, 0), 1) == 1.0);
  // |P| = |G| = 100, overlap 50.
  const LabelMap p = rect(20, 20, 0, 0, 10, 10), g = rect(20, 20, 5, 0, 10, 10);
  CHECK(dice(p, g, 1) == doctest::Approx(0.5));
  CHECK(dice(p, g, 1) == dice(g, p, 1));
  CHECK(dice(p, g, 0) == dice(g, p, 0));
  CHECK(dice(rect(8, 8, 1, 1, 3, 3), rect(8, 8, 1, 1, 3, 4), 1) < 1.0);
  CHECK_THROWS_AS(dice(LabelMap(4), LabelMap(5), 1), std::invalid_argument);
}

TEST_CASE("hausdorff values") {
  const LabelMap a = rect(12, 12, 3, 3, 4, 5);
  CHECK(*hausdorff(a, a, 12, 12, 1) == 0.0);

  LabelMap p(64, 0), g(64, 0);
  p[0] = 1;
  g[3 * 8 + 4] = 1;
  CHECK(*hausdorff(p, g, 8, 8, 1, 100.0) == doctest::Approx(5.0));

  const LabelMap r1 = rect(20, 20, 4, 4, 6, 8), r2 = rect(20, 20, 6, 4, 6, 8);
  for (double q : {50.0, 95.0, 100.0}) {
    CHECK(*hausdorff(r1, r2, 20, 20, 1, q) ==
          doctest::Approx(oracle::hausdorff_all_pairs(r1, r2, 20, 20, 1, q)).epsilon(1e-12));
  }
  CHECK(*hausdorff(r1, r2, 20, 20, 1, 100.0) == doctest::Approx(2.0));
  CHECK_FALSE(hausdorff(r1, LabelMap(400, 0), 20, 20, 1).has_value());
}

TEST_CASE("hausdorff symmetry and triangle inequality at percentile 100") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    auto random_rect = [&] {
      return rect(16, 16, rng.below(8), rng.below(8), 1 + rng.below(8), 1 + rng.below(8));
    };
    const LabelMap a = random_rect(), b = random_rect(), c = random_rect();
    const double ab = *hausdorff(a, b, 16, 16, 1, 100.0), ba = *hausdorff(b, a, 16, 16, 1, 100.0);
    CHECK(ab == ba);
    const double ac = *hausdorff(a, c, 16, 16, 1, 100.0), cb = *hausdorff(c, b, 16, 16, 1, 100.0);
    CHECK(ab <= ac + cb + 1e-12);
  }
}

TEST_CASE("percentile interpolates like numpy") {
  CHECK(percentile({1, 2, 3, 4}, 50.0) == 2.5);
  CHECK(percentile({10}, 95.0) == 10.0);
  CHECK(percentile({0, 10}, 95.0) == doctest::Approx(9.5));
  CHECK_THROWS_AS(percentile({}, 50.0), std::invalid_argument);
}

TEST_CASE("metric report aggregates foreground classes") {
  const LabelMap gt = rect(10, 10, 2, 2, 4, 4);
  LabelMap gt2 = gt;
  for (std::size_t i = 0; i < 3; ++i) gt2[i] = 2;
  const MetricReport r = evaluate_maps({gt, gt}, {gt, gt2}, 3, 10, 10);
  CHECK(r.rows.size() == 4);
  CHECK(r.class_dsc[1] == 1.0);
  // Class 2 is absent from both maps of sample 0 (DSC 1) and missed in sample 1 (DSC 0).
  CHECK(r.class_dsc[2] == 0.5);
  CHECK(r.mean_dsc == 0.75);
  CHECK(r.class_hd_defined[2] == 0);
  CHECK(std::isnan(r.class_hd[2]));
  CHECK(r.mean_hd == 0.0);
  std::ostringstream csv, table;
  r.write_csv(csv);
  r.write_table(table);
  CHECK(csv.str().rfind("sample_id,class,dsc,hd,hd_defined\n0,1,1,0,1\n", 0) == 0);
  CHECK(csv.str().find("1,2,0,,0") != std::string::npos);
  CHECK(table.str().find("undefined") != std::string::npos);
}
