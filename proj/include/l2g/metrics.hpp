#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

namespace l2g {

using LabelMap = std::vector<std::uint8_t>;

/// 2|P ∩ G| / (|P| + |G|) for the masks of class `cls`; 1 when both are empty.
double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::uint8_t cls);

/// Pixels of class `cls` with at least one 4-neighbour outside the class
/// (outside the image counts as outside). Returned as (row, col).
std::vector<std::pair<int, int>> mask_boundary(std::span<const std::uint8_t> labels,
                                               std::size_t height, std::size_t width,
                                               std::uint8_t cls);

/// Linear-interpolation percentile of `values` (q in [0, 100]).
double percentile(std::vector<double> values, double q);

/// Symmetric percentile Hausdorff distance between the class boundaries:
/// max of the two directed percentile distances, all pairs, Euclidean pixels.
/// Empty when either mask is empty.
std::optional<double> hausdorff(std::span<const std::uint8_t> pred,
                                std::span<const std::uint8_t> gt, std::size_t height,
                                std::size_t width, std::uint8_t cls, double pct = 95.0);

struct SampleMetric {
  std::size_t sample = 0;
  std::size_t cls = 0;
  double dsc = 0.0;
  std::optional<double> hd;
};

struct MetricReport {
  std::size_t classes = 0;
  double percentile = 95.0;
  std::vector<SampleMetric> rows;
  /// Indexed by class; background entries are filled but excluded from means.
  std::vector<double> class_dsc;
  std::vector<double> class_hd;               // mean over defined samples, NaN if none
  std::vector<std::size_t> class_hd_defined;  // samples contributing to class_hd
  double mean_dsc = 0.0;                      // over foreground classes
  double mean_hd = 0.0;                       // over foreground classes with a defined HD

  /// CSV: sample_id,class,dsc,hd,hd_defined
  void write_csv(std::ostream& out) const;
  /// Mean DSC, mean HD, then class-wise DSC.
  void write_table(std::ostream& out) const;
};

/// Metrics for every sample and foreground class, reduced in sample order.
MetricReport evaluate_maps(const std::vector<LabelMap>& predictions,
                           const std::vector<LabelMap>& truth, std::size_t classes,
                           std::size_t height, std::size_t width, double pct = 95.0);

}  // namespace l2g
