#include "l2g/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace l2g {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": mask sizes differ (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::uint8_t cls) {
  require_same_size(pred.size(), gt.size(), "dice");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == cls, b = gt[i] == cls;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::pair<int, int>> mask_boundary(std::span<const std::uint8_t> labels,
                                               std::size_t height, std::size_t width,
                                               std::uint8_t cls) {
  require_same_size(labels.size(), height * width, "mask_boundary");
  const int h = static_cast<int>(height), w = static_cast<int>(width);
  auto in = [&](int y, int x) {
    return y >= 0 && x >= 0 && y < h && x < w && labels[static_cast<std::size_t>(y * w + x)] == cls;
  };
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (in(y, x) && (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1)))
        out.emplace_back(y, x);
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile: q must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::optional<double> hausdorff(std::span<const std::uint8_t> pred,
                                std::span<const std::uint8_t> gt, std::size_t height,
                                std::size_t width, std::uint8_t cls, double pct) {
  require_same_size(pred.size(), gt.size(), "hausdorff");
  const auto a = mask_boundary(pred, height, width, cls);
  const auto b = mask_boundary(gt, height, width, cls);
  if (a.empty() || b.empty()) return std::nullopt;
  auto directed = [](const auto& from, const auto& to) {
    std::vector<double> d;
    d.reserve(from.size());
    for (const auto& [y0, x0] : from) {
      int best = std::numeric_limits<int>::max();
      for (const auto& [y1, x1] : to) {
        const int dy = y0 - y1, dx = x0 - x1;
        best = std::min(best, dy * dy + dx * dx);
      }
      d.push_back(std::sqrt(static_cast<double>(best)));
    }
    return d;
  };
  return std::max(percentile(directed(a, b), pct), percentile(directed(b, a), pct));
}

MetricReport evaluate_maps(const std::vector<LabelMap>& predictions,
                           const std::vector<LabelMap>& truth, std::size_t classes,
                           std::size_t height, std::size_t width, double pct) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("evaluate: prediction and truth counts differ");
  }
  if (classes < 2) throw std::invalid_argument("evaluate: need at least 2 classes");
  MetricReport r;
  r.classes = classes;
  r.percentile = pct;
  r.class_dsc.assign(classes, 0.0);
  r.class_hd.assign(classes, 0.0);
  r.class_hd_defined.assign(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t c = 1; c < classes; ++c) {
      const auto cls = static_cast<std::uint8_t>(c);
      SampleMetric m{i, c, dice(predictions[i], truth[i], cls),
                     hausdorff(predictions[i], truth[i], height, width, cls, pct)};
      r.class_dsc[c] += m.dsc;
      if (m.hd) {
        r.class_hd[c] += *m.hd;
        ++r.class_hd_defined[c];
      }
      r.rows.push_back(m);
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(truth.size(), 1));
  std::size_t hd_classes = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    r.class_dsc[c] /= n;
    r.mean_dsc += r.class_dsc[c];
    if (r.class_hd_defined[c] > 0) {
      r.class_hd[c] /= static_cast<double>(r.class_hd_defined[c]);
      r.mean_hd += r.class_hd[c];
      ++hd_classes;
    } else {
      r.class_hd[c] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  r.class_dsc[0] = std::numeric_limits<double>::quiet_NaN();
  r.class_hd[0] = std::numeric_limits<double>::quiet_NaN();
  r.mean_dsc /= static_cast<double>(classes - 1);
  r.mean_hd = hd_classes ? r.mean_hd / static_cast<double>(hd_classes)
                         : std::numeric_limits<double>::quiet_NaN();
  return r;
}

void MetricReport::write_csv(std::ostream& out) const {
  out << "sample_id,class,dsc,hd,hd_defined\n";
  out << std::setprecision(17);
  for (const SampleMetric& m : rows) {
    out << m.sample << ',' << m.cls << ',' << m.dsc << ',';
    if (m.hd) out << *m.hd << ",1\n";
    else out << ",0\n";
  }
}

void MetricReport::write_table(std::ostream& out) const {
  auto cell = [&](double v) {
    std::ostringstream s;
    if (std::isnan(v)) s << "undef";
    else s << std::fixed << std::setprecision(4) << v;
    return s.str();
  };
  out << std::left << std::setw(10) << "Mean DSC" << std::setw(10) << "Mean HD";
  for (std::size_t c = 1; c < classes; ++c) out << std::setw(10) << ("class " + std::to_string(c));
  out << "\n" << std::setw(10) << cell(mean_dsc) << std::setw(10) << cell(mean_hd);
  for (std::size_t c = 1; c < classes; ++c) out << std::setw(10) << cell(class_dsc[c]);
  out << "\n";
  for (std::size_t c = 1; c < classes; ++c) {
    const std::size_t total = rows.size() / (classes - 1);
    if (class_hd_defined[c] < total) {
      out << "note: class " << c << " HD undefined on " << (total - class_hd_defined[c]) << " of "
          << total << " samples (excluded from means)\n";
    }
  }
}

}  // namespace l2g
