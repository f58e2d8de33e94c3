#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tfrd/error.hpp"

namespace tfrd {

/// A predicted map in [0, 1] and its binary ground truth, both row-major
/// height x width.
struct EvalPair {
  std::vector<double> pred;
  std::vector<double> gt;
  std::size_t height = 0;
  std::size_t width = 0;

  void validate() const {
    if (height == 0 || width == 0 || pred.size() != height * width || gt.size() != height * width) {
      throw ShapeError("eval pair: prediction (" + std::to_string(pred.size()) + ") and ground truth (" +
                       std::to_string(gt.size()) + ") must both hold " + std::to_string(height) + "x" +
                       std::to_string(width) + " values");
    }
    for (double s : gt) {
      if (s != 0.0 && s != 1.0) throw UsageError("ground truth must be strictly binary");
    }
  }
};

inline constexpr double kFBeta2 = 0.3;
inline constexpr double kStructureAlpha = 0.5;
// MATLAB eps, as used by the reference implementations of S_m and E_m.
inline constexpr double kMetricEps = 2.2204e-16;

inline double mae(const EvalPair& p) {
  p.validate();
  double total = 0;
  for (std::size_t i = 0; i < p.pred.size(); ++i) total += std::abs(p.pred[i] - p.gt[i]);
  return total / static_cast<double>(p.pred.size());
}

inline double adaptive_threshold(std::span<const double> pred) {
  double mean = std::accumulate(pred.begin(), pred.end(), 0.0) / static_cast<double>(pred.size());
  return std::min(2.0 * mean, 1.0);
}

/// Binary map at the adaptive threshold. Pixels with value 0 never count as
/// foreground, so an all-zero prediction yields an empty map.
inline std::vector<double> adaptive_binarize(std::span<const double> pred) {
  const double tau = adaptive_threshold(pred);
  std::vector<double> b(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) b[i] = (pred[i] >= tau && pred[i] > 0.0) ? 1.0 : 0.0;
  return b;
}

inline double f_measure_adaptive(const EvalPair& p) {
  p.validate();
  auto b = adaptive_binarize(p.pred);
  double tp = 0, predicted = 0, positive = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    tp += b[i] * p.gt[i];
    predicted += b[i];
    positive += p.gt[i];
  }
  const double precision = predicted > 0 ? tp / predicted : 0.0;
  const double recall = positive > 0 ? tp / positive : 0.0;
  const double denom = kFBeta2 * precision + recall;
  return denom > 0 ? (1.0 + kFBeta2) * precision * recall / denom : 0.0;
}

namespace detail {

struct Block {
  std::size_t row0, row1, col0, col1;
  std::size_t area() const { return (row1 - row0) * (col1 - col0); }
};

// Structural similarity of one block (population statistics).
inline double block_ssim(const EvalPair& p, const Block& b) {
  const double n = static_cast<double>(b.area());
  double mx = 0, my = 0;
  for (std::size_t r = b.row0; r < b.row1; ++r)
    for (std::size_t c = b.col0; c < b.col1; ++c) {
      mx += p.pred[r * p.width + c];
      my += p.gt[r * p.width + c];
    }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t r = b.row0; r < b.row1; ++r)
    for (std::size_t c = b.col0; c < b.col1; ++c) {
      const double dx = p.pred[r * p.width + c] - mx;
      const double dy = p.gt[r * p.width + c] - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  vx /= n;
  vy /= n;
  cxy /= n;
  const double alpha = 4.0 * mx * my * cxy;
  const double beta = (mx * mx + my * my) * (vx + vy);
  if (alpha != 0) return alpha / (beta + kMetricEps);
  return beta == 0 ? 1.0 : 0.0;
}

inline double region_similarity(const EvalPair& p) {
  double total = 0, sx = 0, sy = 0;
  for (std::size_t r = 0; r < p.height; ++r)
    for (std::size_t c = 0; c < p.width; ++c) {
      const double g = p.gt[r * p.width + c];
      total += g;
      sx += g * static_cast<double>(c + 1);
      sy += g * static_cast<double>(r + 1);
    }
  // 1-based rounded centroid; it is also the exclusive end of the left/top blocks.
  std::size_t cx, cy;
  if (total == 0) {
    cx = static_cast<std::size_t>(std::lround(static_cast<double>(p.width) / 2.0));
    cy = static_cast<std::size_t>(std::lround(static_cast<double>(p.height) / 2.0));
  } else {
    cx = static_cast<std::size_t>(std::lround(sx / total));
    cy = static_cast<std::size_t>(std::lround(sy / total));
  }
  cx = std::min(cx, p.width);
  cy = std::min(cy, p.height);
  const Block blocks[4] = {{0, cy, 0, cx}, {0, cy, cx, p.width}, {cy, p.height, 0, cx}, {cy, p.height, cx, p.width}};
  const double area = static_cast<double>(p.height * p.width);
  double q = 0;
  for (const auto& b : blocks) {
    if (b.area() == 0) continue;
    q += static_cast<double>(b.area()) / area * block_ssim(p, b);
  }
  return q;
}

inline double object_score(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / n);
  return 2.0 * mean / (mean * mean + 1.0 + sigma + kMetricEps);
}

inline double object_similarity(const EvalPair& p) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < p.pred.size(); ++i) {
    if (p.gt[i] == 1.0) {
      fg.push_back(p.pred[i]);
    } else {
      bg.push_back(1.0 - p.pred[i]);
    }
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(p.pred.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

}  // namespace detail

/// Structure measure: 0.5 * object similarity + 0.5 * region similarity.
inline double s_measure(const EvalPair& p) {
  p.validate();
  const double n = static_cast<double>(p.gt.size());
  const double gt_mean = std::accumulate(p.gt.begin(), p.gt.end(), 0.0) / n;
  const double pred_mean = std::accumulate(p.pred.begin(), p.pred.end(), 0.0) / n;
  if (gt_mean == 0.0) return 1.0 - pred_mean;
  if (gt_mean == 1.0) return pred_mean;
  const double q = kStructureAlpha * detail::object_similarity(p) + (1.0 - kStructureAlpha) * detail::region_similarity(p);
  return std::max(q, 0.0);
}

/// Enhanced-alignment measure on the adaptive-threshold binary map.
inline double e_measure(const EvalPair& p) {
  p.validate();
  auto b = adaptive_binarize(p.pred);
  const double n = static_cast<double>(b.size());
  const double gt_sum = std::accumulate(p.gt.begin(), p.gt.end(), 0.0);
  double total = 0;
  if (gt_sum == 0) {
    for (double v : b) total += 1.0 - v;
  } else if (gt_sum == n) {
    for (double v : b) total += v;
  } else {
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    const double mg = gt_sum / n;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double ab = b[i] - mb;
      const double ag = p.gt[i] - mg;
      const double align = 2.0 * ab * ag / (ab * ab + ag * ag + kMetricEps);
      total += (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return total / n;
}

struct MetricReport {
  std::string dataset;
  double mae = 0;
  double fm = 0;
  double sm = 0;
  double em = 0;
  std::size_t images = 0;
};

/// Per-image metrics averaged in input order.
inline MetricReport evaluate_dataset(const std::vector<EvalPair>& pairs, std::string dataset = "dataset") {
  if (pairs.empty()) throw UsageError("evaluate_dataset: no images");
  MetricReport r;
  r.dataset = std::move(dataset);
  for (const auto& p : pairs) {
    r.mae += mae(p);
    r.fm += f_measure_adaptive(p);
    r.sm += s_measure(p);
    r.em += e_measure(p);
  }
  const double n = static_cast<double>(pairs.size());
  r.mae /= n;
  r.fm /= n;
  r.sm /= n;
  r.em /= n;
  r.images = pairs.size();
  return r;
}

/// "MAE F_m S_m E_m" with three decimals.
inline std::string format_metrics(const MetricReport& r) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f %.3f %.3f %.3f", r.mae, r.fm, r.sm, r.em);
  return buf;
}

inline std::string render_table(const std::vector<MetricReport>& rows) {
  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.dataset.size());
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-*s  %5s  %5s  %5s  %5s\n", static_cast<int>(width), "dataset", "MAE", "F_m",
                "S_m", "E_m");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %.3f  %.3f  %.3f  %.3f\n", static_cast<int>(width), r.dataset.c_str(),
                  r.mae, r.fm, r.sm, r.em);
    os << buf;
  }
  return os.str();
}

inline std::string render_csv(const std::vector<MetricReport>& rows) {
  std::ostringstream os;
  os << "dataset,mae,fm,sm,em\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f\n", r.dataset.c_str(), r.mae, r.fm, r.sm, r.em);
    os << buf;
  }
  return os.str();
}

}  // namespace tfrd
