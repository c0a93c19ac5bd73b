#pragma once

// Metamorphic-relation acceptance checks: label equality for classifiers,
// mAP drop with IoU matching for detectors.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amt/error.hpp"
#include "amt/image.hpp"

namespace amt {

enum class Verdict { pass, violated };

inline std::string_view to_string(Verdict v) { return v == Verdict::pass ? "pass" : "violated"; }

inline Verdict parse_verdict(std::string_view s) {
  if (s == "pass") return Verdict::pass;
  if (s == "violated") return Verdict::violated;
  throw InvalidInput("unknown verdict: " + std::string(s));
}

struct Detection {
  BoundingBox box;
  int class_id = 0;
  double score = 1.0;

  bool operator==(const Detection&) const = default;
};

struct GroundTruth {
  BoundingBox box;
  int class_id = 0;

  bool operator==(const GroundTruth&) const = default;
};

/// IoU thresholds 0.50, 0.55, ..., 0.95 (computed as i/20 so 0.6 is exact)
/// and the absolute mAP drop that counts as a violation.
struct MapConfig {
  std::vector<double> iou_thresholds = [] {
    std::vector<double> t;
    for (int i = 10; i <= 19; ++i) t.push_back(i / 20.0);
    return t;
  }();
  double drop_threshold = 0.05;
};

/// Violated iff the follow-up label differs from the source label. The
/// ground-truth label plays no part.
inline Verdict classification_verdict(int source_label, int followup_label) {
  return source_label == followup_label ? Verdict::pass : Verdict::violated;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Area under the precision/recall step curve after greedy score-ordered
/// matching. Each prediction takes the unmatched same-class truth with the
/// highest IoU at or above `threshold`. Both lists empty scores 1, exactly
/// one empty scores 0.
inline double average_precision(std::span<const Detection> preds, std::span<const GroundTruth> truths,
                                double threshold) {
  if (preds.empty() && truths.empty()) return 1.0;
  if (preds.empty() || truths.empty()) return 0.0;

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });

  std::vector<bool> used(truths.size(), false);
  const auto n_truths = static_cast<double>(truths.size());
  double ap = 0.0;
  double true_pos = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Detection& d = preds[order[rank]];
    double best = -1.0;
    std::size_t best_idx = truths.size();
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (used[t] || truths[t].class_id != d.class_id) continue;
      const double v = iou(d.box, truths[t].box);
      if (v >= threshold && v > best) {
        best = v;
        best_idx = t;
      }
    }
    if (best_idx == truths.size()) continue;
    used[best_idx] = true;
    true_pos += 1.0;
    // recall rises by 1/n_truths at this rank.
    ap += (true_pos / static_cast<double>(rank + 1)) / n_truths;
  }
  return ap;
}

inline double map_score(std::span<const Detection> preds, std::span<const GroundTruth> truths,
                        const MapConfig& config = {}) {
  if (config.iou_thresholds.empty()) throw InvalidInput("map_score: no IoU thresholds");
  double sum = 0.0;
  for (double t : config.iou_thresholds) sum += average_precision(preds, truths, t);
  return sum / static_cast<double>(config.iou_thresholds.size());
}

/// Violated iff the follow-up mAP falls more than the drop threshold below
/// the source mAP.
inline Verdict detection_verdict(double source_map, double followup_map, const MapConfig& config = {}) {
  return followup_map < source_map - config.drop_threshold ? Verdict::violated : Verdict::pass;
}

}  // namespace amt
