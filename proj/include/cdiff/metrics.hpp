#pragma once

#include <string>
#include <vector>

#include "cdiff/image.hpp"

namespace cdiff {

// Deduplicated integer point set. Distance metrics require nonempty sets.
struct PointSet {
  std::vector<std::pair<int, int>> points;  // (row, col)

  static PointSet from_image(const BinaryImage& img);
  bool empty() const { return points.empty(); }
  size_t size() const { return points.size(); }
};

enum class ChamferVariant { SumUnsquared, MeanUnsquared, SumSquared, MeanSquared };

// Tolerance-matched boundary F1: precision over pred points within
// `tolerance` of some gt point, recall symmetric. Both empty -> 1, exactly
// one empty -> 0.
double boundary_f1(const PointSet& pred, const PointSet& gt, double tolerance);

// Exact symmetric Hausdorff distance (Euclidean, no percentile).
double hausdorff(const PointSet& a, const PointSet& b);

// Symmetric accumulation of nearest-neighbor Euclidean distances. The
// default sums unsquared distances in both directions.
double chamfer(const PointSet& a, const PointSet& b,
               ChamferVariant variant = ChamferVariant::SumUnsquared);

// Student-t quantile for probability p (upper-tail inverse CDF at p), df >= 1.
// Computed by inverting the regularized incomplete beta CDF; accurate to
// well under 1e-6.
double t_quantile(double p, int df);

// (mean, half_width) with half_width = t_{(1+level)/2, n-1} * s / sqrt(n).
std::pair<double, double> t_confidence_interval(const std::vector<double>& samples, double level);

struct MetricsReport {
  struct PerImage {
    std::string id;
    double f1 = 0.0;
    double hausdorff = 0.0;
    double chamfer = 0.0;
    bool empty_pred = false;
  };
  std::vector<PerImage> per_image;
  double mean_f1 = 0.0;
  double mean_hausdorff = 0.0;
  double mean_chamfer = 0.0;
  // CI half-widths across runs; populated only when n_runs >= 2.
  double ci_f1 = 0.0;
  double ci_hausdorff = 0.0;
  double ci_chamfer = 0.0;
  int n_runs = 1;
  int excluded_empty = 0;  // empty predictions, excluded from distance means
  double tolerance = 10.0;
};

// Per-image F1/Hausdorff/Chamfer from binary contour rasters. Empty
// predictions score F1 0 and are excluded from the distance means.
MetricsReport evaluate_dataset(const std::vector<BinaryImage>& preds,
                               const std::vector<BinaryImage>& gts, double tolerance,
                               const std::vector<std::string>* ids = nullptr);

// Field-per-line serialization; parse reverses format exactly.
std::string report_to_text(const MetricsReport& r);
MetricsReport report_from_text(const std::string& text);
// One CSV row per image plus an aggregate row, matching the evaluation
// table columns (method, dataset, f1, hausdorff, chamfer, ci_*).
std::string report_to_csv(const MetricsReport& r, const std::string& method,
                          const std::string& dataset);

}  // namespace cdiff
