#include "cdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cdiff {

PointSet PointSet::from_image(const BinaryImage& img) {
  PointSet ps;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      if (img.at(y, x)) ps.points.emplace_back(y, x);
  return ps;
}

namespace {

// Uniform-grid nearest-neighbor index over integer points. Queries expand
// ring by ring until the found distance is certified; falls back to brute
// force for small sets (<= 256), where both paths agree exactly because
// every candidate uses the same squared-integer arithmetic.
class GridIndex {
 public:
  explicit GridIndex(const std::vector<std::pair<int, int>>& pts) : pts_(pts) {
    brute_ = pts.size() <= 256;
    if (brute_) return;
    min_y_ = min_x_ = std::numeric_limits<int>::max();
    int max_y = std::numeric_limits<int>::min(), max_x = max_y;
    for (auto& [y, x] : pts_) {
      min_y_ = std::min(min_y_, y);
      min_x_ = std::min(min_x_, x);
      max_y = std::max(max_y, y);
      max_x = std::max(max_x, x);
    }
    cell_ = 8;
    gh_ = (max_y - min_y_) / cell_ + 1;
    gw_ = (max_x - min_x_) / cell_ + 1;
    cells_.resize(static_cast<size_t>(gh_) * gw_);
    for (size_t i = 0; i < pts_.size(); ++i) cells_[cell_of(pts_[i])].push_back(i);
  }

  // Squared Euclidean distance to the nearest indexed point.
  long long nearest_sq(int y, int x) const {
    if (brute_) {
      long long best = std::numeric_limits<long long>::max();
      for (auto& [py, px] : pts_) best = std::min(best, sq(py - y, px - x));
      return best;
    }
    int cy = std::clamp((y - min_y_) / cell_, 0, gh_ - 1);
    int cx = std::clamp((x - min_x_) / cell_, 0, gw_ - 1);
    long long best = std::numeric_limits<long long>::max();
    for (int ring = 0;; ++ring) {
      // Once a candidate is found, one extra ring certifies the minimum
      // (points in farther rings are at least ring*cell - cell away).
      if (best != std::numeric_limits<long long>::max()) {
        long long safe = static_cast<long long>(ring - 1) * cell_;
        if (safe > 0 && safe * safe >= best) return best;
      }
      bool any_cell = false;
      for (int gy = cy - ring; gy <= cy + ring; ++gy) {
        if (gy < 0 || gy >= gh_) continue;
        for (int gx = cx - ring; gx <= cx + ring; ++gx) {
          if (gx < 0 || gx >= gw_) continue;
          if (std::max(std::abs(gy - cy), std::abs(gx - cx)) != ring) continue;
          any_cell = true;
          for (size_t i : cells_[static_cast<size_t>(gy) * gw_ + gx]) {
            auto& [py, px] = pts_[i];
            best = std::min(best, sq(py - y, px - x));
          }
        }
      }
      if (!any_cell && ring > gh_ + gw_) return best;  // exhausted the grid
    }
  }

  double nearest(int y, int x) const { return std::sqrt(static_cast<double>(nearest_sq(y, x))); }

 private:
  static long long sq(long long dy, long long dx) { return dy * dy + dx * dx; }
  size_t cell_of(const std::pair<int, int>& p) const {
    int gy = (p.first - min_y_) / cell_, gx = (p.second - min_x_) / cell_;
    return static_cast<size_t>(gy) * gw_ + gx;
  }

  const std::vector<std::pair<int, int>>& pts_;
  bool brute_ = true;
  int min_y_ = 0, min_x_ = 0, gh_ = 1, gw_ = 1, cell_ = 8;
  std::vector<std::vector<size_t>> cells_;
};

}  // namespace

double boundary_f1(const PointSet& pred, const PointSet& gt, double tolerance) {
  if (tolerance < 0) throw std::invalid_argument("boundary_f1: tolerance must be >= 0");
  if (pred.empty() && gt.empty()) return 1.0;
  if (pred.empty() || gt.empty()) return 0.0;
  // Squared-integer comparison; the epsilon restores matches at exactly the
  // tolerance radius despite floating-point products.
  const double tol_sq = tolerance * tolerance + 1e-9;
  GridIndex gt_idx(gt.points), pred_idx(pred.points);
  size_t pred_hit = 0, gt_hit = 0;
  for (auto& [y, x] : pred.points)
    if (static_cast<double>(gt_idx.nearest_sq(y, x)) <= tol_sq) ++pred_hit;
  for (auto& [y, x] : gt.points)
    if (static_cast<double>(pred_idx.nearest_sq(y, x)) <= tol_sq) ++gt_hit;
  double precision = static_cast<double>(pred_hit) / pred.size();
  double recall = static_cast<double>(gt_hit) / gt.size();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double hausdorff(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("hausdorff: empty point set");
  GridIndex ia(a.points), ib(b.points);
  long long worst = 0;
  for (auto& [y, x] : a.points) worst = std::max(worst, ib.nearest_sq(y, x));
  for (auto& [y, x] : b.points) worst = std::max(worst, ia.nearest_sq(y, x));
  return std::sqrt(static_cast<double>(worst));
}

double chamfer(const PointSet& a, const PointSet& b, ChamferVariant variant) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
  GridIndex ia(a.points), ib(b.points);
  double sum_a = 0.0, sum_b = 0.0;
  const bool squared = variant == ChamferVariant::SumSquared || variant == ChamferVariant::MeanSquared;
  for (auto& [y, x] : a.points) {
    long long d2 = ib.nearest_sq(y, x);
    sum_a += squared ? static_cast<double>(d2) : std::sqrt(static_cast<double>(d2));
  }
  for (auto& [y, x] : b.points) {
    long long d2 = ia.nearest_sq(y, x);
    sum_b += squared ? static_cast<double>(d2) : std::sqrt(static_cast<double>(d2));
  }
  if (variant == ChamferVariant::MeanUnsquared || variant == ChamferVariant::MeanSquared)
    return sum_a / a.size() + sum_b / b.size();
  return sum_a + sum_b;
}

namespace {

// Regularized incomplete beta by Lentz's continued fraction.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16, kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                 b * std::log(1.0 - x);
  double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double t_cdf(double t, int df) {
  double x = df / (df + t * t);
  double p = 0.5 * inc_beta(df / 2.0, 0.5, x);
  return t > 0 ? 1.0 - p : p;
}

}  // namespace

double t_quantile(double p, int df) {
  if (df < 1) throw std::invalid_argument("t_quantile: df must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("t_quantile: p must be in (0,1)");
  if (p == 0.5) return 0.0;
  // Bisection on the CDF; the interval is widened until it brackets p.
  double lo = -1.0, hi = 1.0;
  while (t_cdf(lo, df) > p) lo *= 2.0;
  while (t_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (t_cdf(mid, df) < p)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

std::pair<double, double> t_confidence_interval(const std::vector<double>& samples,
                                                double level) {
  const size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("t_confidence_interval: need n >= 2");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("t_confidence_interval: level must be in (0,1)");
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(n);
  bool all_equal = true;
  for (double s : samples) all_equal = all_equal && s == samples.front();
  if (all_equal) return {samples.front(), 0.0};
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  double q = t_quantile(0.5 * (1.0 + level), static_cast<int>(n) - 1);
  return {mean, q * sd / std::sqrt(static_cast<double>(n))};
}

MetricsReport evaluate_dataset(const std::vector<BinaryImage>& preds,
                               const std::vector<BinaryImage>& gts, double tolerance,
                               const std::vector<std::string>* ids) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("evaluate_dataset: length mismatch");
  MetricsReport report;
  report.tolerance = tolerance;
  double sum_f1 = 0.0, sum_h = 0.0, sum_c = 0.0;
  int distance_count = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    MetricsReport::PerImage rec;
    rec.id = ids ? (*ids)[i] : std::to_string(i);
    PointSet pred = PointSet::from_image(preds[i]);
    PointSet gt = PointSet::from_image(gts[i]);
    if (pred.empty() || gt.empty()) {
      rec.empty_pred = true;
      rec.f1 = pred.empty() && gt.empty() ? 1.0 : 0.0;
      ++report.excluded_empty;
    } else {
      rec.f1 = boundary_f1(pred, gt, tolerance);
      rec.hausdorff = hausdorff(pred, gt);
      rec.chamfer = chamfer(pred, gt);
      sum_h += rec.hausdorff;
      sum_c += rec.chamfer;
      ++distance_count;
    }
    sum_f1 += rec.f1;
    report.per_image.push_back(std::move(rec));
  }
  if (!preds.empty()) report.mean_f1 = sum_f1 / static_cast<double>(preds.size());
  if (distance_count > 0) {
    report.mean_hausdorff = sum_h / distance_count;
    report.mean_chamfer = sum_c / distance_count;
  }
  return report;
}

std::string report_to_text(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "metrics_report_version: 1\n";
  out << "tolerance: " << r.tolerance << "\n";
  out << "n_runs: " << r.n_runs << "\n";
  out << "excluded_empty: " << r.excluded_empty << "\n";
  out << "mean_f1: " << r.mean_f1 << "\n";
  out << "mean_hausdorff: " << r.mean_hausdorff << "\n";
  out << "mean_chamfer: " << r.mean_chamfer << "\n";
  out << "ci_f1: " << r.ci_f1 << "\n";
  out << "ci_hausdorff: " << r.ci_hausdorff << "\n";
  out << "ci_chamfer: " << r.ci_chamfer << "\n";
  out << "images: " << r.per_image.size() << "\n";
  for (const auto& p : r.per_image)
    out << "image: " << p.id << " f1 " << p.f1 << " hausdorff " << p.hausdorff << " chamfer "
        << p.chamfer << " empty_pred " << (p.empty_pred ? 1 : 0) << "\n";
  return out.str();
}

MetricsReport report_from_text(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string key;
  int version = 0;
  in >> key >> version;
  if (key != "metrics_report_version:" || version != 1)
    throw std::runtime_error("report_from_text: unknown format");
  size_t n_images = 0;
  while (in >> key) {
    if (key == "tolerance:")
      in >> r.tolerance;
    else if (key == "n_runs:")
      in >> r.n_runs;
    else if (key == "excluded_empty:")
      in >> r.excluded_empty;
    else if (key == "mean_f1:")
      in >> r.mean_f1;
    else if (key == "mean_hausdorff:")
      in >> r.mean_hausdorff;
    else if (key == "mean_chamfer:")
      in >> r.mean_chamfer;
    else if (key == "ci_f1:")
      in >> r.ci_f1;
    else if (key == "ci_hausdorff:")
      in >> r.ci_hausdorff;
    else if (key == "ci_chamfer:")
      in >> r.ci_chamfer;
    else if (key == "images:")
      in >> n_images;
    else if (key == "image:") {
      MetricsReport::PerImage p;
      std::string tag;
      int empty = 0;
      in >> p.id >> tag >> p.f1 >> tag >> p.hausdorff >> tag >> p.chamfer >> tag >> empty;
      p.empty_pred = empty != 0;
      r.per_image.push_back(std::move(p));
    } else {
      throw std::runtime_error("report_from_text: unexpected key " + key);
    }
  }
  if (r.per_image.size() != n_images) throw std::runtime_error("report_from_text: truncated");
  return r;
}

std::string report_to_csv(const MetricsReport& r, const std::string& method,
                          const std::string& dataset) {
  std::ostringstream out;
  out.precision(10);
  out << "method,dataset,f1,hausdorff,chamfer,ci_f1,ci_hausdorff,ci_chamfer,n_runs\n";
  out << method << "," << dataset << "," << r.mean_f1 << "," << r.mean_hausdorff << ","
      << r.mean_chamfer << "," << r.ci_f1 << "," << r.ci_hausdorff << "," << r.ci_chamfer << ","
      << r.n_runs << "\n";
  return out.str();
}

}  // namespace cdiff
