#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "cdiff/metrics.hpp"
#include "cdiff/rng.hpp"

using namespace cdiff;

namespace {

PointSet random_points(uint64_t seed, int count, int span) {
  Rng rng(seed);
  std::set<std::pair<int, int>> unique;
  while (static_cast<int>(unique.size()) < count)
    unique.emplace(static_cast<int>(rng.uniform_int(span)),
                   static_cast<int>(rng.uniform_int(span)));
  PointSet ps;
  ps.points.assign(unique.begin(), unique.end());
  return ps;
}

double brute_nearest(const PointSet& from, int y, int x) {
  double best = std::numeric_limits<double>::max();
  for (auto& [py, px] : from.points) {
    double d = std::sqrt(double((py - y) * (py - y) + (px - x) * (px - x)));
    best = std::min(best, d);
  }
  return best;
}

double brute_hausdorff(const PointSet& a, const PointSet& b) {
  double worst = 0.0;
  for (auto& [y, x] : a.points) worst = std::max(worst, brute_nearest(b, y, x));
  for (auto& [y, x] : b.points) worst = std::max(worst, brute_nearest(a, y, x));
  return worst;
}

double brute_chamfer(const PointSet& a, const PointSet& b) {
  double sum = 0.0;
  for (auto& [y, x] : a.points) sum += brute_nearest(b, y, x);
  for (auto& [y, x] : b.points) sum += brute_nearest(a, y, x);
  return sum;
}

double brute_f1(const PointSet& pred, const PointSet& gt, double tol) {
  size_t ph = 0, gh = 0;
  for (auto& [y, x] : pred.points)
    if (brute_nearest(gt, y, x) <= tol + 1e-12) ++ph;
  for (auto& [y, x] : gt.points)
    if (brute_nearest(pred, y, x) <= tol + 1e-12) ++gh;
  double p = double(ph) / pred.size(), r = double(gh) / gt.size();
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

PointSet translate(const PointSet& ps, int dy, int dx) {
  PointSet out;
  for (auto& [y, x] : ps.points) out.points.emplace_back(y + dy, x + dx);
  return out;
}

}  // namespace

TEST_CASE("boundary_f1 basics") {
  auto a = random_points(1, 40, 64);
  CHECK(boundary_f1(a, a, 10.0) == 1.0);

  // Line offset past the tolerance scores zero.
  PointSet line, far;
  for (int i = 0; i < 20; ++i) {
    line.points.emplace_back(5, i);
    far.points.emplace_back(5 + 4, i);  // tolerance 3, offset 4
  }
  CHECK(boundary_f1(far, line, 3.0) == 0.0);

  // Offset by one row: inside tolerance 3, outside 0.5.
  auto near = translate(line, 1, 0);
  CHECK(boundary_f1(near, line, 3.0) == 1.0);
  CHECK(boundary_f1(near, line, 0.5) == 0.0);

  PointSet empty;
  CHECK(boundary_f1(empty, empty, 3.0) == 1.0);
  CHECK(boundary_f1(empty, line, 3.0) == 0.0);
  CHECK(boundary_f1(line, empty, 3.0) == 0.0);
  CHECK_THROWS(boundary_f1(line, line, -1.0));
}

TEST_CASE("boundary_f1 matches the brute-force oracle and is tolerance-monotone") {
  for (uint64_t seed = 0; seed < 8; ++seed) {
    auto a = random_points(seed, 30 + seed * 5, 50);
    auto b = random_points(seed + 100, 25 + seed * 4, 50);
    double prev = -1.0;
    for (double tol : {0.0, 1.0, 2.5, 5.0, 10.0, 30.0}) {
      double f = boundary_f1(a, b, tol);
      CHECK(f == doctest::Approx(brute_f1(a, b, tol)).epsilon(1e-12));
      CHECK(f >= prev - 1e-12);
      prev = f;
    }
  }
}

TEST_CASE("hausdorff exact values and oracle equality") {
  auto a = random_points(3, 50, 64);
  CHECK(hausdorff(a, a) == 0.0);

  PointSet p0, p1;
  p0.points.emplace_back(0, 0);
  p1.points.emplace_back(3, 4);
  CHECK(hausdorff(p0, p1) == 5.0);

  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_points(seed * 2, 50, 80);
    auto y = random_points(seed * 2 + 1, 50, 80);
    double h = hausdorff(x, y);
    CHECK(h == brute_hausdorff(x, y));
    CHECK(h == hausdorff(y, x));  // symmetry
    // Translation invariance.
    CHECK(hausdorff(translate(x, 7, -3), translate(y, 7, -3)) == h);
  }
  CHECK_THROWS(hausdorff(PointSet{}, p0));
}

TEST_CASE("hausdorff and chamfer agree with brute force beyond the brute-force cutoff") {
  // > 256 points exercises the grid-bucket index path.
  auto big_a = random_points(55, 400, 300);
  auto big_b = random_points(56, 380, 300);
  CHECK(hausdorff(big_a, big_b) == brute_hausdorff(big_a, big_b));
  CHECK(chamfer(big_a, big_b) == doctest::Approx(brute_chamfer(big_a, big_b)).epsilon(1e-12));
}

TEST_CASE("chamfer exact values, oracle equality, variants") {
  auto a = random_points(5, 60, 64);
  CHECK(chamfer(a, a) == 0.0);

  PointSet p0, p3;
  p0.points.emplace_back(0, 0);
  p3.points.emplace_back(0, 3);
  CHECK(chamfer(p0, p3) == 6.0);  // 3 each way

  for (uint64_t seed = 20; seed < 28; ++seed) {
    auto x = random_points(seed, 40, 60);
    auto y = random_points(seed + 50, 45, 60);
    double c = chamfer(x, y);
    CHECK(c == doctest::Approx(brute_chamfer(x, y)).epsilon(1e-12));
    CHECK(c == doctest::Approx(chamfer(y, x)).epsilon(1e-12));
  }

  // Variant sanity on a fixed pair.
  PointSet u, v;
  u.points = {{0, 0}, {0, 2}};
  v.points = {{1, 0}};
  // Unsquared sums: (1 + sqrt(5)) + 1; means: that/2 + that/1.
  double s_u = 1.0 + std::sqrt(5.0), s_v = 1.0;
  CHECK(chamfer(u, v) == doctest::Approx(s_u + s_v).epsilon(1e-12));
  CHECK(chamfer(u, v, ChamferVariant::MeanUnsquared) ==
        doctest::Approx(s_u / 2 + s_v / 1).epsilon(1e-12));
  CHECK(chamfer(u, v, ChamferVariant::SumSquared) == doctest::Approx(1 + 5 + 1).epsilon(1e-12));
  CHECK(chamfer(u, v, ChamferVariant::MeanSquared) ==
        doctest::Approx(6.0 / 2 + 1.0).epsilon(1e-12));
}

TEST_CASE("t_quantile matches standard tables") {
  CHECK(std::abs(t_quantile(0.975, 11) - 2.201) <= 0.001);
  CHECK(std::abs(t_quantile(0.975, 1) - 12.706) <= 0.001);
  CHECK(std::abs(t_quantile(0.95, 5) - 2.015) <= 0.001);
  CHECK(t_quantile(0.5, 7) == 0.0);
  CHECK(t_quantile(0.025, 11) == doctest::Approx(-t_quantile(0.975, 11)).epsilon(1e-9));
  CHECK_THROWS(t_quantile(0.975, 0));
  CHECK_THROWS(t_quantile(1.0, 3));
}

TEST_CASE("t_confidence_interval") {
  std::vector<double> equal(12, 0.7);
  auto [m0, h0] = t_confidence_interval(equal, 0.95);
  CHECK(m0 == doctest::Approx(0.7));
  CHECK(h0 == 0.0);

  std::vector<double> two = {0.0, 1.0};
  auto [m1, h1] = t_confidence_interval(two, 0.95);
  CHECK(m1 == doctest::Approx(0.5));
  CHECK(h1 == doctest::Approx(12.706 * std::sqrt(0.5) / std::sqrt(2.0)).epsilon(1e-4));

  // Half-width scales as 1/sqrt(n) for fixed sample variance.
  std::vector<double> s4 = {-1, 1, -1, 1}, s16;
  for (int i = 0; i < 4; ++i) s16.insert(s16.end(), s4.begin(), s4.end());
  double hw4 = t_confidence_interval(s4, 0.95).second;
  double hw16 = t_confidence_interval(s16, 0.95).second;
  // Ratio = (t3/t15) * (sd4/sd16) * sqrt(16/4); the n-1 divisor makes
  // sd4/sd16 = sqrt((4/3)/(16/15)) = sqrt(5/4).
  double expect = t_quantile(0.975, 3) / t_quantile(0.975, 15) * std::sqrt(1.25) * 2.0;
  CHECK(hw4 / hw16 == doctest::Approx(expect).epsilon(1e-9));

  CHECK_THROWS(t_confidence_interval({1.0}, 0.95));
}

TEST_CASE("evaluate_dataset aggregates and handles empty predictions") {
  BinaryImage ring(16, 16);
  for (int i = 4; i <= 11; ++i) {
    ring.at(4, i) = ring.at(11, i) = 1;
    ring.at(i, 4) = ring.at(i, 11) = 1;
  }
  std::vector<BinaryImage> preds = {ring, BinaryImage(16, 16)};
  std::vector<BinaryImage> gts = {ring, ring};
  auto report = evaluate_dataset(preds, gts, 3.0);
  REQUIRE(report.per_image.size() == 2);
  CHECK(report.per_image[0].f1 == 1.0);
  CHECK(report.per_image[0].hausdorff == 0.0);
  CHECK(report.per_image[0].chamfer == 0.0);
  CHECK(report.per_image[1].empty_pred);
  CHECK(report.per_image[1].f1 == 0.0);
  CHECK(report.excluded_empty == 1);
  CHECK(report.mean_f1 == doctest::Approx(0.5));
  CHECK(report.mean_hausdorff == 0.0);  // empty pred excluded from distances

  CHECK_THROWS(evaluate_dataset(preds, {ring}, 3.0));
}

TEST_CASE("evaluate_dataset mean equals the hand mean") {
  Rng rng(77);
  std::vector<BinaryImage> preds, gts;
  for (int i = 0; i < 5; ++i) {
    BinaryImage p(20, 20), g(20, 20);
    for (int j = 0; j < 30; ++j) {
      p.at(rng.uniform_int(20), rng.uniform_int(20)) = 1;
      g.at(rng.uniform_int(20), rng.uniform_int(20)) = 1;
    }
    preds.push_back(p);
    gts.push_back(g);
  }
  auto report = evaluate_dataset(preds, gts, 2.0);
  double mean_f1 = 0.0;
  for (auto& r : report.per_image) mean_f1 += r.f1;
  CHECK(report.mean_f1 == doctest::Approx(mean_f1 / 5.0).epsilon(1e-12));
}

TEST_CASE("metrics report round-trips through text serialization") {
  MetricsReport r;
  r.tolerance = 3.0;
  r.n_runs = 12;
  r.excluded_empty = 1;
  r.mean_f1 = 0.85;
  r.mean_hausdorff = 4.25;
  r.mean_chamfer = 123.5;
  r.ci_f1 = 0.01;
  r.per_image.push_back({"img_0", 0.9, 3.0, 100.0, false});
  r.per_image.push_back({"img_1", 0.0, 0.0, 0.0, true});
  auto text = report_to_text(r);
  auto back = report_from_text(text);
  CHECK(back.tolerance == r.tolerance);
  CHECK(back.n_runs == r.n_runs);
  CHECK(back.excluded_empty == r.excluded_empty);
  CHECK(back.mean_f1 == r.mean_f1);
  CHECK(back.ci_f1 == r.ci_f1);
  REQUIRE(back.per_image.size() == 2);
  CHECK(back.per_image[0].id == "img_0");
  CHECK(back.per_image[0].f1 == 0.9);
  CHECK(back.per_image[1].empty_pred);
  CHECK(report_to_text(back) == text);
}
