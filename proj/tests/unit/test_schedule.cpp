#include <doctest.h>

#include <cmath>
#include <vector>

#include "cdiff/schedule.hpp"

using namespace cdiff;

namespace {

// Independent dense matrix product used as the oracle for cumulative
// transitions.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int n) {
  std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += a[i * n + k] * b[k * n + j];
      c[i * n + j] = s;
    }
  return c;
}

}  // namespace

TEST_CASE("linear_beta_schedule endpoints and interpolation") {
  auto s = linear_beta_schedule(100, 1e-4, 0.02);
  CHECK(s.T == 100);
  CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.beta(100) == doctest::Approx(0.02).epsilon(1e-12));

  auto single = linear_beta_schedule(1, 0.5, 0.5);
  REQUIRE(single.betas.size() == 1);
  CHECK(single.betas[0] == 0.5);

  auto three = linear_beta_schedule(3, 0.1, 0.3);
  CHECK(three.beta(1) == doctest::Approx(0.1));
  CHECK(three.beta(2) == doctest::Approx(0.2));
  CHECK(three.beta(3) == doctest::Approx(0.3));
}

TEST_CASE("linear_beta_schedule rejects bad arguments") {
  CHECK_THROWS(linear_beta_schedule(0, 1e-4, 0.02));
  CHECK_THROWS(linear_beta_schedule(10, 0.0, 0.02));
  CHECK_THROWS(linear_beta_schedule(10, 1e-4, 1.0));
  CHECK_THROWS(linear_beta_schedule(10, 0.3, 0.1));
}

TEST_CASE("transition_matrix block form") {
  auto q = transition_matrix(0.5, 2, 1);
  CHECK(q.at(0, 0) == 0.5);
  CHECK(q.at(0, 1) == 0.5);
  CHECK(q.at(1, 0) == 0.0);
  CHECK(q.at(1, 1) == 1.0);

  auto q3 = transition_matrix(0.02, 3, 2);
  CHECK(q3.at(0, 0) == doctest::Approx(0.98).epsilon(1e-15));
  CHECK(q3.at(0, 1) == 0.0);
  CHECK(q3.at(0, 2) == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(q3.at(1, 1) == doctest::Approx(0.98).epsilon(1e-15));
  CHECK(q3.at(2, 2) == 1.0);
}

TEST_CASE("transition_matrix rows sum to 1 exactly") {
  for (double beta : {0.5, 0.25, 0.02, 1e-4, 0.9999, 0.613}) {
    auto q = transition_matrix(beta, 5, 4);
    for (int i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 5; ++j) sum += q.at(i, j);
      CHECK(sum == 1.0);
    }
  }
}

TEST_CASE("transition_matrix rejects degenerate inputs") {
  CHECK_THROWS(transition_matrix(0.5, 1, 0));
  CHECK_THROWS(transition_matrix(0.0, 3, 2));
  CHECK_THROWS(transition_matrix(1.0, 3, 2));
  CHECK_THROWS(transition_matrix(0.5, 3, 3));
}

TEST_CASE("cumulative_transition base case and hand product") {
  auto s = linear_beta_schedule(2, 0.5, 0.5);
  auto q1 = cumulative_transition(s, 1, 2);
  auto single = transition_matrix(0.5, 2, 1);
  CHECK(q1.entries == single.entries);

  // Hand-multiplied: [[0.5,0.5],[0,1]]^2 = [[0.25,0.75],[0,1]].
  auto q2 = cumulative_transition(s, 2, 2);
  CHECK(q2.at(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(q2.at(0, 1) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(q2.at(1, 0) == 0.0);
  CHECK(q2.at(1, 1) == 1.0);

  CHECK_THROWS(cumulative_transition(s, 0, 2));
  CHECK_THROWS(cumulative_transition(s, 3, 2));
}

TEST_CASE("cumulative_transition equals explicit product and closed form") {
  auto s = linear_beta_schedule(5, 0.1, 0.4);
  const int n = 4;
  std::vector<double> prod = transition_matrix(s.beta(1), n, n - 1).entries;
  for (int t = 2; t <= 5; ++t) {
    prod = matmul_oracle(prod, transition_matrix(s.beta(t), n, n - 1).entries, n);
    auto qbar = cumulative_transition(s, t, n);
    double keep = 1.0;
    for (int u = 1; u <= t; ++u) keep *= 1.0 - s.beta(u);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        CHECK(qbar.at(i, j) == doctest::Approx(prod[i * n + j]).epsilon(1e-13));
        if (i != n - 1 && i == j)
          CHECK(qbar.at(i, j) == doctest::Approx(keep).epsilon(1e-10));
      }
  }
}

TEST_CASE("cumulative transitions stay row-stochastic out to T=1000") {
  auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  for (int n : {2, 8}) {
    auto qbars = all_cumulative_transitions(s, n);
    for (int t : {1, 10, 100, 500, 1000}) {
      const auto& q = qbars[t - 1];
      for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
          sum += q.at(i, j);
          CHECK(q.at(i, j) >= 0.0);
          CHECK(q.at(i, j) <= 1.0);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }
}
