#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <map>

#include "cdiff/diffusion.hpp"
#include "cdiff/infer.hpp"
#include "cdiff/rng.hpp"

using namespace cdiff;

namespace {

CategoricalGrid one_hot_grid(int h, int w, int n, int cat) {
  CategoricalGrid g(h, w, n);
  for (size_t p = 0; p < g.pixels(); ++p) g.v[p * n + cat] = 1.0;
  return g;
}

TransitionMatrix identity_matrix(int n) {
  TransitionMatrix q;
  q.n = n;
  q.absorbing_index = n - 1;
  q.entries.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) q.at(i, i) = 1.0;
  return q;
}

}  // namespace

TEST_CASE("forward_marginal row lookup") {
  auto x0 = one_hot_grid(2, 2, 3, 0);
  auto qbar = identity_matrix(3);
  auto m = forward_marginal(x0, qbar);
  CHECK(m.v == x0.v);

  TransitionMatrix q2;
  q2.n = 2;
  q2.absorbing_index = 1;
  q2.entries = {0.25, 0.75, 0.0, 1.0};
  auto x0b = one_hot_grid(1, 1, 2, 0);
  auto mb = forward_marginal(x0b, q2);
  CHECK(mb.at(0, 0, 0) == 0.25);
  CHECK(mb.at(0, 0, 1) == 0.75);

  // Oracle: explicit vector-matrix product for a soft x0.
  CategoricalGrid soft(1, 1, 2);
  soft.at(0, 0, 0) = 0.3;
  soft.at(0, 0, 1) = 0.7;
  auto ms = forward_marginal(soft, q2);
  CHECK(ms.at(0, 0, 0) == doctest::Approx(0.3 * 0.25).epsilon(1e-15));
  CHECK(ms.at(0, 0, 1) == doctest::Approx(0.3 * 0.75 + 0.7).epsilon(1e-15));
}

TEST_CASE("forward_marginal matches Monte-Carlo frequencies") {
  auto s = linear_beta_schedule(50, 1e-3, 0.1);
  auto qbar = cumulative_transition(s, 30, 4);
  auto x0 = one_hot_grid(100, 100, 4, 1);
  auto marginal = forward_marginal(x0, qbar);
  auto drawn = sample_categorical(marginal, 99);
  double freq[4] = {0, 0, 0, 0};
  for (size_t p = 0; p < drawn.pixels(); ++p)
    for (int c = 0; c < 4; ++c) freq[c] += drawn.v[p * 4 + c];
  for (int c = 0; c < 4; ++c) {
    freq[c] /= static_cast<double>(drawn.pixels());
    CHECK(std::abs(freq[c] - marginal.at(0, 0, c)) <= 0.02);
  }
}

TEST_CASE("forward_marginal rejects shape mismatch") {
  auto x0 = one_hot_grid(2, 2, 3, 0);
  CHECK_THROWS(forward_marginal(x0, identity_matrix(4)));
}

TEST_CASE("gumbel_softmax keeps one-hot argmax and is deterministic") {
  auto x0 = one_hot_grid(20, 20, 5, 2);
  auto a = gumbel_softmax(x0, 1.0, 7);
  auto b = gumbel_softmax(x0, 1.0, 7);
  CHECK(a.v == b.v);
  for (size_t p = 0; p < a.pixels(); ++p)
    CHECK(argmax_pixel(a.v.data() + p * 5, 5) == 2);
  CHECK_THROWS(gumbel_softmax(x0, 0.0, 7));
  CHECK_THROWS(gumbel_softmax(x0, -1.0, 7));
}

TEST_CASE("gumbel_softmax rows sum to one") {
  auto s = linear_beta_schedule(20, 1e-3, 0.2);
  auto marginal = forward_marginal(one_hot_grid(16, 16, 6, 0), cumulative_transition(s, 10, 6));
  auto g = gumbel_softmax(marginal, 0.7, 3);
  for (size_t p = 0; p < g.pixels(); ++p) {
    double sum = 0.0;
    for (int c = 0; c < 6; ++c) sum += g.v[p * 6 + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gumbel_softmax argmax frequency: uniform two categories at low temperature") {
  CategoricalGrid uniform(100, 100, 2);
  for (size_t p = 0; p < uniform.pixels(); ++p) uniform.v[p * 2] = uniform.v[p * 2 + 1] = 0.5;
  auto g = gumbel_softmax(uniform, 0.01, 11);
  double count0 = 0.0;
  for (size_t p = 0; p < g.pixels(); ++p)
    if (argmax_pixel(g.v.data() + p * 2, 2) == 0) count0 += 1.0;
  CHECK(std::abs(count0 / g.pixels() - 0.5) <= 0.02);
}

TEST_CASE("gumbel_softmax argmax matches input distribution at temperature 1") {
  // Gumbel-max: argmax frequencies equal the category probabilities within
  // 3 binomial standard deviations at 10,000 draws.
  CategoricalGrid dist(100, 100, 3);
  const double probs[3] = {0.2, 0.5, 0.3};
  for (size_t p = 0; p < dist.pixels(); ++p)
    for (int c = 0; c < 3; ++c) dist.v[p * 3 + c] = probs[c];
  auto g = gumbel_softmax(dist, 1.0, 21);
  double freq[3] = {0, 0, 0};
  for (size_t p = 0; p < g.pixels(); ++p) freq[argmax_pixel(g.v.data() + p * 3, 3)] += 1.0;
  for (int c = 0; c < 3; ++c) {
    double n = static_cast<double>(g.pixels());
    double sd = std::sqrt(probs[c] * (1 - probs[c]) / n);
    CHECK(std::abs(freq[c] / n - probs[c]) <= 3.0 * sd);
  }
}

TEST_CASE("posterior_reverse matches brute-force Bayes enumeration") {
  // n=3, T=4, betas fixed; every one-hot (x0, xt, t) combination checked
  // against q(xt|xt-1) q(xt-1|x0) / q(xt|x0) from raw matrix entries.
  NoiseSchedule s;
  s.T = 4;
  s.betas = {0.1, 0.2, 0.3, 0.4};
  const int n = 3;
  size_t unreachable_checked = 0;
  for (int t = 2; t <= 4; ++t) {
    auto qt = transition_matrix(s.beta(t), n, n - 1);
    auto qbar_prev = cumulative_transition(s, t - 1, n);
    auto qbar_t = cumulative_transition(s, t, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        auto x0 = one_hot_grid(1, 1, n, i);
        auto xt = one_hot_grid(1, 1, n, j);
        auto res = posterior_reverse(xt, x0, s, t);
        double denom = qbar_t.at(i, j);
        if (denom == 0.0) {
          ++unreachable_checked;
          CHECK(res.unreachable_pixels == 1);
          for (int k = 0; k < n; ++k)
            CHECK(res.grid.at(0, 0, k) == doctest::Approx(1.0 / n));
          continue;
        }
        for (int k = 0; k < n; ++k) {
          double oracle = qt.at(k, j) * qbar_prev.at(i, k) / denom;
          CHECK(std::abs(res.grid.at(0, 0, k) - oracle) <= 1e-10);
        }
      }
  }
  CHECK(unreachable_checked > 0);  // absorbing chains do have unreachable pairs
}

TEST_CASE("posterior_reverse rows sum to one for reachable states") {
  NoiseSchedule s;
  s.T = 6;
  s.betas = {0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  for (int n : {2, 5}) {
    for (int t = 2; t <= 6; ++t)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          auto res = posterior_reverse(one_hot_grid(1, 1, n, j), one_hot_grid(1, 1, n, i), s, t);
          double sum = 0.0;
          for (int k = 0; k < n; ++k) sum += res.grid.at(0, 0, k);
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
  }
}

TEST_CASE("posterior_reverse with near-identity transitions returns x_t") {
  // beta -> 0 makes Q_t approach the identity, so x_{t-1} = x_t.
  NoiseSchedule s;
  s.T = 3;
  s.betas = {1e-14, 1e-14, 1e-14};
  auto x0 = one_hot_grid(2, 2, 3, 0);
  auto xt = one_hot_grid(2, 2, 3, 0);
  auto res = posterior_reverse(xt, x0, s, 3);
  for (size_t p = 0; p < xt.pixels(); ++p)
    for (int c = 0; c < 3; ++c)
      CHECK(res.grid.v[p * 3 + c] == doctest::Approx(xt.v[p * 3 + c]).epsilon(1e-10));
}

TEST_CASE("posterior_reverse t=1 returns x0 and validates t") {
  NoiseSchedule s;
  s.T = 3;
  s.betas = {0.1, 0.1, 0.1};
  auto x0 = one_hot_grid(2, 2, 3, 1);
  auto xt = one_hot_grid(2, 2, 3, 2);
  auto res = posterior_reverse(xt, x0, s, 1);
  CHECK(res.grid.v == x0.v);
  CHECK_THROWS(posterior_reverse(xt, x0, s, 0));
  CHECK_THROWS(posterior_reverse(xt, x0, s, 4));
}

TEST_CASE("simplified_reverse_step sharpens and normalizes") {
  CategoricalGrid logits(1, 1, 2);
  logits.at(0, 0, 0) = 10.0;
  logits.at(0, 0, 1) = 0.0;
  auto sharp = simplified_reverse_step(logits, 0.01);
  CHECK(sharp.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sharp.at(0, 0, 1) == doctest::Approx(0.0).epsilon(1e-9));

  CategoricalGrid equal(1, 1, 4);
  for (int c = 0; c < 4; ++c) equal.at(0, 0, c) = 2.5;
  for (double alpha : {0.01, 0.5, 1.0}) {
    auto u = simplified_reverse_step(equal, alpha);
    for (int c = 0; c < 4; ++c) CHECK(u.at(0, 0, c) == doctest::Approx(0.25).epsilon(1e-12));
  }

  // alpha = 1 is a plain softmax.
  CategoricalGrid z(1, 1, 3);
  z.at(0, 0, 0) = 1.0;
  z.at(0, 0, 1) = 2.0;
  z.at(0, 0, 2) = 3.0;
  auto sm = simplified_reverse_step(z, 1.0);
  double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int c = 0; c < 3; ++c)
    CHECK(sm.at(0, 0, c) == doctest::Approx(std::exp(1.0 + c) / denom).epsilon(1e-12));

  CHECK_THROWS(simplified_reverse_step(z, 0.0));
}

TEST_CASE("simplified_reverse_step approaches one-hot as alpha -> 0") {
  Rng rng(5);
  CategoricalGrid logits(8, 8, 6);
  for (auto& v : logits.v) v = rng.normal();
  // Force a gap >= 1 at every pixel.
  for (size_t p = 0; p < logits.pixels(); ++p) {
    int best = argmax_pixel(logits.v.data() + p * 6, 6);
    logits.v[p * 6 + best] += 1.0;
  }
  auto sharp = simplified_reverse_step(logits, 0.01);
  for (size_t p = 0; p < sharp.pixels(); ++p) {
    double mx = 0.0;
    for (int c = 0; c < 6; ++c) mx = std::max(mx, sharp.v[p * 6 + c]);
    CHECK(mx >= 1.0 - 1e-6);
  }
}

TEST_CASE("uniform_init draws one-hot pixels uniformly and deterministically") {
  auto a = uniform_init(100, 100, 2, 42);
  auto b = uniform_init(100, 100, 2, 42);
  CHECK(a.v == b.v);
  CHECK(is_one_hot(a));
  double count0 = 0.0;
  for (size_t p = 0; p < a.pixels(); ++p) count0 += a.v[p * 2];
  CHECK(std::abs(count0 / a.pixels() - 0.5) <= 0.02);
}

TEST_CASE("absorbing_init puts every pixel at the absorbing category") {
  auto g = absorbing_init(4, 4, 5);
  CHECK(is_one_hot(g));
  for (size_t p = 0; p < g.pixels(); ++p) CHECK(g.v[p * 5 + 4] == 1.0);
}

TEST_CASE("inference_timesteps spacing, endpoints, and contract edges") {
  auto ts = inference_timesteps(100, 10);
  CHECK(ts == std::vector<int>{100, 89, 78, 67, 56, 45, 34, 23, 12, 1});
  CHECK(inference_timesteps(5, 5) == std::vector<int>{5, 4, 3, 2, 1});
  CHECK(inference_timesteps(1, 1) == std::vector<int>{1});
  CHECK_THROWS(inference_timesteps(7, 1));  // endpoints conflict unless T = 1
  CHECK_THROWS(inference_timesteps(5, 6));
  CHECK_THROWS(inference_timesteps(0, 1));

  for (auto [T, S] : {std::pair{50, 7}, {99, 13}, {1000, 16}, {10, 10}}) {
    auto seq = inference_timesteps(T, S);
    REQUIRE(static_cast<int>(seq.size()) == S);
    CHECK(seq.front() == T);
    CHECK(seq.back() == 1);
    for (size_t i = 1; i < seq.size(); ++i) CHECK(seq[i] < seq[i - 1]);
  }
}

TEST_CASE("threshold_decode argmax rule and tie-break") {
  CategoricalGrid g(1, 3, 8);
  g.at(0, 0, 7) = 1.0;                  // argmax 7 > 3 -> on
  g.at(0, 1, 0) = 1.0;                  // argmax 0 -> off
  g.at(0, 2, 3) = g.at(0, 2, 4) = 0.5;  // tie 3 vs 4 -> lower wins -> off
  auto img = threshold_decode(g, 3);
  CHECK(img.at(0, 0) == 1);
  CHECK(img.at(0, 1) == 0);
  CHECK(img.at(0, 2) == 0);
  CHECK_THROWS(threshold_decode(g, 8));
  CHECK_THROWS(threshold_decode(g, -1));
}

TEST_CASE("sample_categorical is deterministic and one-hot") {
  CategoricalGrid dist(10, 10, 4);
  for (size_t p = 0; p < dist.pixels(); ++p) {
    dist.v[p * 4 + 0] = 0.1;
    dist.v[p * 4 + 1] = 0.2;
    dist.v[p * 4 + 2] = 0.3;
    dist.v[p * 4 + 3] = 0.4;
  }
  auto a = sample_categorical(dist, 9);
  auto b = sample_categorical(dist, 9);
  CHECK(a.v == b.v);
  CHECK(is_one_hot(a));
}
