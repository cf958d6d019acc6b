#include "cdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cdiff/rng.hpp"

namespace cdiff {

CategoricalGrid forward_marginal(const CategoricalGrid& x0, const TransitionMatrix& qbar) {
  if (x0.n != qbar.n) throw std::invalid_argument("forward_marginal: category count mismatch");
  CategoricalGrid out(x0.h, x0.w, x0.n);
  const int n = x0.n;
  for (size_t p = 0; p < x0.pixels(); ++p) {
    const double* px = x0.v.data() + p * n;
    double* op = out.v.data() + p * n;
    // x0 is one-hot, so the marginal is a row lookup; accept soft inputs too
    // (x0 Qbar as a vector-matrix product).
    int cat = -1;
    for (int c = 0; c < n; ++c)
      if (px[c] == 1.0) {
        cat = c;
        break;
      }
    if (cat >= 0) {
      const double* row = qbar.entries.data() + static_cast<size_t>(cat) * n;
      std::copy(row, row + n, op);
    } else {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += px[i] * qbar.at(i, j);
        op[j] = s;
      }
    }
  }
  return out;
}

CategoricalGrid gumbel_softmax(const CategoricalGrid& probs, double temperature, uint64_t seed) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  CategoricalGrid out(probs.h, probs.w, probs.n);
  Rng rng(seed);
  const int n = probs.n;
  std::vector<double> z(n);
  for (size_t p = 0; p < probs.pixels(); ++p) {
    const double* px = probs.v.data() + p * n;
    double* op = out.v.data() + p * n;
    double zmax = -1e300;
    for (int c = 0; c < n; ++c) {
      double lp = std::log(std::max(px[c], kGumbelLogFloor));
      z[c] = (lp + rng.gumbel()) / temperature;
      zmax = std::max(zmax, z[c]);
    }
    double sum = 0.0;
    for (int c = 0; c < n; ++c) {
      op[c] = std::exp(z[c] - zmax);
      sum += op[c];
    }
    for (int c = 0; c < n; ++c) op[c] /= sum;
  }
  return out;
}

namespace {

PosteriorResult posterior_impl(const CategoricalGrid& xt, const CategoricalGrid& x0,
                               const TransitionMatrix& qt, const TransitionMatrix& qbar_prev,
                               const TransitionMatrix& qbar_t) {
  const int n = xt.n;
  PosteriorResult res;
  res.grid = CategoricalGrid(xt.h, xt.w, n);
  std::vector<double> x0_qbar_prev(n), xt_qt_T(n);
  for (size_t p = 0; p < xt.pixels(); ++p) {
    const double* xtp = xt.v.data() + p * n;
    const double* x0p = x0.v.data() + p * n;
    double* op = res.grid.v.data() + p * n;
    // (x0 Qbar_{t-1})[k] and (x_t Q_t^T)[k] = sum_j x_t[j] Q_t[k][j]
    for (int k = 0; k < n; ++k) {
      double a = 0.0, b = 0.0;
      for (int i = 0; i < n; ++i) a += x0p[i] * qbar_prev.at(i, k);
      for (int j = 0; j < n; ++j) b += xtp[j] * qt.at(k, j);
      x0_qbar_prev[k] = a;
      xt_qt_T[k] = b;
    }
    // Normalizer x0 Qbar_t x_t^T.
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      if (x0p[i] == 0.0) continue;
      double row = 0.0;
      for (int j = 0; j < n; ++j) row += qbar_t.at(i, j) * xtp[j];
      norm += x0p[i] * row;
    }
    if (norm <= 0.0) {
      ++res.unreachable_pixels;
      for (int k = 0; k < n; ++k) op[k] = 1.0 / n;
      continue;
    }
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
      op[k] = xt_qt_T[k] * x0_qbar_prev[k];
      sum += op[k];
    }
    // The elementwise product sums to the normalizer for one-hot x_t; for
    // soft inputs renormalize so each pixel stays a distribution.
    for (int k = 0; k < n; ++k) op[k] /= sum;
  }
  return res;
}

}  // namespace

PosteriorResult posterior_reverse(const CategoricalGrid& xt, const CategoricalGrid& x0,
                                  const NoiseSchedule& schedule, int t, int absorbing_index) {
  if (!xt.same_shape(x0)) throw std::invalid_argument("posterior_reverse: shape mismatch");
  if (t < 1 || t > schedule.T) throw std::invalid_argument("posterior_reverse: t outside [1, T]");
  if (absorbing_index < 0) absorbing_index = xt.n - 1;
  if (t == 1) return {x0, 0};
  TransitionMatrix qt = transition_matrix(schedule.beta(t), xt.n, absorbing_index);
  TransitionMatrix qbar_prev = cumulative_transition(schedule, t - 1, xt.n, absorbing_index);
  TransitionMatrix qbar_t = cumulative_transition(schedule, t, xt.n, absorbing_index);
  return posterior_impl(xt, x0, qt, qbar_prev, qbar_t);
}

PosteriorResult posterior_reverse_cached(const CategoricalGrid& xt, const CategoricalGrid& x0,
                                         const NoiseSchedule& schedule,
                                         const std::vector<TransitionMatrix>& qbars, int t) {
  if (!xt.same_shape(x0)) throw std::invalid_argument("posterior_reverse: shape mismatch");
  if (t < 1 || t > schedule.T) throw std::invalid_argument("posterior_reverse: t outside [1, T]");
  if (t == 1) return {x0, 0};
  TransitionMatrix qt =
      transition_matrix(schedule.beta(t), xt.n, qbars.front().absorbing_index);
  return posterior_impl(xt, x0, qt, qbars[t - 2], qbars[t - 1]);
}

CategoricalGrid simplified_reverse_step(const CategoricalGrid& x0_logits, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("simplified_reverse_step: alpha must be > 0");
  CategoricalGrid out(x0_logits.h, x0_logits.w, x0_logits.n);
  const int n = x0_logits.n;
  for (size_t p = 0; p < x0_logits.pixels(); ++p) {
    const double* px = x0_logits.v.data() + p * n;
    double* op = out.v.data() + p * n;
    double zmax = -1e300;
    for (int c = 0; c < n; ++c) zmax = std::max(zmax, px[c] / alpha);
    double sum = 0.0;
    for (int c = 0; c < n; ++c) {
      op[c] = std::exp(px[c] / alpha - zmax);
      sum += op[c];
    }
    for (int c = 0; c < n; ++c) op[c] /= sum;
  }
  return out;
}

CategoricalGrid uniform_init(int h, int w, int n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("uniform_init: n must be >= 2");
  CategoricalGrid g(h, w, n);
  Rng rng(seed);
  for (size_t p = 0; p < g.pixels(); ++p)
    g.v[p * n + rng.uniform_int(static_cast<uint64_t>(n))] = 1.0;
  return g;
}

CategoricalGrid absorbing_init(int h, int w, int n, int absorbing_index) {
  if (absorbing_index < 0) absorbing_index = n - 1;
  CategoricalGrid g(h, w, n);
  for (size_t p = 0; p < g.pixels(); ++p) g.v[p * n + absorbing_index] = 1.0;
  return g;
}

std::vector<int> inference_timesteps(int T, int S) {
  if (S < 1 || S > T) throw std::invalid_argument("inference_timesteps: need 1 <= S <= T");
  if (S == 1) {
    if (T != 1)
      throw std::invalid_argument("inference_timesteps: S = 1 requires T = 1 (endpoints T and 1)");
    return {1};
  }
  std::vector<int> out(S);
  for (int i = 0; i < S; ++i) {
    double v = T - static_cast<double>(i) * (T - 1) / (S - 1);
    out[i] = static_cast<int>(std::lround(v));
  }
  out.front() = T;
  out.back() = 1;
  for (int i = 1; i < S; ++i)
    if (out[i] >= out[i - 1])
      throw std::invalid_argument("inference_timesteps: rounding produced duplicate steps");
  return out;
}

BinaryImage threshold_decode(const CategoricalGrid& grid, int threshold) {
  if (threshold < 0 || threshold >= grid.n)
    throw std::invalid_argument("threshold_decode: threshold outside [0, n)");
  BinaryImage out(grid.h, grid.w);
  for (int y = 0; y < grid.h; ++y)
    for (int x = 0; x < grid.w; ++x)
      out.at(y, x) = argmax_pixel(grid.pixel(y, x), grid.n) > threshold ? 1 : 0;
  return out;
}

}  // namespace cdiff
