#pragma once

#include <cstdint>
#include <vector>

#include "cdiff/grid.hpp"
#include "cdiff/schedule.hpp"

namespace cdiff {

// Per-pixel marginal q(x_t | x_0) for a one-hot x0: each pixel's
// distribution is the qbar row selected by its category.
CategoricalGrid forward_marginal(const CategoricalGrid& x0, const TransitionMatrix& qbar);

// Gumbel-softmax relaxation of a categorical sample from each pixel's
// distribution. Probabilities are clamped to GUMBEL_LOG_FLOOR before the log
// so exact zeros from one-hot inputs stay finite.
inline constexpr double kGumbelLogFloor = 1e-12;
CategoricalGrid gumbel_softmax(const CategoricalGrid& probs, double temperature, uint64_t seed);

struct PosteriorResult {
  CategoricalGrid grid;
  // Pixels where q(x_t | x_0) was zero (x_t unreachable from x_0);
  // such pixels fall back to the uniform distribution.
  size_t unreachable_pixels = 0;
};

// Exact Bayes posterior q(x_{t-1} | x_t, x_0) per pixel:
// proportional to (x_t Q_t^T) ⊙ (x_0 Qbar_{t-1}), normalized by
// x_0 Qbar_t x_t^T. x0 may be one-hot or a distribution; t = 1 returns x0.
PosteriorResult posterior_reverse(const CategoricalGrid& xt, const CategoricalGrid& x0,
                                  const NoiseSchedule& schedule, int t,
                                  int absorbing_index = -1);

// Same posterior evaluated against precomputed cumulative matrices
// (qbars[t-1] = Qbar_t); avoids re-multiplying the chain inside loops.
PosteriorResult posterior_reverse_cached(const CategoricalGrid& xt, const CategoricalGrid& x0,
                                         const NoiseSchedule& schedule,
                                         const std::vector<TransitionMatrix>& qbars, int t);

// Temperature-sharpened softmax of raw scores: softmax(logits / alpha).
CategoricalGrid simplified_reverse_step(const CategoricalGrid& x0_logits, double alpha);

// One-hot draw per pixel from the uniform categorical.
CategoricalGrid uniform_init(int h, int w, int n, uint64_t seed);
// Every pixel one-hot at the absorbing category (the forward-process limit).
CategoricalGrid absorbing_init(int h, int w, int n, int absorbing_index = -1);

// S strictly decreasing timesteps, first = T, last = 1, evenly spaced.
std::vector<int> inference_timesteps(int T, int S);

// Pixel on iff argmax category index > threshold (ties toward lower index).
BinaryImage threshold_decode(const CategoricalGrid& grid, int threshold);

}  // namespace cdiff
