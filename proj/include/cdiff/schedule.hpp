#pragma once

#include <vector>

namespace cdiff {

// Linear beta schedule. betas[t-1] holds the noise rate for step t = 1..T.
struct NoiseSchedule {
  int T = 0;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> betas;

  double beta(int t) const { return betas[t - 1]; }
};

// Row-stochastic single-step or cumulative transition matrix.
// entries[i*n + j] = q(x_t = j | x_{t-1} = i). The absorbing row is one-hot.
struct TransitionMatrix {
  int n = 0;
  int absorbing_index = 0;
  std::vector<double> entries;

  double at(int i, int j) const { return entries[static_cast<size_t>(i) * n + j]; }
  double& at(int i, int j) { return entries[static_cast<size_t>(i) * n + j]; }
};

NoiseSchedule linear_beta_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

// Absorbing-state single-step matrix: diagonal 1-beta, column
// `absorbing_index` beta, absorbing row one-hot.
TransitionMatrix transition_matrix(double beta, int n, int absorbing_index);

// Cumulative product Q_1 * Q_2 * ... * Q_t.
TransitionMatrix cumulative_transition(const NoiseSchedule& schedule, int t, int n,
                                       int absorbing_index = -1);

// All cumulative matrices for t = 1..T (index t-1). Shared by training and
// the standard reverse path so the product is computed once.
std::vector<TransitionMatrix> all_cumulative_transitions(const NoiseSchedule& schedule, int n,
                                                         int absorbing_index = -1);

}  // namespace cdiff
