#include "cdiff/schedule.hpp"

#include <stdexcept>

namespace cdiff {

NoiseSchedule linear_beta_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("linear_beta_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("linear_beta_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(T);
  if (T == 1) {
    s.betas[0] = beta_start;
  } else {
    for (int t = 1; t <= T; ++t)
      s.betas[t - 1] = beta_start + (t - 1) * (beta_end - beta_start) / (T - 1);
  }
  return s;
}

TransitionMatrix transition_matrix(double beta, int n, int absorbing_index) {
  if (n < 2) throw std::invalid_argument("transition_matrix: n must be >= 2");
  if (!(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("transition_matrix: beta must be in (0,1)");
  if (absorbing_index < 0 || absorbing_index >= n)
    throw std::invalid_argument("transition_matrix: absorbing_index out of range");
  TransitionMatrix q;
  q.n = n;
  q.absorbing_index = absorbing_index;
  q.entries.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    if (i == absorbing_index) {
      q.at(i, i) = 1.0;
    } else {
      // The absorbing entry is 1 - diag rather than beta itself (equal to
      // beta within one ulp) so each row sums to exactly 1.
      q.at(i, i) = 1.0 - beta;
      q.at(i, absorbing_index) = 1.0 - q.at(i, i);
    }
  }
  return q;
}

namespace {
TransitionMatrix multiply(const TransitionMatrix& a, const TransitionMatrix& b) {
  TransitionMatrix c;
  c.n = a.n;
  c.absorbing_index = a.absorbing_index;
  c.entries.assign(static_cast<size_t>(a.n) * a.n, 0.0);
  for (int i = 0; i < a.n; ++i)
    for (int k = 0; k < a.n; ++k) {
      double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < a.n; ++j) c.at(i, j) += aik * b.at(k, j);
    }
  return c;
}
}  // namespace

TransitionMatrix cumulative_transition(const NoiseSchedule& schedule, int t, int n,
                                       int absorbing_index) {
  if (t < 1 || t > schedule.T)
    throw std::invalid_argument("cumulative_transition: t outside [1, T]");
  if (absorbing_index < 0) absorbing_index = n - 1;
  TransitionMatrix qbar = transition_matrix(schedule.beta(1), n, absorbing_index);
  for (int s = 2; s <= t; ++s)
    qbar = multiply(qbar, transition_matrix(schedule.beta(s), n, absorbing_index));
  return qbar;
}

std::vector<TransitionMatrix> all_cumulative_transitions(const NoiseSchedule& schedule, int n,
                                                         int absorbing_index) {
  if (absorbing_index < 0) absorbing_index = n - 1;
  std::vector<TransitionMatrix> out;
  out.reserve(schedule.T);
  out.push_back(transition_matrix(schedule.beta(1), n, absorbing_index));
  for (int t = 2; t <= schedule.T; ++t)
    out.push_back(multiply(out.back(), transition_matrix(schedule.beta(t), n, absorbing_index)));
  return out;
}

}  // namespace cdiff
