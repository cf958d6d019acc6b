#include "cdiff/infer.hpp"

#include "cdiff/rng.hpp"

namespace cdiff {

CategoricalGrid sample_categorical(const CategoricalGrid& dist, uint64_t seed) {
  CategoricalGrid out(dist.h, dist.w, dist.n);
  Rng rng(seed);
  for (size_t p = 0; p < dist.pixels(); ++p) {
    const double* px = dist.v.data() + p * dist.n;
    double u = rng.uniform();
    double acc = 0.0;
    int pick = dist.n - 1;
    for (int c = 0; c < dist.n; ++c) {
      acc += px[c];
      if (u < acc) {
        pick = c;
        break;
      }
    }
    out.v[p * dist.n + pick] = 1.0;
  }
  return out;
}

namespace {

CategoricalGrid initial_state(const InferenceOptions& opts, int h, int w, int n) {
  if (opts.init == InitMode::Absorbing) return absorbing_init(h, w, n);
  return uniform_init(h, w, n, derive_seed(opts.seed, 0x696e6974));
}

}  // namespace

InferenceResult run_inference(X0Predictor& model, const ConditionStack& condition,
                              const InferenceOptions& opts) {
  const int n = model.n_categories();
  CategoricalGrid xt = initial_state(opts, condition.h, condition.w, n);
  for (int t : inference_timesteps(opts.T, opts.S)) {
    CategoricalGrid logits = model.predict(xt, condition, t);
    xt = simplified_reverse_step(logits, opts.alpha);
  }
  InferenceResult res;
  res.decoded = threshold_decode(xt, opts.threshold);
  res.final_state = std::move(xt);
  return res;
}

InferenceResult run_standard_inference(X0Predictor& model, const ConditionStack& condition,
                                       const InferenceOptions& opts) {
  const int n = model.n_categories();
  NoiseSchedule schedule = linear_beta_schedule(opts.T, opts.beta_start, opts.beta_end);
  auto qbars = all_cumulative_transitions(schedule, n);
  CategoricalGrid xt = initial_state(opts, condition.h, condition.w, n);
  int step_idx = 0;
  for (int t : inference_timesteps(opts.T, opts.S)) {
    CategoricalGrid logits = model.predict(xt, condition, t);
    CategoricalGrid x0_hat = simplified_reverse_step(logits, 1.0);  // plain softmax
    PosteriorResult post = posterior_reverse_cached(xt, x0_hat, schedule, qbars, t);
    xt = sample_categorical(post.grid, derive_seed(opts.seed, 0x73616d70, step_idx));
    ++step_idx;
  }
  InferenceResult res;
  res.decoded = threshold_decode(xt, opts.threshold);
  res.final_state = std::move(xt);
  return res;
}

InferenceResult run_reverse(X0Predictor& model, const ConditionStack& condition,
                            const InferenceOptions& opts) {
  if (opts.reverse == ReverseMode::Standard)
    return run_standard_inference(model, condition, opts);
  return run_inference(model, condition, opts);
}

}  // namespace cdiff
