#pragma once

#include <cstdint>

#include "cdiff/denoiser.hpp"
#include "cdiff/diffusion.hpp"

namespace cdiff {

enum class InitMode { Uniform, Absorbing };
enum class ReverseMode { Simplified, Standard };

struct InferenceOptions {
  int T = 100;
  int S = 10;
  double alpha = 0.01;
  int threshold = 3;  // n_categories / 2 - 1 for the 8-category default
  double beta_start = 1e-4;
  double beta_end = 0.02;
  InitMode init = InitMode::Uniform;
  ReverseMode reverse = ReverseMode::Simplified;
  uint64_t seed = 0;
};

struct InferenceResult {
  BinaryImage decoded;
  CategoricalGrid final_state;
};

// One-hot draw per pixel from each pixel's categorical distribution.
CategoricalGrid sample_categorical(const CategoricalGrid& dist, uint64_t seed);

// Deterministic reverse loop: initialize, then for each timestep predict x0
// and feed back softmax(pred / alpha); decode the final state.
InferenceResult run_inference(X0Predictor& model, const ConditionStack& condition,
                              const InferenceOptions& opts);

// Ablation path: each step samples x_{t-1} from the Bayes posterior built on
// softmax(pred); the t = 1 step returns the prediction itself.
InferenceResult run_standard_inference(X0Predictor& model, const ConditionStack& condition,
                                       const InferenceOptions& opts);

// Dispatches on opts.reverse.
InferenceResult run_reverse(X0Predictor& model, const ConditionStack& condition,
                            const InferenceOptions& opts);

}  // namespace cdiff
