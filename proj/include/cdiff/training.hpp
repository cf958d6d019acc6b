#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdiff/denoiser.hpp"
#include "cdiff/grid.hpp"
#include "cdiff/schedule.hpp"

namespace cdiff {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 15;
  double grad_clip_norm = 200.0;
  double ema_tau = 0.98;
  int epochs = 30;
  int T = 100;
  int n_categories = 8;
  double dice_epsilon = 1e-6;
  uint64_t seed = 0;
  int eval_every = 50;
  int ema_window = 5;
  // Corruption softmax temperature (the algorithm leaves it open).
  double gumbel_temperature = 1.0;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  // Validation inference settings.
  int val_steps = 10;
  double val_alpha = 0.01;
  double val_tolerance = 3.0;
  int threads = 1;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DiceMode { Joint, PerChannel };

// DICE over the flattened pixel-channel index (joint mode):
// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
double dice_loss(const CategoricalGrid& pred, const CategoricalGrid& target, double epsilon,
                 DiceMode mode = DiceMode::Joint);
// dL/dpred, same shape as pred.
CategoricalGrid dice_loss_grad(const CategoricalGrid& pred, const CategoricalGrid& target,
                               double epsilon, DiceMode mode = DiceMode::Joint);

// Mean negative log-likelihood of the target categories; pred holds
// per-pixel log-probabilities.
double simple_nll_loss(const CategoricalGrid& pred_logprobs, const CategoricalGrid& target);

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(nn::ParamList<float>& params, double max_norm);

// theta_hat <- tau * theta_hat + (1 - tau) * theta, elementwise.
void ema_update(std::vector<float>& ema, const std::vector<float>& params, double tau);
void ema_update_model(DenoiserModel& ema, DenoiserModel& model, double tau);

// Structural similarity with a uniform window (7x7, shrunk for tiny
// images), population statistics, C1 = 0.01^2, C2 = 0.03^2, valid positions
// only, averaged.
double ssim(const GrayImage& a, const GrayImage& b);

// Last step of the length-`window` consecutive run with maximal mean SSIM;
// ties go to the earliest window.
int64_t select_best_ema(const std::vector<std::pair<int64_t, double>>& history, int window = 5);

struct TrainingSample {
  CategoricalGrid x0;         // one-hot contour target
  ConditionStack cond_train;  // image + clean GT mask
  ConditionStack cond_eval;   // image + guide mask
  BinaryImage target_raster;  // rasterized target contour
};

// Decoupled-weight-decay adaptive-moment optimizer state.
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int64_t t = 0;
  std::vector<std::vector<float>> m, v;

  void init(const nn::ParamList<float>& params);
  void step(nn::ParamList<float>& params);
};

struct TrainState {
  TrainConfig config;
  DenoiserModel model;  // theta
  DenoiserModel ema;    // theta_hat
  AdamW opt;
  NoiseSchedule schedule;
  std::vector<TransitionMatrix> qbars;
  int64_t step = 0;
};

TrainState init_train_state(const TrainConfig& tc, const DenoiserConfig& dc);

// One optimizer step over a batch: per-sample timestep draw, forward
// corruption (marginal + gumbel-softmax), DICE on sigmoid outputs, gradient
// clip, optimizer update, EMA update. Returns the mean batch loss.
double train_step(TrainState& state, const std::vector<const TrainingSample*>& batch);

struct TrainResult {
  std::string best_ema_checkpoint;
  std::string last_checkpoint;
  int64_t best_step = 0;
  double final_loss = 0.0;
  std::vector<std::pair<int64_t, double>> ssim_history;
};

// Full loop: epochs * floor(N / batch) steps, periodic validation SSIM/F1 on
// the EMA model, per-step JSONL metrics log, checkpoints, best-EMA pick.
TrainResult train(const TrainConfig& tc, const DenoiserConfig& dc,
                  const std::vector<TrainingSample>& dataset,
                  const std::vector<TrainingSample>& val_dataset, const std::string& out_dir,
                  bool resume = false);

}  // namespace cdiff
