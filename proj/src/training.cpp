#include "cdiff/training.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cdiff/contour.hpp"
#include "cdiff/diffusion.hpp"
#include "cdiff/infer.hpp"
#include "cdiff/metrics.hpp"
#include "cdiff/rng.hpp"

namespace cdiff {

namespace fs = std::filesystem;

double dice_loss(const CategoricalGrid& pred, const CategoricalGrid& target, double epsilon,
                 DiceMode mode) {
  if (!pred.same_shape(target)) throw std::invalid_argument("dice_loss: shape mismatch");
  if (mode == DiceMode::Joint) {
    double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
      inter += pred.v[i] * target.v[i];
      sum_p += pred.v[i];
      sum_g += target.v[i];
    }
    return 1.0 - (2.0 * inter + epsilon) / (sum_p + sum_g + epsilon);
  }
  double acc = 0.0;
  for (int c = 0; c < pred.n; ++c) {
    double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
    for (size_t p = 0; p < pred.pixels(); ++p) {
      double pv = pred.v[p * pred.n + c], gv = target.v[p * pred.n + c];
      inter += pv * gv;
      sum_p += pv;
      sum_g += gv;
    }
    acc += 1.0 - (2.0 * inter + epsilon) / (sum_p + sum_g + epsilon);
  }
  return acc / pred.n;
}

CategoricalGrid dice_loss_grad(const CategoricalGrid& pred, const CategoricalGrid& target,
                               double epsilon, DiceMode mode) {
  if (!pred.same_shape(target)) throw std::invalid_argument("dice_loss_grad: shape mismatch");
  CategoricalGrid g(pred.h, pred.w, pred.n);
  if (mode == DiceMode::Joint) {
    double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
      inter += pred.v[i] * target.v[i];
      sum_p += pred.v[i];
      sum_g += target.v[i];
    }
    const double num = 2.0 * inter + epsilon;
    const double den = sum_p + sum_g + epsilon;
    for (size_t i = 0; i < pred.v.size(); ++i)
      g.v[i] = num / (den * den) - 2.0 * target.v[i] / den;
    return g;
  }
  for (int c = 0; c < pred.n; ++c) {
    double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
    for (size_t p = 0; p < pred.pixels(); ++p) {
      double pv = pred.v[p * pred.n + c], gv = target.v[p * pred.n + c];
      inter += pv * gv;
      sum_p += pv;
      sum_g += gv;
    }
    const double num = 2.0 * inter + epsilon;
    const double den = sum_p + sum_g + epsilon;
    for (size_t p = 0; p < pred.pixels(); ++p)
      g.v[p * pred.n + c] =
          (num / (den * den) - 2.0 * target.v[p * pred.n + c] / den) / pred.n;
  }
  return g;
}

double simple_nll_loss(const CategoricalGrid& pred_logprobs, const CategoricalGrid& target) {
  if (!pred_logprobs.same_shape(target))
    throw std::invalid_argument("simple_nll_loss: shape mismatch");
  double acc = 0.0;
  for (size_t p = 0; p < target.pixels(); ++p) {
    const double* tp = target.v.data() + p * target.n;
    const double* lp = pred_logprobs.v.data() + p * target.n;
    for (int c = 0; c < target.n; ++c)
      if (tp[c] > 0.0) acc -= tp[c] * lp[c];
  }
  return acc / static_cast<double>(target.pixels());
}

double clip_global_norm(nn::ParamList<float>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (auto& p : params)
    for (float g : *p.grad) sq += static_cast<double>(g) * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (float& g : *p.grad) g *= scale;
  }
  return norm;
}

void ema_update(std::vector<float>& ema, const std::vector<float>& params, double tau) {
  if (ema.size() != params.size()) throw std::invalid_argument("ema_update: shape mismatch");
  for (size_t i = 0; i < ema.size(); ++i)
    ema[i] = static_cast<float>(tau * ema[i] + (1.0 - tau) * params[i]);
}

void ema_update_model(DenoiserModel& ema, DenoiserModel& model, double tau) {
  auto pe = ema.net.params();
  auto pm = model.net.params();
  if (pe.size() != pm.size()) throw std::invalid_argument("ema_update_model: mismatched models");
  for (size_t i = 0; i < pe.size(); ++i) ema_update(*pe[i].value, *pm[i].value, tau);
}

double ssim(const GrayImage& a, const GrayImage& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("ssim: shape mismatch");
  const int k = std::min({7, a.h, a.w});
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double inv_n = 1.0 / (k * k);
  double acc = 0.0;
  int count = 0;
  for (int y = 0; y + k <= a.h; ++y)
    for (int x = 0; x + k <= a.w; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          double va = a.at(y + dy, x + dx), vb = b.at(y + dy, x + dx);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      double mu_a = sa * inv_n, mu_b = sb * inv_n;
      double var_a = saa * inv_n - mu_a * mu_a;
      double var_b = sbb * inv_n - mu_b * mu_b;
      double cov = sab * inv_n - mu_a * mu_b;
      acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  return acc / count;
}

int64_t select_best_ema(const std::vector<std::pair<int64_t, double>>& history, int window) {
  if (static_cast<int>(history.size()) < window)
    throw std::invalid_argument("select_best_ema: history shorter than window");
  double best_mean = -2.0;
  int64_t best_step = history.front().first;
  for (size_t i = 0; i + window <= history.size(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < window; ++j) mean += history[i + j].second;
    mean /= window;
    if (mean > best_mean + 1e-15) {
      best_mean = mean;
      best_step = history[i + window - 1].first;
    }
  }
  return best_step;
}

void AdamW::init(const nn::ParamList<float>& params) {
  m.clear();
  v.clear();
  for (auto& p : params) {
    m.emplace_back(p.value->size(), 0.0f);
    v.emplace_back(p.value->size(), 0.0f);
  }
  t = 0;
}

void AdamW::step(nn::ParamList<float>& params) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& val = *params[pi].value;
    auto& grad = *params[pi].grad;
    auto& mm = m[pi];
    auto& vv = v[pi];
    for (size_t i = 0; i < val.size(); ++i) {
      double g = grad[i];
      double mi = beta1 * mm[i] + (1.0 - beta1) * g;
      double vi = beta2 * vv[i] + (1.0 - beta2) * g * g;
      mm[i] = static_cast<float>(mi);
      vv[i] = static_cast<float>(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps) + weight_decay * val[i];
      val[i] = static_cast<float>(val[i] - lr * update);
    }
  }
}

TrainState init_train_state(const TrainConfig& tc, const DenoiserConfig& dc) {
  if (tc.batch_size < 1 || tc.epochs < 0 || tc.T < 1 || !(tc.learning_rate > 0.0) ||
      !(tc.ema_tau > 0.0 && tc.ema_tau < 1.0) || !(tc.grad_clip_norm > 0.0))
    throw std::invalid_argument("init_train_state: invalid config");
  TrainState st;
  st.config = tc;
  st.model = build_denoiser(dc, tc.seed);
  st.ema = st.model;  // theta_hat starts equal to theta
  st.ema.is_ema = true;
  st.opt.lr = tc.learning_rate;
  auto params = st.model.net.params();
  st.opt.init(params);
  st.schedule = linear_beta_schedule(tc.T, tc.beta_start, tc.beta_end);
  st.qbars = all_cumulative_transitions(st.schedule, tc.n_categories);
  return st;
}

namespace {

// Per-sample forward corruption + loss + backward on a model replica.
double sample_pass(DenoiserModel& replica, const TrainState& st, const TrainingSample& sample,
                   int64_t step, int sample_index) {
  const TrainConfig& tc = st.config;
  Rng trng(derive_seed(tc.seed, 0x74647261, static_cast<uint64_t>(step), sample_index));
  // t drawn from {1..T}: t = 0 would make x_t = x_0 exactly.
  const int t = 1 + static_cast<int>(trng.uniform_int(static_cast<uint64_t>(tc.T)));

  CategoricalGrid marginal = forward_marginal(sample.x0, st.qbars[t - 1]);
  CategoricalGrid xt = gumbel_softmax(
      marginal, tc.gumbel_temperature,
      derive_seed(tc.seed, 0x67756d62, static_cast<uint64_t>(step), sample_index));

  CategoricalGrid logits =
      predict_x0(replica, xt, sample.cond_train, t, /*train=*/true,
                 derive_seed(tc.seed, 0x64726f70, static_cast<uint64_t>(step), sample_index));

  // Sigmoid probabilities, DICE loss, and the chain back to logits.
  CategoricalGrid probs(logits.h, logits.w, logits.n);
  for (size_t i = 0; i < logits.v.size(); ++i) probs.v[i] = 1.0 / (1.0 + std::exp(-logits.v[i]));
  double loss = dice_loss(probs, sample.x0, tc.dice_epsilon);
  CategoricalGrid dprobs = dice_loss_grad(probs, sample.x0, tc.dice_epsilon);

  nn::Tensor<float> dy(logits.n, logits.h, logits.w);
  const int hw = logits.h * logits.w;
  for (int c = 0; c < logits.n; ++c) {
    float* dst = dy.plane(c);
    for (int i = 0; i < hw; ++i) {
      size_t idx = static_cast<size_t>(i) * logits.n + c;
      double p = probs.v[idx];
      dst[i] = static_cast<float>(dprobs.v[idx] * p * (1.0 - p));
    }
  }
  replica.net.backward(dy);
  return loss;
}

}  // namespace

double train_step(TrainState& st, const std::vector<const TrainingSample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const int threads = std::max(1, std::min(st.config.threads, static_cast<int>(batch.size())));

  std::vector<DenoiserModel> replicas(threads, st.model);
  for (auto& r : replicas) r.net.zero_grads();
  std::vector<double> losses(batch.size(), 0.0);

#pragma omp parallel for schedule(static) num_threads(threads)
  for (int b = 0; b < static_cast<int>(batch.size()); ++b) {
    DenoiserModel& replica = replicas[omp_get_thread_num()];
    losses[b] = sample_pass(replica, st, *batch[b], st.step, b);
  }

  double mean_loss = 0.0;
  for (double l : losses) mean_loss += l;
  mean_loss /= static_cast<double>(batch.size());
  if (!std::isfinite(mean_loss))
    throw TrainingDiverged("train_step: non-finite loss at step " + std::to_string(st.step));

  // Reduce replica gradients into the master in fixed order, averaged over
  // the batch.
  auto master = st.model.net.params();
  std::vector<nn::ParamList<float>> rp;
  rp.reserve(replicas.size());
  for (auto& r : replicas) rp.push_back(r.net.params());
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  for (size_t pi = 0; pi < master.size(); ++pi) {
    auto& g = *master[pi].grad;
    std::fill(g.begin(), g.end(), 0.0f);
    for (auto& r : rp) {
      const auto& rg = *r[pi].grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += rg[i];
    }
    for (auto& x : g) x *= inv_b;
  }

  clip_global_norm(master, st.config.grad_clip_norm);
  st.opt.step(master);
  ema_update_model(st.ema, st.model, st.config.ema_tau);
  ++st.step;
  return mean_loss;
}

namespace {

GrayImage contour_prob_map(const CategoricalGrid& grid, int threshold) {
  GrayImage g(grid.h, grid.w);
  for (size_t p = 0; p < grid.pixels(); ++p) {
    double best = 0.0;
    for (int c = threshold + 1; c < grid.n; ++c)
      best = std::max(best, grid.v[p * grid.n + c]);
    g.v[p] = best;
  }
  return g;
}

struct ValScores {
  double mean_ssim = 0.0;
  double mean_f1 = 0.0;
};

ValScores validate(TrainState& st, const std::vector<TrainingSample>& val) {
  const TrainConfig& tc = st.config;
  const int threshold = tc.n_categories / 2 - 1;
  std::vector<double> ssims(val.size()), f1s(val.size());

#pragma omp parallel for schedule(static) num_threads(std::max(1, tc.threads))
  for (int i = 0; i < static_cast<int>(val.size()); ++i) {
    ModelPredictor pred(st.ema);  // eval-mode forward is stateless
    InferenceOptions opts;
    opts.T = tc.T;
    opts.S = tc.val_steps;
    opts.alpha = tc.val_alpha;
    opts.threshold = threshold;
    opts.beta_start = tc.beta_start;
    opts.beta_end = tc.beta_end;
    opts.seed = derive_seed(tc.seed, 0x76616c69, i);
    InferenceResult res = run_inference(pred, val[i].cond_eval, opts);

    GrayImage prob = contour_prob_map(res.final_state, threshold);
    GrayImage target_soft = gaussian_blur(to_gray(val[i].target_raster), 1.0);
    ssims[i] = ssim(prob, target_soft);

    PostprocessOptions popts;
    auto post = postprocess(res.decoded, popts);
    PointSet pred_pts = PointSet::from_image(post.image);
    PointSet gt_pts = PointSet::from_image(val[i].target_raster);
    f1s[i] = (pred_pts.empty() || gt_pts.empty())
                 ? 0.0
                 : boundary_f1(pred_pts, gt_pts, tc.val_tolerance);
  }
  ValScores out;
  for (double s : ssims) out.mean_ssim += s;
  for (double f : f1s) out.mean_f1 += f;
  if (!val.empty()) {
    out.mean_ssim /= static_cast<double>(val.size());
    out.mean_f1 /= static_cast<double>(val.size());
  }
  return out;
}

std::string ckpt_name(const std::string& dir, int64_t step, bool ema) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld%s.bin", static_cast<long long>(step),
                ema ? "_ema" : "");
  return (fs::path(dir) / buf).string();
}

void save_opt_state(const std::string& path, const TrainState& st,
                    const std::vector<std::pair<int64_t, double>>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write optimizer state: " + path);
  const char magic[8] = {'C', 'D', 'F', 'O', 'P', 'T', '0', '1'};
  out.write(magic, 8);
  int64_t step = st.step, opt_t = st.opt.t;
  out.write(reinterpret_cast<const char*>(&step), 8);
  out.write(reinterpret_cast<const char*>(&opt_t), 8);
  uint32_t np = static_cast<uint32_t>(st.opt.m.size());
  out.write(reinterpret_cast<const char*>(&np), 4);
  for (uint32_t i = 0; i < np; ++i) {
    uint64_t sz = st.opt.m[i].size();
    out.write(reinterpret_cast<const char*>(&sz), 8);
    out.write(reinterpret_cast<const char*>(st.opt.m[i].data()),
              static_cast<std::streamsize>(sz * 4));
    out.write(reinterpret_cast<const char*>(st.opt.v[i].data()),
              static_cast<std::streamsize>(sz * 4));
  }
  uint32_t nh = static_cast<uint32_t>(history.size());
  out.write(reinterpret_cast<const char*>(&nh), 4);
  for (auto& [s, v] : history) {
    out.write(reinterpret_cast<const char*>(&s), 8);
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
}

bool load_opt_state(const std::string& path, TrainState& st,
                    std::vector<std::pair<int64_t, double>>& history) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[8];
  in.read(magic, 8);
  if (std::string(magic, 8) != "CDFOPT01") return false;
  in.read(reinterpret_cast<char*>(&st.step), 8);
  in.read(reinterpret_cast<char*>(&st.opt.t), 8);
  uint32_t np = 0;
  in.read(reinterpret_cast<char*>(&np), 4);
  if (np != st.opt.m.size()) return false;
  for (uint32_t i = 0; i < np; ++i) {
    uint64_t sz = 0;
    in.read(reinterpret_cast<char*>(&sz), 8);
    if (sz != st.opt.m[i].size()) return false;
    in.read(reinterpret_cast<char*>(st.opt.m[i].data()), static_cast<std::streamsize>(sz * 4));
    in.read(reinterpret_cast<char*>(st.opt.v[i].data()), static_cast<std::streamsize>(sz * 4));
  }
  uint32_t nh = 0;
  in.read(reinterpret_cast<char*>(&nh), 4);
  history.clear();
  for (uint32_t i = 0; i < nh; ++i) {
    int64_t s;
    double v;
    in.read(reinterpret_cast<char*>(&s), 8);
    in.read(reinterpret_cast<char*>(&v), 8);
    history.emplace_back(s, v);
  }
  return static_cast<bool>(in);
}

}  // namespace

TrainResult train(const TrainConfig& tc, const DenoiserConfig& dc,
                  const std::vector<TrainingSample>& dataset,
                  const std::vector<TrainingSample>& val_dataset, const std::string& out_dir,
                  bool resume) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  fs::create_directories(out_dir);

  TrainState st = init_train_state(tc, dc);
  std::vector<std::pair<int64_t, double>> ssim_history;
  const std::string opt_path = (fs::path(out_dir) / "opt_state.bin").string();
  const std::string last_path = (fs::path(out_dir) / "last.bin").string();
  const std::string last_ema_path = (fs::path(out_dir) / "last_ema.bin").string();

  if (resume && fs::exists(last_path) && fs::exists(last_ema_path)) {
    st.model = load_checkpoint(last_path);
    st.ema = load_checkpoint(last_ema_path);
    if (!load_opt_state(opt_path, st, ssim_history))
      throw std::runtime_error("train: --resume requested but optimizer state unreadable");
  }

  const int steps_per_epoch = static_cast<int>(dataset.size()) / tc.batch_size;
  if (steps_per_epoch == 0)
    throw std::invalid_argument("train: dataset smaller than one batch");
  const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * tc.epochs;

  std::ofstream log((fs::path(out_dir) / "train_log.jsonl").string(),
                    resume ? std::ios::app : std::ios::trunc);
  auto t0 = std::chrono::steady_clock::now();
  TrainResult result;

  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto checkpoint = [&](int64_t step) {
    save_checkpoint(ckpt_name(out_dir, step, false), st.model);
    st.ema.step = step;
    save_checkpoint(ckpt_name(out_dir, step, true), st.ema);
    save_checkpoint(last_path, st.model);
    save_checkpoint(last_ema_path, st.ema);
    save_opt_state(opt_path, st, ssim_history);
  };

  double loss = 0.0;
  bool diverged = false;
  std::string diverged_msg;
  while (st.step < total_steps && !diverged) {
    const int64_t epoch = st.step / steps_per_epoch;
    // Deterministic per-epoch shuffle.
    Rng shuffle_rng(derive_seed(tc.seed, 0x73687566, static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    const int64_t step_in_epoch = st.step % steps_per_epoch;
    for (int64_t s = step_in_epoch; s < steps_per_epoch && !diverged; ++s) {
      std::vector<const TrainingSample*> batch;
      for (int b = 0; b < tc.batch_size; ++b)
        batch.push_back(&dataset[order[s * tc.batch_size + b]]);

      try {
        loss = train_step(st, batch);
      } catch (const TrainingDiverged& e) {
        diverged = true;
        diverged_msg = e.what();
        break;
      }
      st.model.step = st.step;

      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      bool do_eval = !val_dataset.empty() &&
                     (st.step % tc.eval_every == 0 || st.step == total_steps);
      double val_ssim = 0.0, val_f1 = 0.0;
      if (do_eval) {
        ValScores v = validate(st, val_dataset);
        val_ssim = v.mean_ssim;
        val_f1 = v.mean_f1;
        ssim_history.emplace_back(st.step, val_ssim);
        checkpoint(st.step);
      }
      log << "{\"step\":" << st.step << ",\"wall_time\":" << wall << ",\"loss\":" << loss
          << ",\"lr\":" << tc.learning_rate;
      if (do_eval)
        log << ",\"val_ssim\":" << val_ssim << ",\"val_f1\":" << val_f1;
      else
        log << ",\"val_ssim\":null,\"val_f1\":null";
      log << "}\n";
      log.flush();
    }
  }

  // Persist final state (last-good parameters when diverged: train_step
  // throws before applying a non-finite update).
  checkpoint(st.step);
  result.last_checkpoint = last_path;
  result.final_loss = loss;
  result.ssim_history = ssim_history;

  if (static_cast<int>(ssim_history.size()) >= tc.ema_window) {
    result.best_step = select_best_ema(ssim_history, tc.ema_window);
  } else if (!ssim_history.empty()) {
    result.best_step = ssim_history.back().first;
  } else {
    result.best_step = st.step;
  }
  std::string best_src = ckpt_name(out_dir, result.best_step, true);
  std::string best_dst = (fs::path(out_dir) / "best_ema.bin").string();
  if (fs::exists(best_src)) {
    fs::copy_file(best_src, best_dst, fs::copy_options::overwrite_existing);
  } else {
    save_checkpoint(best_dst, st.ema);
  }
  result.best_ema_checkpoint = best_dst;

  if (diverged) throw TrainingDiverged(diverged_msg);
  return result;
}

}  // namespace cdiff
