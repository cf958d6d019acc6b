#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <set>

#include "cdiff/denoiser.hpp"
#include "cdiff/rng.hpp"
#include "cdiff/training.hpp"

using namespace cdiff;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig cfg;
  cfg.base_channels = 8;
  cfg.depth = 2;
  cfg.attention_heads = 4;
  cfg.attention_layers = 2;
  cfg.layer_repetition = 1;
  cfg.dropout = 0.0;  // finite differences need a deterministic loss
  cfg.n_categories = 4;
  cfg.condition_channels = 2;
  cfg.timestep_embed_dim = 16;
  return cfg;
}

CategoricalGrid random_one_hot(int h, int w, int n, uint64_t seed) {
  Rng rng(seed);
  CategoricalGrid g(h, w, n);
  for (size_t p = 0; p < g.pixels(); ++p) g.v[p * n + rng.uniform_int(n)] = 1.0;
  return g;
}

ConditionStack random_condition(int h, int w, uint64_t seed) {
  Rng rng(seed);
  ConditionStack c(h, w, 2);
  for (auto& v : c.v) v = rng.uniform();
  return c;
}

CategoricalGrid random_soft(int h, int w, int n, uint64_t seed) {
  Rng rng(seed);
  CategoricalGrid g(h, w, n);
  for (size_t p = 0; p < g.pixels(); ++p) {
    double sum = 0.0;
    for (int c = 0; c < n; ++c) {
      g.v[p * n + c] = rng.uniform() + 1e-3;
      sum += g.v[p * n + c];
    }
    for (int c = 0; c < n; ++c) g.v[p * n + c] /= sum;
  }
  return g;
}

// dice(sigmoid(net(x))) against a fixed target, double precision.
double loss_of(DenoiserModelT<double>& model, const CategoricalGrid& xt,
               const ConditionStack& cond, const CategoricalGrid& target) {
  CategoricalGrid logits = predict_x0(model, xt, cond, 7);
  CategoricalGrid probs(logits.h, logits.w, logits.n);
  for (size_t i = 0; i < logits.v.size(); ++i) probs.v[i] = 1.0 / (1.0 + std::exp(-logits.v[i]));
  return dice_loss(probs, target, 1e-6);
}

}  // namespace

TEST_CASE("build_denoiser is deterministic in (config, seed)") {
  auto cfg = small_config();
  auto a = build_denoiser(cfg, 11);
  auto b = build_denoiser(cfg, 11);
  auto pa = a.net.params(), pb = b.net.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(*pa[i].value == *pb[i].value);
  }
  auto c = build_denoiser(cfg, 12);
  auto pc = c.net.params();
  bool any_diff = false;
  for (size_t i = 0; i < pa.size(); ++i) any_diff = any_diff || *pa[i].value != *pc[i].value;
  CHECK(any_diff);
}

TEST_CASE("build_denoiser rejects head/width mismatch") {
  auto cfg = small_config();
  cfg.attention_heads = 7;  // bottleneck width 16 is not divisible by 7
  CHECK_THROWS(build_denoiser(cfg, 1));
}

TEST_CASE("default config stays under the parameter budget") {
  DenoiserConfig cfg;  // defaults
  auto model = build_denoiser(cfg, 0);
  size_t count = 0;
  for (auto& p : model.net.params()) count += p.value->size();
  CHECK(count < 2000000);
  CHECK(count > 10000);
}

TEST_CASE("timestep_embedding boundary values and distinctness") {
  auto e = timestep_embedding(1, 8, 100);  // internally shifted to 0
  for (int k = 0; k < 4; ++k) {
    CHECK(e[k] == 0.0);
    CHECK(e[4 + k] == 1.0);
  }
  CHECK(timestep_embedding(17, 8, 100) == timestep_embedding(17, 8, 100));
  CHECK_THROWS(timestep_embedding(5, 7, 100));
  CHECK_THROWS(timestep_embedding(0, 8, 100));
  CHECK_THROWS(timestep_embedding(101, 8, 100));

  std::set<std::vector<double>> seen;
  for (int t = 1; t <= 10000; ++t) seen.insert(timestep_embedding(t, 64, 10000));
  CHECK(seen.size() == 10000);
}

TEST_CASE("predict_x0 output shape, determinism, and validation") {
  auto cfg = small_config();
  auto model = build_denoiser(cfg, 3);
  auto xt = random_one_hot(16, 24, cfg.n_categories, 5);
  auto cond = random_condition(16, 24, 6);

  auto a = predict_x0(model, xt, cond, 3);
  CHECK(a.h == 16);
  CHECK(a.w == 24);
  CHECK(a.n == cfg.n_categories);
  auto b = predict_x0(model, xt, cond, 3);
  CHECK(a.v == b.v);  // eval-mode determinism, bit-exact

  auto wrong_cond = random_condition(8, 8, 6);
  CHECK_THROWS(predict_x0(model, xt, wrong_cond, 3));
  auto wrong_n = random_one_hot(16, 24, cfg.n_categories + 1, 5);
  CHECK_THROWS(predict_x0(model, wrong_n, cond, 3));
}

TEST_CASE("forward pass preserves resolution for odd multiples of 2^depth") {
  auto cfg = small_config();  // depth 2
  auto model = build_denoiser(cfg, 3);
  // 12x20 -> bottleneck 3x5 (odd), exercising ceil pooling in attention.
  auto xt = random_one_hot(12, 20, cfg.n_categories, 5);
  auto cond = random_condition(12, 20, 6);
  auto out = predict_x0(model, xt, cond, 2);
  CHECK(out.h == 12);
  CHECK(out.w == 20);
  // Not divisible -> rejected.
  auto bad = random_one_hot(13, 20, cfg.n_categories, 5);
  auto bad_cond = random_condition(13, 20, 6);
  CHECK_THROWS(predict_x0(model, bad, bad_cond, 2));
}

TEST_CASE("analytic gradients match central finite differences") {
  auto cfg = small_config();
  auto model = build_denoiser_t<double>(cfg, 17);
  const int h = 8, w = 8;
  auto xt = random_soft(h, w, cfg.n_categories, 21);
  auto cond = random_condition(h, w, 22);
  auto target = random_one_hot(h, w, cfg.n_categories, 23);

  // Analytic: backprop of dice(sigmoid(logits)).
  model.net.zero_grads();
  CategoricalGrid logits = predict_x0(model, xt, cond, 7, /*train=*/true, /*dropout_seed=*/0);
  CategoricalGrid probs(h, w, cfg.n_categories);
  for (size_t i = 0; i < logits.v.size(); ++i) probs.v[i] = 1.0 / (1.0 + std::exp(-logits.v[i]));
  CategoricalGrid dprobs = dice_loss_grad(probs, target, 1e-6);
  nn::Tensor<double> dy(cfg.n_categories, h, w);
  for (int c = 0; c < cfg.n_categories; ++c)
    for (int i = 0; i < h * w; ++i) {
      size_t idx = static_cast<size_t>(i) * cfg.n_categories + c;
      dy.plane(c)[i] = dprobs.v[idx] * probs.v[idx] * (1.0 - probs.v[idx]);
    }
  model.net.backward(dy);

  auto params = model.net.params();
  size_t total = 0;
  for (auto& p : params) total += p.value->size();

  // 100 random parameters across all arrays.
  Rng pick(41);
  const double fd_h = 1e-3;
  int checked = 0, nonzero_checked = 0;
  while (checked < 100) {
    size_t flat = pick.uniform_int(total);
    size_t ai = 0;
    while (flat >= params[ai].value->size()) {
      flat -= params[ai].value->size();
      ++ai;
    }
    double& theta = (*params[ai].value)[flat];
    const double orig = theta;
    theta = orig + fd_h;
    double lp = loss_of(model, xt, cond, target);
    theta = orig - fd_h;
    double lm = loss_of(model, xt, cond, target);
    theta = orig;
    double fd = (lp - lm) / (2.0 * fd_h);
    double an = (*params[ai].grad)[flat];
    double denom = std::max({std::abs(fd), std::abs(an), 1e-10});
    CHECK(std::abs(fd - an) / denom <= 1e-3);
    if (std::abs(fd) > 1e-8) ++nonzero_checked;
    ++checked;
  }
  CHECK(nonzero_checked > 50);  // the check must not pass vacuously
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  auto cfg = small_config();
  cfg.dropout = 0.01;
  auto model = build_denoiser(cfg, 29);
  model.step = 1234;
  model.is_ema = true;

  auto path = std::filesystem::temp_directory_path() / "cdiff_test_ckpt.bin";
  save_checkpoint(path.string(), model);
  auto loaded = load_checkpoint(path.string());
  CHECK(loaded.config == cfg);
  CHECK(loaded.step == 1234);
  CHECK(loaded.is_ema);

  auto xt = random_one_hot(8, 8, cfg.n_categories, 31);
  auto cond = random_condition(8, 8, 32);
  auto a = predict_x0(model, xt, cond, 2);
  auto b = predict_x0(loaded, xt, cond, 2);
  CHECK(a.v == b.v);

  // save(load(x)) produces identical bytes.
  auto path2 = std::filesystem::temp_directory_path() / "cdiff_test_ckpt2.bin";
  save_checkpoint(path2.string(), loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("train-mode dropout is seeded and eval mode ignores it") {
  auto cfg = small_config();
  cfg.dropout = 0.5;  // large so the effect is visible
  auto model = build_denoiser(cfg, 33);
  auto xt = random_one_hot(8, 8, cfg.n_categories, 34);
  auto cond = random_condition(8, 8, 35);

  auto t1 = predict_x0(model, xt, cond, 2, true, 100);
  auto t2 = predict_x0(model, xt, cond, 2, true, 100);
  CHECK(t1.v == t2.v);  // same dropout seed
  auto t3 = predict_x0(model, xt, cond, 2, true, 101);
  CHECK(t1.v != t3.v);  // different mask

  auto e1 = predict_x0(model, xt, cond, 2);
  auto e2 = predict_x0(model, xt, cond, 2);
  CHECK(e1.v == e2.v);
  CHECK(e1.v != t1.v);
}
