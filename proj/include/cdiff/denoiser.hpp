#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cdiff/grid.hpp"
#include "cdiff/nn.hpp"

namespace cdiff {

// Per-pixel conditioning channels (image planes + guide mask), channel-planar.
struct ConditionStack {
  int h = 0, w = 0, channels = 0;
  std::vector<double> v;  // v[(c*h + y)*w + x]

  ConditionStack() = default;
  ConditionStack(int h_, int w_, int c_)
      : h(h_), w(w_), channels(c_), v(static_cast<size_t>(c_) * h_ * w_, 0.0) {}

  double* plane(int c) { return v.data() + static_cast<size_t>(c) * h * w; }
  const double* plane(int c) const { return v.data() + static_cast<size_t>(c) * h * w; }
};

struct DenoiserConfig {
  int base_channels = 16;
  int depth = 3;
  int attention_heads = 8;
  int attention_layers = 4;
  int layer_repetition = 2;
  double dropout = 0.01;
  int n_categories = 8;
  int condition_channels = 2;
  int timestep_embed_dim = 64;

  int stem_channels() const { return std::max(base_channels / 2, 4); }
  int level_channels(int i) const { return base_channels << i; }
  int bottleneck_channels() const { return level_channels(depth - 1); }
  int input_channels() const { return condition_channels + n_categories; }
  bool operator==(const DenoiserConfig& o) const = default;
};

// Sinusoidal embedding of a timestep (t is 1-based and shifted internally).
std::vector<double> timestep_embedding(int t, int dim, int T);

// Encoder-decoder x0-prediction network with a residual extra downsampling
// path (pooled raw input re-injected at each encoder level) and multi-head
// self-attention at the bottleneck.
template <class S>
struct DenoiserNet {
  DenoiserConfig cfg;

  nn::Conv2d<S> stem;
  nn::SiLU<S> stem_act;
  struct EncLevel {
    nn::Conv2d<S> down;
    nn::Conv2d<S> inject;
    nn::SiLU<S> act;
    std::vector<nn::ResBlock<S>> blocks;
  };
  std::vector<EncLevel> enc;
  nn::Linear<S> temb1, temb2;
  nn::SiLU<S> temb_act;
  nn::ResBlock<S> mid_pre, mid_post;
  std::vector<nn::Attention<S>> attn;
  struct DecLevel {
    nn::Conv2d<S> up;
    nn::Conv2d<S> fuse;
    nn::SiLU<S> act;
  };
  std::vector<DecLevel> dec;
  nn::Conv2d<S> head1;
  nn::SiLU<S> head_act;
  nn::Conv2d<S> head2;

  // Saved between forward and backward (train mode only; eval-mode forward
  // writes no member state so a shared model is safe to evaluate from
  // multiple threads).
  std::vector<int> saved_skip_hw;

  void build(const DenoiserConfig& config);
  void init_params(uint64_t seed);
  nn::ParamList<S> params();

  // x is (condition_channels + n_categories, H, W); returns raw category
  // scores at input resolution. H and W must be divisible by 2^depth.
  nn::Tensor<S> forward(const nn::Tensor<S>& x, int t, bool train, uint64_t dropout_seed = 0);
  // dY -> parameter gradients (input gradient is not produced; the input is
  // data, not a learnable).
  void backward(const nn::Tensor<S>& dy);

  void zero_grads();
};

template <class S>
struct DenoiserModelT {
  DenoiserConfig config;
  DenoiserNet<S> net;
  int64_t step = 0;
  bool is_ema = false;
};

using DenoiserModel = DenoiserModelT<float>;

template <class S>
DenoiserModelT<S> build_denoiser_t(const DenoiserConfig& config, uint64_t seed);
DenoiserModel build_denoiser(const DenoiserConfig& config, uint64_t seed);

// Raw per-pixel category scores for denoising state xt under condition.
template <class S>
CategoricalGrid predict_x0(DenoiserModelT<S>& model, const CategoricalGrid& xt,
                           const ConditionStack& condition, int t, bool train = false,
                           uint64_t dropout_seed = 0);

// Versioned binary checkpoint: config echo, named parameter arrays as 32-bit
// floats, training metadata (step, EMA flag). Little-endian.
void save_checkpoint(const std::string& path, DenoiserModel& model);
DenoiserModel load_checkpoint(const std::string& path);

// Abstract x0 predictor so inference can run against either the trained
// network or a test oracle.
class X0Predictor {
 public:
  virtual ~X0Predictor() = default;
  virtual CategoricalGrid predict(const CategoricalGrid& xt, const ConditionStack& condition,
                                  int t) = 0;
  virtual int n_categories() const = 0;
};

class ModelPredictor : public X0Predictor {
 public:
  explicit ModelPredictor(DenoiserModel& model) : model_(model) {}
  CategoricalGrid predict(const CategoricalGrid& xt, const ConditionStack& condition,
                          int t) override {
    return predict_x0(model_, xt, condition, t);
  }
  int n_categories() const override { return model_.config.n_categories; }

 private:
  DenoiserModel& model_;
};

}  // namespace cdiff
