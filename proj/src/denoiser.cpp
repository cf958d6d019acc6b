#include "cdiff/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cdiff {

namespace {
std::vector<double> sinusoid_embedding(int t, int dim) {
  std::vector<double> emb(dim);
  const int half = dim / 2;
  const double tt = static_cast<double>(t - 1);  // 0-based internally
  for (int k = 0; k < half; ++k) {
    double freq = std::pow(10000.0, -2.0 * k / dim);
    emb[k] = std::sin(tt * freq);
    emb[half + k] = std::cos(tt * freq);
  }
  return emb;
}
}  // namespace

std::vector<double> timestep_embedding(int t, int dim, int T) {
  if (dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be even");
  if (t < 1 || t > T) throw std::invalid_argument("timestep_embedding: t outside [1, T]");
  return sinusoid_embedding(t, dim);
}

template <class S>
void DenoiserNet<S>::build(const DenoiserConfig& config) {
  cfg = config;
  if (cfg.base_channels < 1) throw std::invalid_argument("denoiser: base_channels must be >= 1");
  if (cfg.depth < 1) throw std::invalid_argument("denoiser: depth must be >= 1");
  if (cfg.bottleneck_channels() % cfg.attention_heads != 0)
    throw std::invalid_argument("denoiser: heads must divide the bottleneck width");
  if (cfg.timestep_embed_dim % 2 != 0)
    throw std::invalid_argument("denoiser: timestep_embed_dim must be even");

  const int cin = cfg.input_channels();
  const int c0 = cfg.stem_channels();
  stem.configure("stem", cin, c0, 3, 1);

  enc.resize(cfg.depth);
  int prev = c0;
  for (int i = 0; i < cfg.depth; ++i) {
    const int ci = cfg.level_channels(i);
    auto nm = "enc" + std::to_string(i);
    enc[i].down.configure(nm + ".down", prev, ci, 3, 2);
    enc[i].inject.configure(nm + ".inject", cin, ci, 1, 1);
    enc[i].blocks.resize(cfg.layer_repetition);
    for (int r = 0; r < cfg.layer_repetition; ++r)
      enc[i].blocks[r].configure(nm + ".block" + std::to_string(r), ci);
    prev = ci;
  }

  const int cb = cfg.bottleneck_channels();
  temb1.configure("temb.fc1", cfg.timestep_embed_dim, cb);
  temb2.configure("temb.fc2", cb, cb);
  mid_pre.configure("mid.pre", cb);
  mid_post.configure("mid.post", cb);
  attn.resize(cfg.attention_layers);
  for (int i = 0; i < cfg.attention_layers; ++i)
    attn[i].configure("mid.attn" + std::to_string(i), cb, cfg.attention_heads, cfg.dropout);

  dec.resize(cfg.depth);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int ci = cfg.level_channels(i);
    const int cout = i > 0 ? cfg.level_channels(i - 1) : c0;
    auto nm = "dec" + std::to_string(i);
    dec[i].up.configure(nm + ".up", ci, cout, 3, 1);
    dec[i].fuse.configure(nm + ".fuse", 2 * cout, cout, 3, 1);
  }

  head1.configure("head.conv1", c0, c0, 3, 1);
  head2.configure("head.conv2", c0, cfg.n_categories, 1, 1);
}

template <class S>
void DenoiserNet<S>::init_params(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x64656e6f));
  stem.init(rng);
  for (auto& e : enc) {
    e.down.init(rng);
    e.inject.init(rng, 0.5);
    for (auto& b : e.blocks) b.init(rng);
  }
  temb1.init(rng);
  temb2.init(rng, 0.1);
  mid_pre.init(rng);
  mid_post.init(rng);
  for (auto& a : attn) a.init(rng);
  for (auto& d : dec) {
    d.up.init(rng);
    d.fuse.init(rng);
  }
  head1.init(rng);
  head2.init(rng);
}

template <class S>
nn::ParamList<S> DenoiserNet<S>::params() {
  nn::ParamList<S> out;
  stem.collect(out);
  for (auto& e : enc) {
    e.down.collect(out);
    e.inject.collect(out);
    for (auto& b : e.blocks) b.collect(out);
  }
  temb1.collect(out);
  temb2.collect(out);
  mid_pre.collect(out);
  mid_post.collect(out);
  for (auto& a : attn) a.collect(out);
  for (auto& d : dec) {
    d.up.collect(out);
    d.fuse.collect(out);
  }
  head1.collect(out);
  head2.collect(out);
  return out;
}

template <class S>
void DenoiserNet<S>::zero_grads() {
  for (auto& p : params()) std::fill(p.grad->begin(), p.grad->end(), S(0));
}

template <class S>
nn::Tensor<S> DenoiserNet<S>::forward(const nn::Tensor<S>& x, int t, bool train,
                                      uint64_t dropout_seed) {
  if (x.c != cfg.input_channels())
    throw std::invalid_argument("denoiser forward: input channel mismatch");
  const int div = 1 << cfg.depth;
  if (x.h % div != 0 || x.w % div != 0)
    throw std::invalid_argument("denoiser forward: H and W must be divisible by 2^depth");

  if (train) saved_skip_hw.clear();

  nn::Tensor<S> s = stem_act.forward(stem.forward(x, train), train);
  std::vector<nn::Tensor<S>> skips;
  skips.push_back(s);

  nn::Tensor<S> pooled = x;
  nn::Tensor<S> cur = std::move(s);
  for (int i = 0; i < cfg.depth; ++i) {
    pooled = nn::avg_pool2_ceil(pooled);
    nn::Tensor<S> a = enc[i].down.forward(cur, train);
    nn::Tensor<S> b = enc[i].inject.forward(pooled, train);
    nn::add_inplace(a, b);
    cur = enc[i].act.forward(a, train);
    for (auto& blk : enc[i].blocks) cur = blk.forward(cur, train);
    if (i < cfg.depth - 1) skips.push_back(cur);
  }

  // Timestep conditioning: sinusoidal embedding -> MLP -> per-channel bias.
  auto emb_d = sinusoid_embedding(t, cfg.timestep_embed_dim);
  std::vector<S> emb(emb_d.begin(), emb_d.end());
  std::vector<S> e1 = temb1.forward(emb, train);
  nn::Tensor<S> e1t(static_cast<int>(e1.size()), 1, 1);
  e1t.v = e1;
  nn::Tensor<S> e2t = temb_act.forward(e1t, train);
  std::vector<S> bias = temb2.forward(e2t.v, train);
  const int bn = cur.hw();
  for (int ci = 0; ci < cur.c; ++ci) {
    S* pl = cur.plane(ci);
    for (int j = 0; j < bn; ++j) pl[j] += bias[ci];
  }

  cur = mid_pre.forward(cur, train);
  Rng drop_rng(derive_seed(dropout_seed, 0x64726f70));
  for (auto& a : attn) cur = a.forward(cur, train, train ? &drop_rng : nullptr);
  cur = mid_post.forward(cur, train);

  for (int i = cfg.depth - 1; i >= 0; --i) {
    if (train) {
      saved_skip_hw.push_back(cur.h);
      saved_skip_hw.push_back(cur.w);
    }
    nn::Tensor<S> up = nn::nearest_unpool2(cur, cur.h * 2, cur.w * 2);
    nn::Tensor<S> u = dec[i].up.forward(up, train);
    nn::Tensor<S> cat = nn::concat_channels(skips[i], u);
    cur = dec[i].act.forward(dec[i].fuse.forward(cat, train), train);
  }

  nn::Tensor<S> out = head2.forward(head_act.forward(head1.forward(cur, train), train), train);
  return out;
}

template <class S>
void DenoiserNet<S>::backward(const nn::Tensor<S>& dy) {
  nn::Tensor<S> d = head1.backward(head_act.backward(head2.backward(dy)));

  // Decoder ran i = depth-1 .. 0, so gradients flow back i = 0 .. depth-1.
  std::vector<nn::Tensor<S>> dskips(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    d = dec[i].act.backward(d);
    nn::Tensor<S> dcat = dec[i].fuse.backward(d);
    const int skip_c = i > 0 ? cfg.level_channels(i - 1) : cfg.stem_channels();
    nn::Tensor<S> dskip(skip_c, dcat.h, dcat.w);
    nn::Tensor<S> dup(dcat.c - skip_c, dcat.h, dcat.w);
    std::copy(dcat.v.begin(), dcat.v.begin() + dskip.v.size(), dskip.v.begin());
    std::copy(dcat.v.begin() + dskip.v.size(), dcat.v.end(), dup.v.begin());
    dskips[i] = std::move(dskip);
    nn::Tensor<S> dafter = dec[i].up.backward(dup);
    const int ph = saved_skip_hw[2 * (cfg.depth - 1 - i)];
    const int pw = saved_skip_hw[2 * (cfg.depth - 1 - i) + 1];
    d = nn::nearest_unpool2_backward(dafter, ph, pw);
  }

  d = mid_post.backward(d);
  for (int i = static_cast<int>(attn.size()) - 1; i >= 0; --i) d = attn[i].backward(d);
  d = mid_pre.backward(d);

  // Timestep bias add: per-channel spatial sum.
  std::vector<S> dbias(cfg.bottleneck_channels(), S(0));
  for (int ci = 0; ci < d.c; ++ci) {
    const S* pl = d.plane(ci);
    S acc(0);
    for (int j = 0; j < d.hw(); ++j) acc += pl[j];
    dbias[ci] = acc;
  }
  std::vector<S> de2 = temb2.backward(dbias);
  nn::Tensor<S> de2t(static_cast<int>(de2.size()), 1, 1);
  de2t.v = de2;
  nn::Tensor<S> de1t = temb_act.backward(de2t);
  temb1.backward(de1t.v);  // embedding itself is not learnable

  for (int i = cfg.depth - 1; i >= 0; --i) {
    if (i < cfg.depth - 1) nn::add_inplace(d, dskips[i + 1]);
    for (int r = static_cast<int>(enc[i].blocks.size()) - 1; r >= 0; --r)
      d = enc[i].blocks[r].backward(d);
    d = enc[i].act.backward(d);
    enc[i].inject.backward(d, /*need_dx=*/false);
    d = enc[i].down.backward(d);
  }

  nn::add_inplace(d, dskips[0]);
  d = stem_act.backward(d);
  stem.backward(d, /*need_dx=*/false);
}

template <class S>
DenoiserModelT<S> build_denoiser_t(const DenoiserConfig& config, uint64_t seed) {
  DenoiserModelT<S> model;
  model.config = config;
  model.net.build(config);
  model.net.init_params(seed);
  return model;
}

DenoiserModel build_denoiser(const DenoiserConfig& config, uint64_t seed) {
  return build_denoiser_t<float>(config, seed);
}

template <class S>
CategoricalGrid predict_x0(DenoiserModelT<S>& model, const CategoricalGrid& xt,
                           const ConditionStack& condition, int t, bool train,
                           uint64_t dropout_seed) {
  const DenoiserConfig& cfg = model.config;
  if (xt.n != cfg.n_categories)
    throw std::invalid_argument("predict_x0: n_categories mismatch");
  if (condition.channels != cfg.condition_channels)
    throw std::invalid_argument("predict_x0: condition channel mismatch");
  if (condition.h != xt.h || condition.w != xt.w)
    throw std::invalid_argument("predict_x0: spatial shape mismatch");

  nn::Tensor<S> in(cfg.input_channels(), xt.h, xt.w);
  const int hw = xt.h * xt.w;
  for (int c = 0; c < condition.channels; ++c) {
    const double* src = condition.plane(c);
    S* dst = in.plane(c);
    for (int i = 0; i < hw; ++i) dst[i] = static_cast<S>(src[i]);
  }
  for (int c = 0; c < xt.n; ++c) {
    S* dst = in.plane(condition.channels + c);
    for (int i = 0; i < hw; ++i) dst[i] = static_cast<S>(xt.v[static_cast<size_t>(i) * xt.n + c]);
  }

  nn::Tensor<S> out = model.net.forward(in, t, train, dropout_seed);
  CategoricalGrid scores(xt.h, xt.w, xt.n);
  for (int c = 0; c < xt.n; ++c) {
    const S* src = out.plane(c);
    for (int i = 0; i < hw; ++i) {
      double v = static_cast<double>(src[i]);
      if (!std::isfinite(v)) throw std::runtime_error("predict_x0: non-finite activation (model divergence)");
      scores.v[static_cast<size_t>(i) * xt.n + c] = v;
    }
  }
  return scores;
}

namespace {

constexpr char kMagic[8] = {'C', 'D', 'F', 'C', 'K', 'P', 'T', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, DenoiserModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 8);
  write_pod<uint32_t>(out, 1);  // version
  write_pod<uint32_t>(out, model.is_ema ? 1 : 0);
  write_pod<int64_t>(out, model.step);
  const DenoiserConfig& c = model.config;
  for (int v : {c.base_channels, c.depth, c.attention_heads, c.attention_layers,
                c.layer_repetition, c.n_categories, c.condition_channels, c.timestep_embed_dim})
    write_pod<int32_t>(out, v);
  write_pod<double>(out, c.dropout);

  auto params = model.net.params();
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (auto& p : params) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(p.shape.size()));
    for (int d : p.shape) write_pod<int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value->data()),
              static_cast<std::streamsize>(p.value->size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

DenoiserModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(in);
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  uint32_t flags = read_pod<uint32_t>(in);
  int64_t step = read_pod<int64_t>(in);
  DenoiserConfig c;
  c.base_channels = read_pod<int32_t>(in);
  c.depth = read_pod<int32_t>(in);
  c.attention_heads = read_pod<int32_t>(in);
  c.attention_layers = read_pod<int32_t>(in);
  c.layer_repetition = read_pod<int32_t>(in);
  c.n_categories = read_pod<int32_t>(in);
  c.condition_channels = read_pod<int32_t>(in);
  c.timestep_embed_dim = read_pod<int32_t>(in);
  c.dropout = read_pod<double>(in);

  DenoiserModel model;
  model.config = c;
  model.net.build(c);
  model.is_ema = flags & 1;
  model.step = step;

  auto params = model.net.params();
  uint32_t n_arrays = read_pod<uint32_t>(in);
  if (n_arrays != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (auto& p : params) {
    uint32_t name_len = read_pod<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != p.name) throw std::runtime_error("load_checkpoint: unexpected array " + name);
    uint32_t ndim = read_pod<uint32_t>(in);
    size_t count = 1;
    for (uint32_t i = 0; i < ndim; ++i) count *= static_cast<size_t>(read_pod<int32_t>(in));
    if (count != p.value->size())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(p.value->data()),
            static_cast<std::streamsize>(count * sizeof(float)));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return model;
}

template struct DenoiserNet<float>;
template struct DenoiserNet<double>;
template DenoiserModelT<float> build_denoiser_t<float>(const DenoiserConfig&, uint64_t);
template DenoiserModelT<double> build_denoiser_t<double>(const DenoiserConfig&, uint64_t);
template CategoricalGrid predict_x0<float>(DenoiserModelT<float>&, const CategoricalGrid&,
                                           const ConditionStack&, int, bool, uint64_t);
template CategoricalGrid predict_x0<double>(DenoiserModelT<double>&, const CategoricalGrid&,
                                            const ConditionStack&, int, bool, uint64_t);

}  // namespace cdiff
