#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdiff/rng.hpp"

namespace cdiff::nn {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Vector<S, Eigen::Dynamic>;

// CHW feature map for a single sample.
template <class S>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<S> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, S(0)) {}

  int hw() const { return h * w; }
  S* plane(int ci) { return v.data() + static_cast<size_t>(ci) * hw(); }
  const S* plane(int ci) const { return v.data() + static_cast<size_t>(ci) * hw(); }
  S& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  S at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

template <class S>
struct ParamRef {
  std::string name;
  std::vector<S>* value;
  std::vector<S>* grad;
  std::vector<int> shape;
};

template <class S>
using ParamList = std::vector<ParamRef<S>>;

template <class S>
inline void add_inplace(Tensor<S>& a, const Tensor<S>& b) {
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (k in {1,3}, stride in {1,2}, padding k/2), im2col + GEMM.

template <class S>
void im2col(const Tensor<S>& x, int k, int stride, std::vector<S>& cols, int oh, int ow) {
  const int pad = k / 2;
  const size_t kk = static_cast<size_t>(x.c) * k * k;
  cols.assign(kk * oh * ow, S(0));
  // Column-major (K x N): each output pixel's receptive field is contiguous.
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      S* col = cols.data() + (static_cast<size_t>(oy) * ow + ox) * kk;
      for (int ci = 0; ci < x.c; ++ci) {
        const S* src = x.plane(ci);
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride + kx - pad;
            *col++ = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                         ? src[static_cast<size_t>(iy) * x.w + ix]
                         : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const std::vector<S>& cols, int k, int stride, Tensor<S>& dx, int oh, int ow) {
  const int pad = k / 2;
  const size_t kk = static_cast<size_t>(dx.c) * k * k;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const S* col = cols.data() + (static_cast<size_t>(oy) * ow + ox) * kk;
      for (int ci = 0; ci < dx.c; ++ci) {
        S* dst = dx.plane(ci);
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            int ix = ox * stride + kx - pad;
            if (iy >= 0 && iy < dx.h && ix >= 0 && ix < dx.w)
              dst[static_cast<size_t>(iy) * dx.w + ix] += *col;
            ++col;
          }
        }
      }
    }
  }
}

template <class S>
struct Conv2d {
  int in_c = 0, out_c = 0, k = 3, stride = 1;
  std::vector<S> w, b, gw, gb;
  Tensor<S> saved_x;
  std::string name;

  void configure(std::string nm, int in, int out, int ksize, int stride_) {
    name = std::move(nm);
    in_c = in;
    out_c = out;
    k = ksize;
    stride = stride_;
    w.assign(static_cast<size_t>(out) * in * k * k, S(0));
    b.assign(out, S(0));
    gw.assign(w.size(), S(0));
    gb.assign(b.size(), S(0));
  }

  // Fan-in-scaled uniform init; `scale` shrinks residual-branch outputs.
  void init(Rng& rng, double scale = 1.0) {
    const double bound = scale * std::sqrt(3.0 / (static_cast<double>(in_c) * k * k));
    for (auto& x : w) x = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
    for (auto& x : b) x = S(0);
  }

  void collect(ParamList<S>& out) {
    out.push_back({name + ".w", &w, &gw, {out_c, in_c, k, k}});
    out.push_back({name + ".b", &b, &gb, {out_c}});
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    if (x.c != in_c) throw std::invalid_argument(name + ": channel mismatch");
    const int oh = (x.h + 2 * (k / 2) - k) / stride + 1;
    const int ow = (x.w + 2 * (k / 2) - k) / stride + 1;
    Tensor<S> y(out_c, oh, ow);
    const size_t kk = static_cast<size_t>(in_c) * k * k;
    const int n = oh * ow;
    if (k == 1 && stride == 1) {
      Eigen::Map<const MatRM<S>> W(w.data(), out_c, kk);
      Eigen::Map<const MatRM<S>> X(x.v.data(), in_c, n);
      Eigen::Map<MatRM<S>> Y(y.v.data(), out_c, n);
      Y.noalias() = W * X;
    } else {
      std::vector<S> cols;
      im2col(x, k, stride, cols, oh, ow);
      Eigen::Map<const MatRM<S>> W(w.data(), out_c, kk);
      Eigen::Map<const MatCM<S>> C(cols.data(), kk, n);
      Eigen::Map<MatRM<S>> Y(y.v.data(), out_c, n);
      Y.noalias() = W * C;
    }
    for (int ci = 0; ci < out_c; ++ci) {
      S* p = y.plane(ci);
      for (int i = 0; i < n; ++i) p[i] += b[ci];
    }
    if (train) saved_x = x;
    return y;
  }

  // Returns dL/dx when need_dx; always accumulates dL/dw, dL/db.
  Tensor<S> backward(const Tensor<S>& dy, bool need_dx = true) {
    const Tensor<S>& x = saved_x;
    const int oh = dy.h, ow = dy.w, n = oh * ow;
    const size_t kk = static_cast<size_t>(in_c) * k * k;
    Eigen::Map<const MatRM<S>> DY(dy.v.data(), out_c, n);
    Eigen::Map<MatRM<S>> GW(gw.data(), out_c, kk);
    for (int ci = 0; ci < out_c; ++ci) gb[ci] += DY.row(ci).sum();

    Tensor<S> dx;
    if (k == 1 && stride == 1) {
      Eigen::Map<const MatRM<S>> X(x.v.data(), in_c, n);
      GW.noalias() += DY * X.transpose();
      if (need_dx) {
        dx = Tensor<S>(in_c, x.h, x.w);
        Eigen::Map<const MatRM<S>> W(w.data(), out_c, kk);
        Eigen::Map<MatRM<S>> DX(dx.v.data(), in_c, n);
        DX.noalias() = W.transpose() * DY;
      }
      return dx;
    }
    std::vector<S> cols;
    im2col(x, k, stride, cols, oh, ow);
    Eigen::Map<const MatCM<S>> C(cols.data(), kk, n);
    GW.noalias() += DY * C.transpose();
    if (need_dx) {
      std::vector<S> dcols(kk * n);
      Eigen::Map<const MatRM<S>> W(w.data(), out_c, kk);
      Eigen::Map<MatCM<S>> DC(dcols.data(), kk, n);
      DC.noalias() = W.transpose() * DY;
      dx = Tensor<S>(in_c, x.h, x.w);
      col2im_add(dcols, k, stride, dx, oh, ow);
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Per-position normalization over channels (layer norm across C).

template <class S>
struct ChannelNorm {
  int c = 0;
  std::vector<S> gamma, beta, ggamma, gbeta;
  Tensor<S> saved_xhat;
  std::vector<S> saved_inv_std;
  std::string name;
  static constexpr double kEps = 1e-5;

  void configure(std::string nm, int channels) {
    name = std::move(nm);
    c = channels;
    gamma.assign(c, S(1));
    beta.assign(c, S(0));
    ggamma.assign(c, S(0));
    gbeta.assign(c, S(0));
  }

  void collect(ParamList<S>& out) {
    out.push_back({name + ".gamma", &gamma, &ggamma, {c}});
    out.push_back({name + ".beta", &beta, &gbeta, {c}});
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    const int n = x.hw();
    Tensor<S> y(x.c, x.h, x.w);
    Tensor<S> xhat(x.c, x.h, x.w);
    std::vector<S> inv_std(train ? n : 0);
    for (int i = 0; i < n; ++i) {
      double mu = 0.0;
      for (int ci = 0; ci < c; ++ci) mu += x.v[static_cast<size_t>(ci) * n + i];
      mu /= c;
      double var = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        double d = x.v[static_cast<size_t>(ci) * n + i] - mu;
        var += d * d;
      }
      var /= c;
      double istd = 1.0 / std::sqrt(var + kEps);
      if (train) inv_std[i] = static_cast<S>(istd);
      for (int ci = 0; ci < c; ++ci) {
        size_t idx = static_cast<size_t>(ci) * n + i;
        S xh = static_cast<S>((x.v[idx] - mu) * istd);
        xhat.v[idx] = xh;
        y.v[idx] = xh * gamma[ci] + beta[ci];
      }
    }
    if (train) {
      saved_xhat = std::move(xhat);
      saved_inv_std = std::move(inv_std);
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = dy.hw();
    Tensor<S> dx(dy.c, dy.h, dy.w);
    for (int i = 0; i < n; ++i) {
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        size_t idx = static_cast<size_t>(ci) * n + i;
        double dxh = static_cast<double>(dy.v[idx]) * gamma[ci];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * saved_xhat.v[idx];
      }
      mean_dxhat /= c;
      mean_dxhat_xhat /= c;
      for (int ci = 0; ci < c; ++ci) {
        size_t idx = static_cast<size_t>(ci) * n + i;
        double dxh = static_cast<double>(dy.v[idx]) * gamma[ci];
        dx.v[idx] = static_cast<S>(
            saved_inv_std[i] * (dxh - mean_dxhat - saved_xhat.v[idx] * mean_dxhat_xhat));
        ggamma[ci] += dy.v[idx] * saved_xhat.v[idx];
        gbeta[ci] += dy.v[idx];
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// SiLU activation.

template <class S>
struct SiLU {
  Tensor<S> saved_x;

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    Tensor<S> y(x.c, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x.v[i])));
      y.v[i] = static_cast<S>(x.v[i] * s);
    }
    if (train) saved_x = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.c, dy.h, dy.w);
    for (size_t i = 0; i < dy.v.size(); ++i) {
      double xv = saved_x.v[i];
      double s = 1.0 / (1.0 + std::exp(-xv));
      dx.v[i] = static_cast<S>(dy.v[i] * s * (1.0 + xv * (1.0 - s)));
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// 2x2 average pooling (ceil mode) and nearest-neighbor unpooling/upsampling.

template <class S>
Tensor<S> avg_pool2_ceil(const Tensor<S>& x) {
  const int oh = (x.h + 1) / 2, ow = (x.w + 1) / 2;
  Tensor<S> y(x.c, oh, ow);
  for (int ci = 0; ci < x.c; ++ci)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double sum = 0.0;
        int cnt = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int iy = 2 * oy + dy, ix = 2 * ox + dx;
            if (iy < x.h && ix < x.w) {
              sum += x.at(ci, iy, ix);
              ++cnt;
            }
          }
        y.at(ci, oy, ox) = static_cast<S>(sum / cnt);
      }
  return y;
}

template <class S>
Tensor<S> avg_pool2_ceil_backward(const Tensor<S>& dy, int in_h, int in_w) {
  Tensor<S> dx(dy.c, in_h, in_w);
  for (int ci = 0; ci < dy.c; ++ci)
    for (int oy = 0; oy < dy.h; ++oy)
      for (int ox = 0; ox < dy.w; ++ox) {
        int cnt = (std::min(2 * oy + 2, in_h) - 2 * oy) * (std::min(2 * ox + 2, in_w) - 2 * ox);
        S g = dy.at(ci, oy, ox) / static_cast<S>(cnt);
        for (int py = 2 * oy; py < std::min(2 * oy + 2, in_h); ++py)
          for (int px = 2 * ox; px < std::min(2 * ox + 2, in_w); ++px) dx.at(ci, py, px) += g;
      }
  return dx;
}

// Nearest unpool onto an (in_h, in_w) grid: pixel (y, x) reads (y/2, x/2).
template <class S>
Tensor<S> nearest_unpool2(const Tensor<S>& x, int out_h, int out_w) {
  Tensor<S> y(x.c, out_h, out_w);
  for (int ci = 0; ci < x.c; ++ci)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) y.at(ci, oy, ox) = x.at(ci, oy / 2, ox / 2);
  return y;
}

template <class S>
Tensor<S> nearest_unpool2_backward(const Tensor<S>& dy, int in_h, int in_w) {
  Tensor<S> dx(dy.c, in_h, in_w);
  for (int ci = 0; ci < dy.c; ++ci)
    for (int oy = 0; oy < dy.h; ++oy)
      for (int ox = 0; ox < dy.w; ++ox) dx.at(ci, oy / 2, ox / 2) += dy.at(ci, oy, ox);
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention over a 2x2-pooled token grid, residual add.

template <class S>
struct Attention {
  int dim = 0, heads = 0;
  double dropout = 0.0;
  ChannelNorm<S> norm;
  std::vector<S> wq, wk, wv, wo, bq, bk, bv, bo;
  std::vector<S> gwq, gwk, gwv, gwo, gbq, gbk, gbv, gbo;
  std::string name;

  // Saved forward state (train mode).
  MatRM<S> sX, sQ, sK, sV, sO;
  std::vector<MatRM<S>> sAttn;  // per-head softmax weights
  std::vector<S> drop_mask;
  int s_h = 0, s_w = 0, s_ph = 0, s_pw = 0;

  void configure(std::string nm, int d, int h, double p) {
    name = std::move(nm);
    dim = d;
    heads = h;
    dropout = p;
    norm.configure(name + ".norm", d);
    auto alloc = [&](std::vector<S>& m, std::vector<S>& g, size_t sz) {
      m.assign(sz, S(0));
      g.assign(sz, S(0));
    };
    size_t dd = static_cast<size_t>(d) * d;
    alloc(wq, gwq, dd);
    alloc(wk, gwk, dd);
    alloc(wv, gwv, dd);
    alloc(wo, gwo, dd);
    alloc(bq, gbq, d);
    alloc(bk, gbk, d);
    alloc(bv, gbv, d);
    alloc(bo, gbo, d);
  }

  void init(Rng& rng) {
    const double bound = std::sqrt(3.0 / dim);
    for (auto* m : {&wq, &wk, &wv})
      for (auto& x : *m) x = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
    // Residual-branch output starts small so the block is near-identity.
    for (auto& x : wo) x = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound * 0.1);
  }

  void collect(ParamList<S>& out) {
    norm.collect(out);
    out.push_back({name + ".wq", &wq, &gwq, {dim, dim}});
    out.push_back({name + ".bq", &bq, &gbq, {dim}});
    out.push_back({name + ".wk", &wk, &gwk, {dim, dim}});
    out.push_back({name + ".bk", &bk, &gbk, {dim}});
    out.push_back({name + ".wv", &wv, &gwv, {dim, dim}});
    out.push_back({name + ".bv", &bv, &gbv, {dim}});
    out.push_back({name + ".wo", &wo, &gwo, {dim, dim}});
    out.push_back({name + ".bo", &bo, &gbo, {dim}});
  }

  Tensor<S> forward(const Tensor<S>& x, bool train, Rng* drop_rng) {
    Tensor<S> pooled = avg_pool2_ceil(x);
    Tensor<S> normed = norm.forward(pooled, train);
    const int ph = pooled.h, pw = pooled.w, p = ph * pw;
    const int hd = dim / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

    // Tokens as rows: X is (P x C).
    MatRM<S> X(p, dim);
    for (int ci = 0; ci < dim; ++ci)
      for (int i = 0; i < p; ++i) X(i, ci) = normed.v[static_cast<size_t>(ci) * p + i];

    Eigen::Map<const MatRM<S>> Wq(wq.data(), dim, dim), Wk(wk.data(), dim, dim),
        Wv(wv.data(), dim, dim), Wo(wo.data(), dim, dim);
    MatRM<S> Q = X * Wq.transpose(), K = X * Wk.transpose(), V = X * Wv.transpose();
    for (int i = 0; i < p; ++i)
      for (int ci = 0; ci < dim; ++ci) {
        Q(i, ci) += bq[ci];
        K(i, ci) += bk[ci];
        V(i, ci) += bv[ci];
      }

    MatRM<S> O(p, dim);
    std::vector<MatRM<S>> attn_w(train ? heads : 0);
    for (int hh = 0; hh < heads; ++hh) {
      auto Qh = Q.middleCols(hh * hd, hd);
      auto Kh = K.middleCols(hh * hd, hd);
      auto Vh = V.middleCols(hh * hd, hd);
      MatRM<S> A = (Qh * Kh.transpose()) * scale;
      for (int i = 0; i < p; ++i) {
        S mx = A.row(i).maxCoeff();
        S sum = S(0);
        for (int j = 0; j < p; ++j) {
          A(i, j) = std::exp(A(i, j) - mx);
          sum += A(i, j);
        }
        for (int j = 0; j < p; ++j) A(i, j) /= sum;
      }
      O.middleCols(hh * hd, hd).noalias() = A * Vh;
      if (train) attn_w[hh] = std::move(A);
    }

    MatRM<S> Y = O * Wo.transpose();
    for (int i = 0; i < p; ++i)
      for (int ci = 0; ci < dim; ++ci) Y(i, ci) += bo[ci];

    std::vector<S> mask;
    if (train && dropout > 0.0 && drop_rng) {
      mask.resize(static_cast<size_t>(p) * dim);
      const S keep_inv = static_cast<S>(1.0 / (1.0 - dropout));
      for (auto& m : mask) m = drop_rng->uniform() < dropout ? S(0) : keep_inv;
      for (int i = 0; i < p; ++i)
        for (int ci = 0; ci < dim; ++ci) Y(i, ci) *= mask[static_cast<size_t>(i) * dim + ci];
    }

    Tensor<S> ytok(dim, ph, pw);
    for (int ci = 0; ci < dim; ++ci)
      for (int i = 0; i < p; ++i) ytok.v[static_cast<size_t>(ci) * p + i] = Y(i, ci);
    Tensor<S> up = nearest_unpool2(ytok, x.h, x.w);
    add_inplace(up, x);

    if (train) {
      sX = std::move(X);
      sQ = std::move(Q);
      sK = std::move(K);
      sV = std::move(V);
      sO = std::move(O);
      sAttn = std::move(attn_w);
      drop_mask = std::move(mask);
      s_h = x.h;
      s_w = x.w;
      s_ph = ph;
      s_pw = pw;
    }
    return up;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int p = s_ph * s_pw, hd = dim / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
    Tensor<S> dtok_t = nearest_unpool2_backward(dy, s_ph, s_pw);

    MatRM<S> dY(p, dim);
    for (int ci = 0; ci < dim; ++ci)
      for (int i = 0; i < p; ++i) dY(i, ci) = dtok_t.v[static_cast<size_t>(ci) * p + i];

    if (!drop_mask.empty()) {
      for (int i = 0; i < p; ++i)
        for (int ci = 0; ci < dim; ++ci) dY(i, ci) *= drop_mask[static_cast<size_t>(i) * dim + ci];
    }

    Eigen::Map<const MatRM<S>> Wq(wq.data(), dim, dim), Wk(wk.data(), dim, dim),
        Wv(wv.data(), dim, dim), Wo(wo.data(), dim, dim);
    Eigen::Map<MatRM<S>> dWq(gwq.data(), dim, dim), dWk(gwk.data(), dim, dim),
        dWv(gwv.data(), dim, dim), dWo(gwo.data(), dim, dim);

    // Y = O Wo^T + bo
    dWo.noalias() += dY.transpose() * sO;
    for (int ci = 0; ci < dim; ++ci) gbo[ci] += dY.col(ci).sum();
    MatRM<S> dO = dY * Wo;

    MatRM<S> dQ = MatRM<S>::Zero(p, dim), dK = MatRM<S>::Zero(p, dim),
             dV = MatRM<S>::Zero(p, dim);
    for (int hh = 0; hh < heads; ++hh) {
      auto Qh = sQ.middleCols(hh * hd, hd);
      auto Kh = sK.middleCols(hh * hd, hd);
      auto Vh = sV.middleCols(hh * hd, hd);
      auto dOh = dO.middleCols(hh * hd, hd);
      const MatRM<S>& W = sAttn[hh];
      dV.middleCols(hh * hd, hd).noalias() = W.transpose() * dOh;
      MatRM<S> dW = dOh * Vh.transpose();
      // Softmax backward per row.
      MatRM<S> dA(p, p);
      for (int i = 0; i < p; ++i) {
        S dot = W.row(i).dot(dW.row(i));
        for (int j = 0; j < p; ++j) dA(i, j) = W(i, j) * (dW(i, j) - dot) * scale;
      }
      dQ.middleCols(hh * hd, hd).noalias() = dA * Kh;
      dK.middleCols(hh * hd, hd).noalias() = dA.transpose() * Qh;
    }

    dWq.noalias() += dQ.transpose() * sX;
    dWk.noalias() += dK.transpose() * sX;
    dWv.noalias() += dV.transpose() * sX;
    for (int ci = 0; ci < dim; ++ci) {
      gbq[ci] += dQ.col(ci).sum();
      gbk[ci] += dK.col(ci).sum();
      gbv[ci] += dV.col(ci).sum();
    }
    MatRM<S> dX = dQ * Wq + dK * Wk + dV * Wv;

    Tensor<S> dnorm(dim, s_ph, s_pw);
    for (int ci = 0; ci < dim; ++ci)
      for (int i = 0; i < p; ++i) dnorm.v[static_cast<size_t>(ci) * p + i] = dX(i, ci);
    Tensor<S> dpool = norm.backward(dnorm);
    Tensor<S> dx = avg_pool2_ceil_backward(dpool, s_h, s_w);
    add_inplace(dx, dy);  // residual branch
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Dense layer for the timestep embedding MLP.

template <class S>
struct Linear {
  int in_d = 0, out_d = 0;
  std::vector<S> w, b, gw, gb;
  std::vector<S> saved_x;
  std::string name;

  void configure(std::string nm, int in, int out) {
    name = std::move(nm);
    in_d = in;
    out_d = out;
    w.assign(static_cast<size_t>(in) * out, S(0));
    b.assign(out, S(0));
    gw.assign(w.size(), S(0));
    gb.assign(b.size(), S(0));
  }

  void init(Rng& rng, double scale = 1.0) {
    const double bound = scale * std::sqrt(3.0 / in_d);
    for (auto& x : w) x = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
  }

  void collect(ParamList<S>& out) {
    out.push_back({name + ".w", &w, &gw, {out_d, in_d}});
    out.push_back({name + ".b", &b, &gb, {out_d}});
  }

  std::vector<S> forward(const std::vector<S>& x, bool train) {
    std::vector<S> y(out_d);
    Eigen::Map<const MatRM<S>> W(w.data(), out_d, in_d);
    Eigen::Map<const VecX<S>> X(x.data(), in_d);
    Eigen::Map<VecX<S>> Y(y.data(), out_d);
    Y.noalias() = W * X;
    for (int i = 0; i < out_d; ++i) y[i] += b[i];
    if (train) saved_x = x;
    return y;
  }

  std::vector<S> backward(const std::vector<S>& dy) {
    Eigen::Map<MatRM<S>> GW(gw.data(), out_d, in_d);
    Eigen::Map<const VecX<S>> DY(dy.data(), out_d);
    Eigen::Map<const VecX<S>> X(saved_x.data(), in_d);
    GW.noalias() += DY * X.transpose();
    for (int i = 0; i < out_d; ++i) gb[i] += dy[i];
    std::vector<S> dx(in_d);
    Eigen::Map<const MatRM<S>> W(w.data(), out_d, in_d);
    Eigen::Map<VecX<S>> DX(dx.data(), in_d);
    DX.noalias() = W.transpose() * DY;
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Pre-norm residual block: x + conv(silu(conv(norm(x)))).

template <class S>
struct ResBlock {
  ChannelNorm<S> norm;
  Conv2d<S> conv1, conv2;
  SiLU<S> act;

  void configure(const std::string& nm, int channels) {
    norm.configure(nm + ".norm", channels);
    conv1.configure(nm + ".conv1", channels, channels, 3, 1);
    conv2.configure(nm + ".conv2", channels, channels, 3, 1);
  }

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng, 0.1);
  }

  void collect(ParamList<S>& out) {
    norm.collect(out);
    conv1.collect(out);
    conv2.collect(out);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    Tensor<S> y = conv2.forward(act.forward(conv1.forward(norm.forward(x, train), train), train),
                                train);
    add_inplace(y, x);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx = norm.backward(conv1.backward(act.backward(conv2.backward(dy))));
    add_inplace(dx, dy);
    return dx;
  }
};

}  // namespace cdiff::nn
