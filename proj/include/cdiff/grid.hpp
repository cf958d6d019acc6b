#pragma once

#include <vector>

#include "cdiff/image.hpp"

namespace cdiff {

// H x W x N per-pixel categorical state: either a distribution (channels sum
// to 1) or a one-hot assignment. Channel-last layout.
struct CategoricalGrid {
  int h = 0;
  int w = 0;
  int n = 0;
  std::vector<double> v;

  CategoricalGrid() = default;
  CategoricalGrid(int h_, int w_, int n_)
      : h(h_), w(w_), n(n_), v(static_cast<size_t>(h_) * w_ * n_, 0.0) {}

  double* pixel(int y, int x) { return v.data() + (static_cast<size_t>(y) * w + x) * n; }
  const double* pixel(int y, int x) const {
    return v.data() + (static_cast<size_t>(y) * w + x) * n;
  }
  double& at(int y, int x, int c) { return pixel(y, x)[c]; }
  double at(int y, int x, int c) const { return pixel(y, x)[c]; }
  size_t pixels() const { return static_cast<size_t>(h) * w; }

  bool same_shape(const CategoricalGrid& o) const { return h == o.h && w == o.w && n == o.n; }
};

// One-hot grid from a binary image: on-pixels at category `on_cat`,
// off-pixels at category `off_cat`.
CategoricalGrid one_hot_from_mask(const BinaryImage& mask, int n, int on_cat, int off_cat);

// True when every pixel's channels are nonnegative and sum to 1 within tol.
bool is_distribution(const CategoricalGrid& g, double tol = 1e-6);
// True when every pixel has exactly one channel equal to 1 and the rest 0.
bool is_one_hot(const CategoricalGrid& g);

// Argmax category per pixel; ties break toward the lower index.
int argmax_pixel(const double* p, int n);

}  // namespace cdiff
