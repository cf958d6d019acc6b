#include "cdiff/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace cdiff {

CategoricalGrid one_hot_from_mask(const BinaryImage& mask, int n, int on_cat, int off_cat) {
  if (on_cat < 0 || on_cat >= n || off_cat < 0 || off_cat >= n)
    throw std::invalid_argument("one_hot_from_mask: category out of range");
  CategoricalGrid g(mask.h, mask.w, n);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) g.at(y, x, mask.at(y, x) ? on_cat : off_cat) = 1.0;
  return g;
}

bool is_distribution(const CategoricalGrid& g, double tol) {
  for (size_t p = 0; p < g.pixels(); ++p) {
    const double* px = g.v.data() + p * g.n;
    double s = 0.0;
    for (int c = 0; c < g.n; ++c) {
      if (px[c] < 0.0 || !std::isfinite(px[c])) return false;
      s += px[c];
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

bool is_one_hot(const CategoricalGrid& g) {
  for (size_t p = 0; p < g.pixels(); ++p) {
    const double* px = g.v.data() + p * g.n;
    int ones = 0;
    for (int c = 0; c < g.n; ++c) {
      if (px[c] == 1.0)
        ++ones;
      else if (px[c] != 0.0)
        return false;
    }
    if (ones != 1) return false;
  }
  return true;
}

int argmax_pixel(const double* p, int n) {
  int best = 0;
  for (int c = 1; c < n; ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

}  // namespace cdiff
