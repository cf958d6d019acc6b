#include "cdiff/contour.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <stdexcept>

namespace cdiff {

namespace {

// Clockwise Moore neighborhood starting at west: W, NW, N, NE, E, SE, S, SW.
constexpr int kDy[8] = {0, -1, -1, -1, 0, 1, 1, 1};
constexpr int kDx[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

// Moore border following from the component's topmost-leftmost pixel.
// Terminates when re-entering the start pixel from the initial backtrack
// direction (Jacob's criterion), so open arcs are traced down one side and
// back along the other.
Contour trace_component(const BinaryImage& mask, int sy, int sx) {
  Contour c;
  c.closed = true;
  auto fg = [&](int y, int x) { return mask.in_bounds(y, x) && mask.at(y, x) != 0; };

  int cy = sy, cx = sx;
  int backtrack = 0;  // pixel left of the start is background by scan order
  int first_move = -1;
  const size_t limit = 4 * mask.bits.size() + 8;
  while (true) {
    c.points.emplace_back(cy, cx);
    int dir = -1;
    for (int k = 1; k <= 8; ++k) {
      int cand = (backtrack + k) % 8;
      if (fg(cy + kDy[cand], cx + kDx[cand])) {
        dir = cand;
        break;
      }
    }
    if (dir < 0) break;  // isolated pixel
    if (first_move < 0) first_move = dir;
    cy += kDy[dir];
    cx += kDx[dir];
    // Came from the opposite direction; resume the clockwise scan there.
    backtrack = (dir + 4) % 8;
    if (cy == sy && cx == sx) {
      // Peek the next move from the start; stop on the initial state.
      int next = -1;
      for (int k = 1; k <= 8; ++k) {
        int cand = (backtrack + k) % 8;
        if (fg(cy + kDy[cand], cx + kDx[cand])) {
          next = cand;
          break;
        }
      }
      if (next == first_move || next < 0) break;
    }
    if (c.points.size() > limit) break;  // safety cap
  }
  return c;
}

}  // namespace

std::vector<Contour> trace_contours(const BinaryImage& mask) {
  std::vector<Contour> out;
  std::vector<int> label(mask.bits.size(), -1);
  int next_label = 0;
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) {
      size_t idx = static_cast<size_t>(y) * mask.w + x;
      if (!mask.bits[idx] || label[idx] >= 0) continue;
      // New component: flood fill the label, then trace from this pixel
      // (scan order makes it the topmost-leftmost one).
      std::queue<PixelCoord> q;
      q.emplace(y, x);
      label[idx] = next_label;
      while (!q.empty()) {
        auto [py, px] = q.front();
        q.pop();
        for (int d = 0; d < 8; ++d) {
          int ny = py + kDy[d], nx = px + kDx[d];
          if (!mask.in_bounds(ny, nx)) continue;
          size_t nidx = static_cast<size_t>(ny) * mask.w + nx;
          if (mask.bits[nidx] && label[nidx] < 0) {
            label[nidx] = next_label;
            q.emplace(ny, nx);
          }
        }
      }
      ++next_label;
      out.push_back(trace_component(mask, y, x));
    }
  }
  return out;
}

const Contour& longest_contour(const std::vector<Contour>& contours) {
  if (contours.empty()) throw std::invalid_argument("longest_contour: empty input");
  size_t best = 0;
  for (size_t i = 1; i < contours.size(); ++i)
    if (contours[i].size() > contours[best].size()) best = i;
  return contours[best];
}

BinaryImage rasterize_contour(const Contour& contour, int h, int w, int thickness) {
  if (thickness < 1) throw std::invalid_argument("rasterize_contour: thickness must be >= 1");
  for (const auto& [y, x] : contour.points)
    if (y < 0 || y >= h || x < 0 || x >= w)
      throw std::invalid_argument("rasterize_contour: point out of bounds");
  // Disk of diameter = thickness around a center offset by (t-1)/2, so even
  // thicknesses grow down-right and odd ones stay centered.
  std::vector<PixelCoord> offsets;
  const double a = (thickness - 1) / 2.0;
  const double r2 = thickness * thickness / 4.0;
  const int lo = -(thickness - 1) / 2, hi = thickness / 2;
  for (int dy = lo; dy <= hi; ++dy)
    for (int dx = lo; dx <= hi; ++dx)
      if ((dy - a) * (dy - a) + (dx - a) * (dx - a) <= r2 + 1e-9) offsets.emplace_back(dy, dx);

  BinaryImage out(h, w);
  for (const auto& [y, x] : contour.points)
    for (const auto& [dy, dx] : offsets) {
      int ny = y + dy, nx = x + dx;
      if (out.in_bounds(ny, nx)) out.at(ny, nx) = 1;
    }
  return out;
}

namespace {
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -1 - i : 2 * n - 1 - i;
  return i;
}
}  // namespace

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  GrayImage tmp(img.h, img.w), out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * img.at(y, reflect_index(x + i, img.w));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp.at(reflect_index(y + i, img.h), x);
      out.at(y, x) = acc;
    }
  return out;
}

namespace {

// Neighbors in the Zhang-Suen order p2..p9: N, NE, E, SE, S, SW, W, NW.
constexpr int kZsDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kZsDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};

inline void neighborhood(const BinaryImage& img, int y, int x, int p[8]) {
  for (int i = 0; i < 8; ++i) {
    int ny = y + kZsDy[i], nx = x + kZsDx[i];
    p[i] = (img.in_bounds(ny, nx) && img.at(ny, nx)) ? 1 : 0;
  }
}

inline int transitions(const int p[8]) {
  int a = 0;
  for (int i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1) ? 1 : 0;
  return a;
}

inline int neighbor_count(const int p[8]) {
  int b = 0;
  for (int i = 0; i < 8; ++i) b += p[i];
  return b;
}

bool thin_pass_zhang_suen(BinaryImage& img, int subiter) {
  std::vector<PixelCoord> to_delete;
  int p[8];
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      if (!img.at(y, x)) continue;
      neighborhood(img, y, x, p);
      int b = neighbor_count(p);
      if (b < 2 || b > 6) continue;
      if (transitions(p) != 1) continue;
      // p2=N p4=E p6=S p8=W at indices 0,2,4,6.
      if (subiter == 0) {
        if (p[0] * p[2] * p[4] != 0) continue;
        if (p[2] * p[4] * p[6] != 0) continue;
      } else {
        if (p[0] * p[2] * p[6] != 0) continue;
        if (p[0] * p[4] * p[6] != 0) continue;
      }
      to_delete.emplace_back(y, x);
    }
  for (const auto& [y, x] : to_delete) img.at(y, x) = 0;
  return !to_delete.empty();
}

bool thin_pass_guo_hall(BinaryImage& img, int subiter) {
  std::vector<PixelCoord> to_delete;
  int p[8];
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      if (!img.at(y, x)) continue;
      neighborhood(img, y, x, p);
      // p[0..7] = p2..p9 in the usual N, NE, E, SE, S, SW, W, NW notation.
      int c = (!p[0] && (p[1] || p[2])) + (!p[2] && (p[3] || p[4])) +
              (!p[4] && (p[5] || p[6])) + (!p[6] && (p[7] || p[0]));
      int n1 = (p[7] || p[0]) + (p[1] || p[2]) + (p[3] || p[4]) + (p[5] || p[6]);
      int n2 = (p[0] || p[1]) + (p[2] || p[3]) + (p[4] || p[5]) + (p[6] || p[7]);
      int n = std::min(n1, n2);
      int m = subiter == 0 ? ((p[4] || p[5] || !p[7]) && p[6]) : ((p[0] || p[1] || !p[3]) && p[2]);
      if (c == 1 && n >= 2 && n <= 3 && m == 0) to_delete.emplace_back(y, x);
    }
  for (const auto& [y, x] : to_delete) img.at(y, x) = 0;
  return !to_delete.empty();
}

// Clears remaining 2x2 blocks by deleting 8-simple pixels (crossing number
// 1, at least 2 neighbors), which cannot merge, split, or drop components.
void remove_square_blocks(BinaryImage& img) {
  bool changed = true;
  int p[8];
  while (changed) {
    changed = false;
    for (int y = 0; y + 1 < img.h; ++y)
      for (int x = 0; x + 1 < img.w; ++x) {
        if (!(img.at(y, x) && img.at(y, x + 1) && img.at(y + 1, x) && img.at(y + 1, x + 1)))
          continue;
        for (const auto& [cy, cx] :
             {PixelCoord{y, x}, {y, x + 1}, {y + 1, x}, {y + 1, x + 1}}) {
          neighborhood(img, cy, cx, p);
          if (transitions(p) == 1 && neighbor_count(p) >= 2) {
            img.at(cy, cx) = 0;
            changed = true;
            break;
          }
        }
      }
  }
}

}  // namespace

BinaryImage skeletonize(const BinaryImage& b, ThinningRule rule) {
  BinaryImage img = b;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int sub = 0; sub < 2; ++sub) {
      bool c = rule == ThinningRule::ZhangSuen ? thin_pass_zhang_suen(img, sub)
                                               : thin_pass_guo_hall(img, sub);
      changed = changed || c;
    }
  }
  remove_square_blocks(img);
  return img;
}

namespace {

// Separable square max/min filter. `outside` is the value assumed beyond the
// image border.
BinaryImage square_filter(const BinaryImage& in, int radius, bool take_max, uint8_t outside) {
  BinaryImage tmp(in.h, in.w), out(in.h, in.w);
  auto get_h = [&](int y, int x) -> uint8_t {
    return (x < 0 || x >= in.w) ? outside : in.at(y, x);
  };
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      uint8_t v = take_max ? 0 : 1;
      for (int i = -radius; i <= radius; ++i) {
        uint8_t s = get_h(y, x + i);
        v = take_max ? std::max(v, s) : std::min(v, s);
      }
      tmp.at(y, x) = v;
    }
  auto get_v = [&](int y, int x) -> uint8_t {
    return (y < 0 || y >= in.h) ? outside : tmp.at(y, x);
  };
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      uint8_t v = take_max ? 0 : 1;
      for (int i = -radius; i <= radius; ++i) {
        uint8_t s = get_v(y + i, x);
        v = take_max ? std::max(v, s) : std::min(v, s);
      }
      out.at(y, x) = v;
    }
  return out;
}

}  // namespace

BinaryImage morph_close(const BinaryImage& b, int radius) {
  if (radius < 1) throw std::invalid_argument("morph_close: radius must be >= 1");
  BinaryImage dilated = square_filter(b, radius, /*take_max=*/true, /*outside=*/0);
  return square_filter(dilated, radius, /*take_max=*/false, /*outside=*/1);
}

namespace {

bool is_closed_loop(const Contour& c) {
  if (c.size() < 8) return false;
  std::set<PixelCoord> seen(c.points.begin(), c.points.end());
  return seen.size() == c.points.size();
}

}  // namespace

LongestClosedResult longest_closed_contour(const BinaryImage& b) {
  LongestClosedResult res;
  res.image = BinaryImage(b.h, b.w);
  auto contours = trace_contours(b);
  if (contours.empty()) return res;

  const Contour* best = nullptr;
  for (const auto& c : contours)
    if (is_closed_loop(c) && (!best || c.size() > best->size())) best = &c;
  res.found_closed = best != nullptr;
  if (!best) {
    for (const auto& c : contours)
      if (!best || c.size() > best->size()) best = &c;
  }
  res.image = rasterize_contour(*best, b.h, b.w, 1);
  return res;
}

BinaryImage truncate_with_mask(const BinaryImage& contour_img, const BinaryImage& trunc) {
  if (contour_img.h != trunc.h || contour_img.w != trunc.w)
    throw std::invalid_argument("truncate_with_mask: shape mismatch");
  BinaryImage out(contour_img.h, contour_img.w);
  for (size_t i = 0; i < out.bits.size(); ++i)
    out.bits[i] = contour_img.bits[i] & trunc.bits[i];
  return out;
}

namespace {

PostprocessResult postprocess_gray(const GrayImage& gray, const PostprocessOptions& opts) {
  PostprocessResult res;
  BinaryImage bin = threshold_gray(gaussian_blur(gray, opts.sigma), 0.5);
  bin = skeletonize(bin, opts.rule);
  bin = morph_close(bin, opts.close_radius);
  if (opts.reskeletonize_after_close) bin = skeletonize(bin, opts.rule);
  if (opts.pick_longest_closed) {
    auto lcc = longest_closed_contour(bin);
    res.found_closed = lcc.found_closed;
    bin = std::move(lcc.image);
  }
  if (opts.trunc) bin = truncate_with_mask(bin, *opts.trunc);
  res.empty_output = bin.count() == 0;
  res.image = std::move(bin);
  return res;
}

}  // namespace

PostprocessResult postprocess(const BinaryImage& decoded, const PostprocessOptions& opts) {
  return postprocess_gray(to_gray(decoded), opts);
}

PostprocessResult postprocess_prob(const GrayImage& prob_map, const PostprocessOptions& opts) {
  return postprocess_gray(prob_map, opts);
}

}  // namespace cdiff
