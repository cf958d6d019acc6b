#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "cdiff/image.hpp"

namespace cdiff {

using PixelCoord = std::pair<int, int>;  // (row, col)

// Ordered border of a connected component. Consecutive points are
// 8-adjacent; border following returns to its start, so traced contours are
// marked closed. Open arcs show up as traces that double back over
// themselves (repeated points).
struct Contour {
  std::vector<PixelCoord> points;
  bool closed = false;

  size_t size() const { return points.size(); }
};

// Outer borders of every 8-connected foreground component, in scan order of
// the components' topmost-leftmost pixels. Empty mask gives an empty vector.
std::vector<Contour> trace_contours(const BinaryImage& mask);

// Contour with maximal point count; ties break toward the first in order.
const Contour& longest_contour(const std::vector<Contour>& contours);

// Draws each contour point dilated by a pixel disk of diameter `thickness`
// (thickness 1 = the points themselves). Points must lie inside the raster;
// the dilation is clipped at the borders.
BinaryImage rasterize_contour(const Contour& contour, int h, int w, int thickness);

// Separable Gaussian blur, kernel radius ceil(3*sigma), reflect padding
// (edge-inclusive: index -1 maps to 0), kernel normalized to sum 1.
GrayImage gaussian_blur(const GrayImage& img, double sigma);

enum class ThinningRule { ZhangSuen, GuoHall };

// Iterative morphological thinning to width 1. Runs the chosen two-pass rule
// to a fixpoint, then removes remaining 2x2 blocks by deleting 8-simple
// pixels so connectivity is preserved.
BinaryImage skeletonize(const BinaryImage& b, ThinningRule rule = ThinningRule::ZhangSuen);

// Dilation then erosion with a (2r+1)^2 square structuring element. Erosion
// treats out-of-image pixels as foreground so closing never removes input
// pixels at the borders.
BinaryImage morph_close(const BinaryImage& b, int radius);

struct LongestClosedResult {
  BinaryImage image;
  bool found_closed = false;  // false when the result is an open-border fallback
};

// Keeps only the longest closed border, re-rasterized at thickness 1. A
// border counts as closed when it is at least 8 points long and visits no
// pixel twice. Falls back to the longest border of any kind when no closed
// one exists; empty input gives an empty, flagged result.
LongestClosedResult longest_closed_contour(const BinaryImage& b);

// Elementwise AND.
BinaryImage truncate_with_mask(const BinaryImage& contour_img, const BinaryImage& trunc);

struct PostprocessOptions {
  double sigma = 1.0;
  int close_radius = 1;
  bool pick_longest_closed = false;
  // Re-thin after closure in case the closing re-thickened the curve.
  bool reskeletonize_after_close = false;
  std::optional<BinaryImage> trunc;
  ThinningRule rule = ThinningRule::ZhangSuen;
};

struct PostprocessResult {
  BinaryImage image;
  bool empty_output = false;
  bool found_closed = true;  // meaningful only when pick_longest_closed is set
};

// blur -> threshold 0.5 -> skeletonize -> close -> [longest closed] -> [AND trunc]
PostprocessResult postprocess(const BinaryImage& decoded, const PostprocessOptions& opts);
// Same chain, but blurring a probability map instead of the binary cast.
PostprocessResult postprocess_prob(const GrayImage& prob_map, const PostprocessOptions& opts);

}  // namespace cdiff
