#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cdiff {

// H x W boolean raster. Stored as one byte per pixel (0 or 1).
struct BinaryImage {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> bits;

  BinaryImage() = default;
  BinaryImage(int h_, int w_) : h(h_), w(w_), bits(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t& at(int y, int x) { return bits[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * w + x]; }
  bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }

  size_t count() const;
  bool operator==(const BinaryImage& o) const { return h == o.h && w == o.w && bits == o.bits; }
};

// H x W real-valued raster, values expected in [0, 1].
struct GrayImage {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  GrayImage() = default;
  GrayImage(int h_, int w_, double fill = 0.0)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

GrayImage to_gray(const BinaryImage& b);
BinaryImage threshold_gray(const GrayImage& g, double thresh);

// Resizing used for condition assembly. Bilinear for intensity images,
// nearest for masks (keeps them exactly binary).
GrayImage resize_bilinear(const GrayImage& img, int out_h, int out_w);
BinaryImage resize_nearest(const BinaryImage& img, int out_h, int out_w);

// Binary PNM raster IO. Images are stored as 8-bit PGM (P5), masks as 1-bit
// PBM (P4), color overlays as PPM (P6). Deterministic byte-for-byte output.
void write_pgm(const std::string& path, const GrayImage& img);
GrayImage read_pgm(const std::string& path);
void write_pbm(const std::string& path, const BinaryImage& img);
BinaryImage read_pbm(const std::string& path);
// rgb has 3 * h * w entries, channel-interleaved, values in [0, 1].
void write_ppm(const std::string& path, int h, int w, const std::vector<double>& rgb);

}  // namespace cdiff
