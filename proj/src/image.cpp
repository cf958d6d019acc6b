#include "cdiff/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace cdiff {

size_t BinaryImage::count() const {
  return static_cast<size_t>(std::accumulate(bits.begin(), bits.end(), size_t{0}));
}

GrayImage to_gray(const BinaryImage& b) {
  GrayImage g(b.h, b.w);
  for (size_t i = 0; i < b.bits.size(); ++i) g.v[i] = b.bits[i] ? 1.0 : 0.0;
  return g;
}

BinaryImage threshold_gray(const GrayImage& g, double thresh) {
  BinaryImage b(g.h, g.w);
  for (size_t i = 0; i < g.v.size(); ++i) b.bits[i] = g.v[i] > thresh ? 1 : 0;
  return b;
}

GrayImage resize_bilinear(const GrayImage& img, int out_h, int out_w) {
  if (img.h == out_h && img.w == out_w) return img;
  GrayImage out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / out_h;
  const double sx = static_cast<double>(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    // Align pixel centers ("half-pixel" convention).
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, img.h - 1);
    y0 = std::clamp(y0, 0, img.h - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, img.w - 1);
      x0 = std::clamp(x0, 0, img.w - 1);
      double top = img.at(y0, x0) * (1 - wx) + img.at(y0, x1) * wx;
      double bot = img.at(y1, x0) * (1 - wx) + img.at(y1, x1) * wx;
      out.at(y, x) = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

BinaryImage resize_nearest(const BinaryImage& img, int out_h, int out_w) {
  if (img.h == out_h && img.w == out_w) return img;
  BinaryImage out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / out_h;
  const double sx = static_cast<double>(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    int sy_i = std::min(static_cast<int>((y + 0.5) * sy), img.h - 1);
    for (int x = 0; x < out_w; ++x) {
      int sx_i = std::min(static_cast<int>((x + 0.5) * sx), img.w - 1);
      out.at(y, x) = img.at(sy_i, sx_i);
    }
  }
  return out;
}

namespace {

void skip_pnm_whitespace(std::istream& in) {
  int c = in.peek();
  while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
}

int read_pnm_int(std::istream& in) {
  skip_pnm_whitespace(in);
  int v = 0;
  in >> v;
  return v;
}

}  // namespace

void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> row(img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      double v = std::clamp(img.at(y, x), 0.0, 1.0);
      row[x] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()), img.w);
  }
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw std::runtime_error("not a P5 PGM: " + path);
  int w = read_pnm_int(in);
  int h = read_pnm_int(in);
  int maxval = read_pnm_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("bad PGM header: " + path);
  in.get();  // single whitespace after header
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("truncated PGM: " + path);
  GrayImage img(h, w);
  for (size_t i = 0; i < buf.size(); ++i) img.v[i] = buf[i] / 255.0;
  return img;
}

void write_pbm(const std::string& path, const BinaryImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "P4\n" << img.w << " " << img.h << "\n";
  const int row_bytes = (img.w + 7) / 8;
  std::vector<uint8_t> row(row_bytes);
  for (int y = 0; y < img.h; ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < img.w; ++x) {
      if (img.at(y, x)) row[x / 8] |= static_cast<uint8_t>(0x80 >> (x % 8));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row_bytes);
  }
}

BinaryImage read_pbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P4") throw std::runtime_error("not a P4 PBM: " + path);
  int w = read_pnm_int(in);
  int h = read_pnm_int(in);
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PBM header: " + path);
  in.get();
  const int row_bytes = (w + 7) / 8;
  std::vector<uint8_t> buf(static_cast<size_t>(h) * row_bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("truncated PBM: " + path);
  BinaryImage img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(y, x) = (buf[static_cast<size_t>(y) * row_bytes + x / 8] >> (7 - x % 8)) & 1;
  return img;
}

void write_ppm(const std::string& path, int h, int w, const std::vector<double>& rgb) {
  if (rgb.size() != static_cast<size_t>(h) * w * 3)
    throw std::runtime_error("write_ppm: buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> buf(rgb.size());
  for (size_t i = 0; i < rgb.size(); ++i)
    buf[i] = static_cast<uint8_t>(std::lround(std::clamp(rgb[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace cdiff
