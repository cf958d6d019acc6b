#include "cdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cdiff/contour.hpp"
#include "cdiff/rng.hpp"

namespace cdiff {

namespace fs = std::filesystem;

std::string DatasetManifest::path() const {
  return (fs::path(root) / (split + ".manifest")).string();
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

struct Wave {
  double freq, ox, oy, phase, amp;
  double eval(double x, double y, int size) const {
    return amp * std::sin(kTwoPi * freq * (x * ox + y * oy) / size + phase);
  }
};

Wave random_wave(Rng& rng, double fmin, double fmax, double amp) {
  double angle = rng.uniform() * kTwoPi;
  return {fmin + rng.uniform() * (fmax - fmin), std::cos(angle), std::sin(angle),
          rng.uniform() * kTwoPi, amp};
}

}  // namespace

std::vector<Sample> generate_synthetic_samples(int n, int size, uint64_t seed,
                                               double translucency,
                                               const std::string& id_prefix) {
  if (n < 1 || size < 32)
    throw std::invalid_argument("generate_synthetic_samples: need n >= 1, size >= 32");
  std::vector<Sample> out;
  out.reserve(n);
  for (int idx = 0; idx < n; ++idx) {
    Rng rng(derive_seed(seed, 0x626c6f62, idx));
    Sample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%06d", id_prefix.c_str(), idx);
    s.id = buf;
    s.image = GrayImage(size, size);
    s.gt_mask = BinaryImage(size, size);

    const double cx = size * (0.5 + 0.08 * (2.0 * rng.uniform() - 1.0));
    const double cy = size * (0.5 + 0.08 * (2.0 * rng.uniform() - 1.0));
    const double r0 = size * (0.18 + 0.14 * rng.uniform());
    const double aspect = 0.75 + 0.5 * rng.uniform();

    // Low-frequency radial perturbation of an ellipse.
    double amp[4], phase[4];
    for (int k = 0; k < 4; ++k) {
      amp[k] = rng.uniform() * 0.10 / (1.0 + 0.5 * k);
      phase[k] = rng.uniform() * kTwoPi;
    }
    auto radius = [&](double theta) {
      double r = 1.0;
      for (int k = 0; k < 4; ++k) r += amp[k] * std::cos((k + 2) * theta + phase[k]);
      double ct = std::cos(theta), st = std::sin(theta);
      double ell = 1.0 / std::sqrt(ct * ct + st * st / (aspect * aspect));
      return std::max(0.3, r) * r0 * ell;
    };

    Wave bg_waves[3];
    for (auto& w : bg_waves) w = random_wave(rng, 1.0, 3.0, 0.04 + 0.04 * rng.uniform());
    const double bg_base = 0.40 + 0.1 * rng.uniform();
    const double fg_delta = 0.28 + 0.08 * rng.uniform();
    // Boundary ramp half-width: sharp at translucency 0.
    const double softness = 0.35 + translucency * 0.10 * r0;

    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double dx = x - cx, dy = y - cy;
        double rho = std::sqrt(dx * dx + dy * dy);
        double theta = std::atan2(dy, dx);
        double d = rho - radius(theta);  // signed radial offset
        double alpha = std::clamp(0.5 - d / (2.0 * softness), 0.0, 1.0);
        double bg = bg_base;
        for (const auto& w : bg_waves) bg += w.eval(x, y, size);
        s.image.at(y, x) = std::clamp(bg + fg_delta * alpha, 0.0, 1.0);
        s.gt_mask.at(y, x) = d <= 0.0 ? 1 : 0;
      }
    // Pixel noise in a separate pass keeps the draw order stable.
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        s.image.at(y, x) = std::clamp(
            s.image.at(y, x) + 0.01 * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

BinaryImage binary_filter(const BinaryImage& in, int radius, bool take_max) {
  BinaryImage tmp(in.h, in.w), out(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      uint8_t v = take_max ? 0 : 1;
      for (int i = -radius; i <= radius; ++i) {
        int xi = x + i;
        uint8_t s = (xi < 0 || xi >= in.w) ? 0 : in.at(y, xi);
        v = take_max ? std::max(v, s) : std::min(v, s);
      }
      tmp.at(y, x) = v;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      uint8_t v = take_max ? 0 : 1;
      for (int i = -radius; i <= radius; ++i) {
        int yi = y + i;
        uint8_t s = (yi < 0 || yi >= in.h) ? 0 : tmp.at(yi, x);
        v = take_max ? std::max(v, s) : std::min(v, s);
      }
      out.at(y, x) = v;
    }
  return out;
}

BinaryImage keep_largest_component(const BinaryImage& in) {
  std::vector<int> label(in.bits.size(), -1);
  std::vector<size_t> sizes;
  constexpr int dy[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  constexpr int dx[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      size_t idx = static_cast<size_t>(y) * in.w + x;
      if (!in.bits[idx] || label[idx] >= 0) continue;
      int lbl = static_cast<int>(sizes.size());
      size_t count = 0;
      std::queue<std::pair<int, int>> q;
      q.emplace(y, x);
      label[idx] = lbl;
      while (!q.empty()) {
        auto [py, px] = q.front();
        q.pop();
        ++count;
        for (int d = 0; d < 8; ++d) {
          int ny = py + dy[d], nx = px + dx[d];
          if (!in.in_bounds(ny, nx)) continue;
          size_t nidx = static_cast<size_t>(ny) * in.w + nx;
          if (in.bits[nidx] && label[nidx] < 0) {
            label[nidx] = lbl;
            q.emplace(ny, nx);
          }
        }
      }
      sizes.push_back(count);
    }
  if (sizes.empty()) return in;
  int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  BinaryImage out(in.h, in.w);
  for (size_t i = 0; i < in.bits.size(); ++i) out.bits[i] = label[i] == best ? 1 : 0;
  return out;
}

}  // namespace

BinaryImage degrade_mask(const BinaryImage& mask, double severity, uint64_t seed) {
  if (severity < 0.0 || severity > 1.0)
    throw std::invalid_argument("degrade_mask: severity must be in [0,1]");
  if (severity == 0.0) return mask;
  Rng rng(derive_seed(seed, 0x64656772));
  const int size = std::min(mask.h, mask.w);

  // Smooth elastic warp of the boundary.
  const double amplitude = severity * 0.11 * size;
  Wave wx[2], wy[2];
  for (auto& w : wx) w = random_wave(rng, 0.8, 2.2, amplitude * (0.4 + 0.6 * rng.uniform()));
  for (auto& w : wy) w = random_wave(rng, 0.8, 2.2, amplitude * (0.4 + 0.6 * rng.uniform()));
  BinaryImage warped(mask.h, mask.w);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      double ux = wx[0].eval(x, y, size) + wx[1].eval(x, y, size);
      double uy = wy[0].eval(x, y, size) + wy[1].eval(x, y, size);
      int sy = std::clamp(static_cast<int>(std::lround(y - uy)), 0, mask.h - 1);
      int sx = std::clamp(static_cast<int>(std::lround(x - ux)), 0, mask.w - 1);
      warped.at(y, x) = mask.at(sy, sx);
    }

  // Uniform boundary erosion or dilation.
  const int radius = static_cast<int>(std::lround(severity * 2.0));
  if (radius > 0)
    warped = binary_filter(warped, radius, /*take_max=*/rng.uniform() < 0.5);

  // Random dropout of boundary-adjacent pixels.
  const double drop_p = severity * 0.2;
  std::vector<size_t> boundary;
  for (int y = 0; y < warped.h; ++y)
    for (int x = 0; x < warped.w; ++x) {
      if (!warped.at(y, x)) continue;
      bool edge = false;
      for (auto [ddy, ddx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}})
        if (!warped.in_bounds(y + ddy, x + ddx) || !warped.at(y + ddy, x + ddx)) edge = true;
      if (edge) boundary.push_back(static_cast<size_t>(y) * warped.w + x);
    }
  for (size_t idx : boundary)
    if (rng.uniform() < drop_p) warped.bits[idx] = 0;

  return keep_largest_component(warped);
}

DatasetManifest save_dataset(const std::vector<Sample>& samples, const std::string& root,
                             const std::string& split, uint64_t seed,
                             const std::vector<std::pair<std::string, std::string>>& metadata) {
  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.seed = seed;
  m.metadata = metadata;
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  fs::create_directories(fs::path(root) / "guides");

  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second)
      throw std::invalid_argument("save_dataset: duplicate id " + s.id);
    DatasetManifest::Entry e;
    e.id = s.id;
    e.image_file = "images/" + s.id + ".pgm";
    e.gt_file = "masks/" + s.id + ".pbm";
    write_pgm((fs::path(root) / e.image_file).string(), s.image);
    write_pbm((fs::path(root) / e.gt_file).string(), s.gt_mask);
    if (s.guide_mask.h > 0) {
      e.guide_file = "guides/" + s.id + ".pbm";
      write_pbm((fs::path(root) / e.guide_file).string(), s.guide_mask);
    }
    m.entries.push_back(std::move(e));
  }

  std::ofstream out(m.path());
  if (!out) throw std::runtime_error("save_dataset: cannot write manifest");
  out << "cdiff_manifest_version 1\n";
  out << "split " << split << "\n";
  out << "seed " << seed << "\n";
  for (auto& [k, v] : metadata) out << "meta " << k << " " << v << "\n";
  for (auto& e : m.entries)
    out << "entry " << e.id << " " << e.image_file << " " << e.gt_file << " "
        << (e.guide_file.empty() ? "-" : e.guide_file) << "\n";
  return m;
}

DatasetManifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + manifest_path);
  DatasetManifest m;
  m.root = fs::path(manifest_path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::string key;
  int version = 0;
  in >> key >> version;
  if (key != "cdiff_manifest_version" || version != 1)
    throw std::runtime_error("load_manifest: unknown manifest format");
  std::set<std::string> ids;
  while (in >> key) {
    if (key == "split")
      in >> m.split;
    else if (key == "seed")
      in >> m.seed;
    else if (key == "meta") {
      std::string k, v;
      in >> k >> v;
      m.metadata.emplace_back(k, v);
    } else if (key == "entry") {
      DatasetManifest::Entry e;
      std::string guide;
      in >> e.id >> e.image_file >> e.gt_file >> guide;
      if (guide != "-") e.guide_file = guide;
      if (!ids.insert(e.id).second)
        throw std::runtime_error("load_manifest: duplicate id " + e.id);
      m.entries.push_back(std::move(e));
    } else {
      throw std::runtime_error("load_manifest: unexpected key " + key);
    }
  }
  return m;
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Sample s;
    s.id = e.id;
    auto img_path = fs::path(manifest.root) / e.image_file;
    auto gt_path = fs::path(manifest.root) / e.gt_file;
    if (!fs::exists(img_path))
      throw std::runtime_error("load_dataset: missing image file for id " + e.id);
    if (!fs::exists(gt_path))
      throw std::runtime_error("load_dataset: missing gt file for id " + e.id);
    s.image = read_pgm(img_path.string());
    s.gt_mask = read_pbm(gt_path.string());
    if (!e.guide_file.empty()) {
      auto guide_path = fs::path(manifest.root) / e.guide_file;
      if (!fs::exists(guide_path))
        throw std::runtime_error("load_dataset: missing guide file for id " + e.id);
      s.guide_mask = read_pbm(guide_path.string());
    }
    if (s.gt_mask.h != s.image.h || s.gt_mask.w != s.image.w)
      throw std::runtime_error("load_dataset: dimension mismatch for id " + e.id);
    if (s.guide_mask.h > 0 && (s.guide_mask.h != s.image.h || s.guide_mask.w != s.image.w))
      throw std::runtime_error("load_dataset: guide dimension mismatch for id " + e.id);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_dataset(const std::string& manifest_path) {
  return load_dataset(load_manifest(manifest_path));
}

ConditionStack assemble_condition(const Sample& sample, int size, bool use_gt_mask) {
  ConditionStack cond(size, size, 2);
  GrayImage img = resize_bilinear(sample.image, size, size);
  const BinaryImage& mask_src =
      use_gt_mask || sample.guide_mask.h == 0 ? sample.gt_mask : sample.guide_mask;
  BinaryImage mask = resize_nearest(mask_src, size, size);
  for (int i = 0; i < size * size; ++i) {
    cond.plane(0)[i] = img.v[i];
    cond.plane(1)[i] = mask.bits[i] ? 1.0 : 0.0;
  }
  return cond;
}

BinaryImage make_target_raster(const Sample& sample, int size, int thickness) {
  BinaryImage mask = resize_nearest(sample.gt_mask, size, size);
  auto contours = trace_contours(mask);
  if (contours.empty()) throw std::invalid_argument("make_target: empty gt_mask");
  return rasterize_contour(longest_contour(contours), size, size, thickness);
}

CategoricalGrid make_target(const Sample& sample, int size, int thickness, int n_categories) {
  BinaryImage raster = make_target_raster(sample, size, thickness);
  return one_hot_from_mask(raster, n_categories, n_categories - 1, 0);
}

std::vector<TrainingSample> build_training_samples(const std::vector<Sample>& samples, int size,
                                                   int thickness, int n_categories) {
  std::vector<TrainingSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    TrainingSample ts;
    ts.x0 = make_target(s, size, thickness, n_categories);
    ts.cond_train = assemble_condition(s, size, /*use_gt_mask=*/true);
    ts.cond_eval = assemble_condition(s, size, /*use_gt_mask=*/false);
    ts.target_raster = make_target_raster(s, size, thickness);
    out.push_back(std::move(ts));
  }
  return out;
}

}  // namespace cdiff
