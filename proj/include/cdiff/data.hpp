#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdiff/denoiser.hpp"
#include "cdiff/grid.hpp"
#include "cdiff/image.hpp"
#include "cdiff/training.hpp"

namespace cdiff {

struct Sample {
  GrayImage image;
  BinaryImage gt_mask;
  BinaryImage guide_mask;  // may be empty before degradation
  std::string id;
};

struct DatasetManifest {
  struct Entry {
    std::string id;
    std::string image_file;  // relative to root
    std::string gt_file;
    std::string guide_file;  // empty when absent
  };
  std::string root;
  std::string split;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<Entry> entries;

  std::string path() const;
};

// Random smooth blobs (radially perturbed ellipses) with soft edges over a
// textured background. Deterministic per (seed, index); translucency in
// [0, 1] widens the boundary ramp.
std::vector<Sample> generate_synthetic_samples(int n, int size, uint64_t seed,
                                               double translucency, const std::string& id_prefix);

// Stand-in for a base detector's coarse output: elastic boundary warp,
// random erosion/dilation, boundary pixel dropout; keeps the largest
// component. severity 0 is the identity.
BinaryImage degrade_mask(const BinaryImage& mask, double severity, uint64_t seed);

// Writes images/masks/guides as PNM rasters plus a line-oriented manifest.
DatasetManifest save_dataset(const std::vector<Sample>& samples, const std::string& root,
                             const std::string& split, uint64_t seed,
                             const std::vector<std::pair<std::string, std::string>>& metadata);

DatasetManifest load_manifest(const std::string& manifest_path);
std::vector<Sample> load_dataset(const DatasetManifest& manifest);
std::vector<Sample> load_dataset(const std::string& manifest_path);

// Bilinear-resized image + nearest-resized mask, stacked [image, mask].
// use_gt_mask selects the clean mask (training-time conditioning).
ConditionStack assemble_condition(const Sample& sample, int size, bool use_gt_mask = false);

// Longest GT contour rasterized at `thickness`, one-hot encoded with the
// contour class at category n-1 and background at category 0.
CategoricalGrid make_target(const Sample& sample, int size, int thickness, int n_categories);

// Target raster alone (for SSIM/F1 references).
BinaryImage make_target_raster(const Sample& sample, int size, int thickness);

// Bundles condition stacks + targets for the trainer.
std::vector<TrainingSample> build_training_samples(const std::vector<Sample>& samples, int size,
                                                   int thickness, int n_categories);

}  // namespace cdiff
