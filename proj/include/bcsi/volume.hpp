#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bcsi/rng.hpp"

// Synthetic volumetric cases: ellipsoid-union phantoms with a smooth bias
// field and voxel noise, plus the on-disk formats for volumes and splits.

namespace bcsi {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Volume {
  int D = 0, H = 0, W = 0;
  std::vector<double> voxels;  // row-major, W fastest, values in [0,1]
};

struct LabelVolume {
  int D = 0, H = 0, W = 0;
  std::vector<uint8_t> mask;  // values in {0,1}
};

struct GeneratorParams {
  std::array<int, 3> dims{32, 32, 32};
  int n_blobs = 2;
  double radius_lo = 4.0;
  double radius_hi = 8.0;
  double noise_sigma = 0.15;
  double intensity_contrast = 0.3;
  double background = 0.35;
  double bias_amplitude = 0.15;
  // generated foreground must land in this fraction band
  double fg_min = 0.02;
  double fg_max = 0.25;
};

// Pure function of (seed, params). Mask is a union of randomly oriented
// ellipsoids; intensity = background + contrast*mask + bias field + noise,
// clamped to [0,1]. Re-rolls the whole case until the foreground fraction
// lands inside [fg_min, fg_max]; errors after bounded retries.
std::pair<Volume, LabelVolume> generate_case(uint64_t seed, const GeneratorParams& params);

// "BV01" format: magic, LE u32 D,H,W, u8 kind (0 = float64, 1 = label u8),
// then the payload row-major with W fastest. Round trip is bitwise exact.
void write_volume(const std::string& path, const Volume& v);
void write_volume(const std::string& path, const LabelVolume& v);
Volume read_volume(const std::string& path);
LabelVolume read_label(const std::string& path);

struct DatasetManifest {
  uint64_t seed = 0;
  std::vector<int> labeled_ids;
  std::vector<int> unlabeled_ids;
  std::vector<int> test_ids;
  GeneratorParams generator_params;
};

// Shuffles case ids 0..n_cases-1, takes n_test for test, then splits the rest
// with round(ratio * n_train) labeled. Deterministic per seed.
DatasetManifest make_split(int n_cases, double labeled_ratio, int n_test, uint64_t seed);

void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

// case file naming inside a dataset directory
std::string volume_path(const std::string& dir, int id);
std::string label_path(const std::string& dir, int id);

}  // namespace bcsi
