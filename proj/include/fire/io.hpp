#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fire/eval.hpp"
#include "fire/rng.hpp"
#include "fire/tensor.hpp"

namespace fire {

// NPY v1.0 container, little-endian float32, C order. Lossless round trip.
Tensor read_npy(const std::string& path);
void write_npy(const Tensor& tensor, const std::string& path);

// 8-bit binary PGM (P5). Input is one plane [1,1,H,W] with values in [0,1].
void write_pgm(const Tensor& values, const std::string& path);
Tensor read_pgm(const std::string& path);  // [1,1,H,W], dequantized to [0,1]

// 8-bit RGB PNG (zlib-deflated, filter 0 scanlines).
void write_png_rgb(int width, int height, const std::vector<unsigned char>& rgb,
                   const std::string& path);

struct VolumeRecord {
  Tensor image;                    // [1,1,spatial...], raw intensities
  std::vector<double> voxel_size;  // mm per spatial axis
  char modality = 'A';
  std::optional<LabelVolume> labels;
};

// Linear resample onto an isotropic grid of spacing target_mm; labels go
// nearest-neighbor. New extent per axis = round(extent * voxel / target).
VolumeRecord resample_isotropic(const VolumeRecord& rec, double target_mm);

struct PhantomPair {
  VolumeRecord a, b;
  LabelVolume labels;
};

// Shared smooth-blob anatomy rendered as two synthetic modalities: A keeps
// fine texture, B is a monotone nonlinear intensity remap with one
// structure's contrast suppressed. Co-registered by construction; intensities
// normalized to [-1,1].
PhantomPair gen_phantom_pair(Rng& rng, int size, int complexity);

struct ManifestEntry {
  int id = 0;
  std::string a, b, labels;  // file names relative to the dataset dir
  std::string split;         // train | val | test
};

struct DatasetManifest {
  uint64_t seed = 0;
  int size = 0;
  int complexity = 0;
  std::map<int, std::string> legend;
  std::vector<ManifestEntry> pairs;
};

// Subject-level shuffled split with the given counts, deterministic per seed.
// Requires train + val + test <= n_pairs; unassigned subjects are dropped.
DatasetManifest build_manifest(int n_pairs, int train, int val, int test, uint64_t seed);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Generates phantom pairs for every manifest entry and writes NPYs plus
// manifest.json into dir.
DatasetManifest write_phantom_dataset(const std::string& dir, int pairs, int size, int complexity,
                                      int train, int val, int test, uint64_t seed);

struct LoadedPair {
  int id = 0;
  Tensor xa, xb;
  LabelVolume labels;
};

std::vector<LoadedPair> load_split(const std::string& dir, const DatasetManifest& m,
                                   const std::string& split);

}  // namespace fire
