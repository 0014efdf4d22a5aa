#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ekg/tensor.hpp"

namespace ekg {

// A hyperspectral cube: band-sequential float data plus a label grid.
// Label 0 marks unlabeled background, 1..C are classes.
struct HsiCube {
  i64 height = 0, width = 0, bands = 0;
  std::vector<float> data;             // [band][row][col]
  std::vector<std::uint16_t> labels;   // [row][col]
  std::string name;
  // Indicator over the original instrument bands; sum equals `bands`.
  std::vector<std::uint8_t> band_mask;

  float at(i64 band, i64 row, i64 col) const {
    return data[static_cast<std::size_t>((band * height + row) * width + col)];
  }
  float& at(i64 band, i64 row, i64 col) {
    return data[static_cast<std::size_t>((band * height + row) * width + col)];
  }
  std::uint16_t label(i64 row, i64 col) const {
    return labels[static_cast<std::size_t>(row * width + col)];
  }

  i64 num_labeled() const;
  int num_classes() const;                  // highest label
  std::vector<i64> class_histogram() const; // counts indexed 0..C
  void validate() const;
};

// File format "EKGH": magic, u32 height/width/bands, f32 cube
// (band-sequential), u16 labels (row-major), u32 name length + UTF-8 name.
// Everything little-endian.
HsiCube load_cube(const std::string& path);
void save_cube(const HsiCube& cube, const std::string& path);

// Keeps only masked-in bands, order preserved; composes with the cube's
// existing band_mask so the indicator keeps referring to instrument bands.
HsiCube apply_band_mask(const HsiCube& cube, const std::vector<std::uint8_t>& mask);

struct NormStats {
  std::vector<float> mean, stddev;
  std::vector<std::uint8_t> floored;  // bands whose std hit the epsilon floor
};

// Per-band standardization with moments taken over labeled pixels only.
HsiCube normalize(const HsiCube& cube, NormStats* stats = nullptr);

// Synthetic generator: C prototype spectra (mixtures of smooth Gaussian
// bumps, main bump centered per class), image tiled into horizontal class
// bands, per-pixel spectrum = prototype + spatially blurred Gaussian noise
// with sigma = noise_sigma * prototype peak.
struct SynthConfig {
  int classes = 3;
  i64 height = 32, width = 32, bands = 24;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

std::vector<std::vector<float>> synth_prototypes(const SynthConfig& cfg);
HsiCube synthesize_dataset(const SynthConfig& cfg);
HsiCube synthesize_with_prototypes(const SynthConfig& cfg,
                                   const std::vector<std::vector<float>>& prototypes);

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct SplitRatios {
  int train = 6, val = 1, test = 3;
  int parts() const { return train + val + test; }
};

// Neighbor blocks around every labeled pixel. Patches are stored
// band-major (L x M x M), matching the model input 1 x L x M x N.
template <typename T>
struct PatchDataset {
  i64 block = 0;  // M = N, odd
  i64 bands = 0;  // L
  int num_classes = 0;
  std::vector<T> storage;
  std::vector<int> labels;  // 0-based class indices
  std::vector<std::pair<i64, i64>> coords;
  std::vector<Split> split;
  SplitRatios ratios;
  std::uint64_t split_seed = 0;
  std::vector<std::string> notes;

  i64 count() const { return static_cast<i64>(labels.size()); }
  i64 patch_numel() const { return bands * block * block; }
  const T* patch(i64 i) const { return storage.data() + i * patch_numel(); }
  std::vector<i64> indices_of(Split s) const;
};

i64 padded_extent(i64 extent, i64 block);

// Zero-pads the spatial borders by block/2 and cuts the block x block x L
// neighborhood of every labeled pixel.
template <typename T>
PatchDataset<T> pad_and_extract(const HsiCube& cube, i64 block);

// Per class: seeded shuffle, then largest-remainder assignment by ratio.
// Classes smaller than the number of active splits fall back to train and
// leave a note.
template <typename T>
void stratified_split(PatchDataset<T>& ds, SplitRatios ratios, std::uint64_t seed);

}  // namespace ekg
