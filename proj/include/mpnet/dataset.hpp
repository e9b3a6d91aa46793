#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpnet/rng.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

/// Per-channel standardization statistics, computed on the train split
/// only and applied to all splits.
struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

/// Labeled image set. Images are (N, C, H, W) in [0, 1]; optional context
/// ids are generator metadata (empty for CIFAR).
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<int> contexts;
  std::string split;
  int classes = 0;

  int64_t size() const { return images.empty() ? 0 : images.dim(0); }
  int64_t channels() const { return images.dim(1); }
  int64_t height() const { return images.dim(2); }
  int64_t width() const { return images.dim(3); }

  /// One image as a (C, H, W) tensor copy.
  Tensor<float> image(int64_t i) const;
};

ChannelStats compute_channel_stats(const Dataset& train);

/// Loads the six standard CIFAR-10 binary batch files from `dir`:
/// 3073-byte records, 1 label byte + 3x1024 channel-planar pixel bytes.
struct Cifar10 {
  Dataset train;
  Dataset test;
};
Cifar10 load_cifar10(const std::string& dir);

/// Parses one CIFAR-format binary file (used by the loader and by tests
/// that build format-true files from scratch).
Dataset load_cifar_file(const std::string& path, const std::string& split_tag);

/// Synthetic multi-context dataset: parametric shapes (bar/disc/cross/
/// square outline) on context-colored backgrounds. Context 0 backgrounds
/// are blue-ish, context 1 red-ish; further contexts cycle color families.
/// Label = shape class; context id kept as metadata, independent of label
/// by construction.
struct SyntheticContextSpec {
  int contexts = 2;
  int classes = 4;
  int samples_per_cell = 125;  // per (context, class) cell
  int image_size = 16;
  float noise = 0.05f;
  uint64_t seed = 7;

  bool operator==(const SyntheticContextSpec&) const = default;
};

Dataset generate_synthetic(const SyntheticContextSpec& spec);

/// Stratified-by-label split into (train, val); deterministic by seed.
struct SplitResult {
  Dataset train;
  Dataset val;
};
SplitResult split_dataset(const Dataset& data, double train_fraction, uint64_t seed);

/// Single-file binary round trip for generated datasets.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Subset by index list (keeps labels/contexts aligned).
Dataset take_subset(const Dataset& data, const std::vector<int64_t>& indices);

}  // namespace mpnet
