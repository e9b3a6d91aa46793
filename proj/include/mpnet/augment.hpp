#pragma once

#include <cstdint>

#include "mpnet/dataset.hpp"
#include "mpnet/rng.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

struct AugmentConfig {
  int shift_pixels = 4;
  bool hflip = true;
};

/// Horizontal mirror of a (C, H, W) image.
Tensor<float> hflip(const Tensor<float>& image);

/// Translation by (dx, dy) with zero padding; positive dx moves content
/// right, positive dy moves it down.
Tensor<float> shift(const Tensor<float>& image, int64_t dx, int64_t dy);

/// Random flip (p = 0.5) followed by a random shift in
/// [-shift_pixels, shift_pixels]^2. Deterministic given the rng state.
Tensor<float> augment(const Tensor<float>& image, Rng& rng, const AugmentConfig& cfg);

/// Copies sample `src_index` of `data` into row `dst_row` of `batch`,
/// standardizing with the train-split stats.
void fill_normalized(Tensor<float>& batch, int64_t dst_row, const Tensor<float>& image,
                     const ChannelStats& stats);

}  // namespace mpnet
