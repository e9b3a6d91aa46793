#include "mpnet/augment.hpp"

#include "mpnet/errors.hpp"

namespace mpnet {

Tensor<float> hflip(const Tensor<float>& image) {
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y) {
      const float* src = image.data() + (ch * h + y) * w;
      float* dst = out.data() + (ch * h + y) * w;
      for (int64_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
  return out;
}

Tensor<float> shift(const Tensor<float>& image, int64_t dx, int64_t dy) {
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape());  // zero padding
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y) {
      const int64_t sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      const float* src = image.data() + (ch * h + sy) * w;
      float* dst = out.data() + (ch * h + y) * w;
      for (int64_t x = 0; x < w; ++x) {
        const int64_t sx = x - dx;
        if (sx >= 0 && sx < w) dst[x] = src[sx];
      }
    }
  return out;
}

Tensor<float> augment(const Tensor<float>& image, Rng& rng, const AugmentConfig& cfg) {
  Tensor<float> out = image;
  if (cfg.hflip && rng.bernoulli(0.5)) out = hflip(out);
  if (cfg.shift_pixels > 0) {
    const int64_t dx = rng.uniform_int(-cfg.shift_pixels, cfg.shift_pixels);
    const int64_t dy = rng.uniform_int(-cfg.shift_pixels, cfg.shift_pixels);
    if (dx != 0 || dy != 0) out = shift(out, dx, dy);
  }
  return out;
}

void fill_normalized(Tensor<float>& batch, int64_t dst_row, const Tensor<float>& image,
                     const ChannelStats& stats) {
  const int64_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
  if (batch.dim(1) != c || batch.dim(2) * batch.dim(3) != hw)
    throw ShapeError("fill_normalized: image " + shape_string(image.shape()) +
                     " does not fit batch " + shape_string(batch.shape()));
  float* dst = batch.data() + dst_row * c * hw;
  for (int64_t ch = 0; ch < c; ++ch) {
    const float mean = stats.mean[static_cast<size_t>(ch)];
    const float inv_std = 1.0f / stats.stddev[static_cast<size_t>(ch)];
    const float* src = image.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) dst[ch * hw + i] = (src[i] - mean) * inv_std;
  }
}

}  // namespace mpnet
