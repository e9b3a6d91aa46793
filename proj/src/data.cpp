#include "mpnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mpnet/errors.hpp"
#include "mpnet/io.hpp"

namespace mpnet {

namespace fs = std::filesystem;

Tensor<float> Dataset::image(int64_t i) const {
  const int64_t chw = channels() * height() * width();
  Tensor<float> out({channels(), height(), width()});
  std::copy(images.data() + i * chw, images.data() + (i + 1) * chw, out.data());
  return out;
}

ChannelStats compute_channel_stats(const Dataset& train) {
  const int64_t n = train.size(), c = train.channels();
  const int64_t hw = train.height() * train.width();
  ChannelStats stats;
  stats.mean.assign(static_cast<size_t>(c), 0.0f);
  stats.stddev.assign(static_cast<size_t>(c), 0.0f);
  if (n == 0) throw DataError("compute_channel_stats: empty dataset");

  for (int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sum_sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const float* p = train.images.data() + (i * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) {
        sum += p[k];
        sum_sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(n * hw);
    const double mean = sum / count;
    const double var = std::max(0.0, sum_sq / count - mean * mean);
    stats.mean[static_cast<size_t>(ch)] = static_cast<float>(mean);
    // Guard against constant channels.
    stats.stddev[static_cast<size_t>(ch)] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// CIFAR-10
// ---------------------------------------------------------------------------

namespace {
constexpr int64_t kCifarRecord = 3073;  // 1 label byte + 3*32*32 pixel bytes
constexpr int64_t kCifarDim = 32;
}  // namespace

Dataset load_cifar_file(const std::string& path, const std::string& split_tag) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open CIFAR batch file " + path);
  is.seekg(0, std::ios::end);
  const int64_t file_size = static_cast<int64_t>(is.tellg());
  is.seekg(0);
  if (file_size <= 0 || file_size % kCifarRecord != 0)
    throw DataError("CIFAR batch file " + path + " has size " + std::to_string(file_size) +
                    ", not a multiple of " + std::to_string(kCifarRecord));
  const int64_t n = file_size / kCifarRecord;

  Dataset data;
  data.split = split_tag;
  data.classes = 10;
  data.images = Tensor<float>({n, 3, kCifarDim, kCifarDim});
  data.labels.resize(static_cast<size_t>(n));

  std::vector<unsigned char> record(static_cast<size_t>(kCifarRecord));
  for (int64_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
    if (!is) throw DataError("short read in CIFAR batch file " + path);
    if (record[0] > 9)
      throw DataError("CIFAR batch file " + path + " record " + std::to_string(i) +
                      " has label byte " + std::to_string(record[0]));
    data.labels[static_cast<size_t>(i)] = record[0];
    // Channel-planar records match NCHW directly; no transposition.
    // True division: ingested values must equal raw byte / 255 exactly.
    float* dst = data.images.data() + i * 3 * kCifarDim * kCifarDim;
    for (int64_t k = 0; k < kCifarRecord - 1; ++k)
      dst[k] = static_cast<float>(record[k + 1]) / 255.0f;
  }
  return data;
}

Cifar10 load_cifar10(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("CIFAR directory does not exist: " + dir);

  Cifar10 out;
  std::vector<Dataset> parts;
  for (int b = 1; b <= 5; ++b) {
    const std::string path = dir + "/data_batch_" + std::to_string(b) + ".bin";
    parts.push_back(load_cifar_file(path, "train"));
  }
  int64_t total = 0;
  for (const auto& p : parts) total += p.size();
  out.train.split = "train";
  out.train.classes = 10;
  out.train.images = Tensor<float>({total, 3, kCifarDim, kCifarDim});
  out.train.labels.reserve(static_cast<size_t>(total));
  int64_t offset = 0;
  const int64_t chw = 3 * kCifarDim * kCifarDim;
  for (const auto& p : parts) {
    std::copy(p.images.data(), p.images.data() + p.images.size(),
              out.train.images.data() + offset * chw);
    out.train.labels.insert(out.train.labels.end(), p.labels.begin(), p.labels.end());
    offset += p.size();
  }
  out.test = load_cifar_file(dir + "/test_batch.bin", "test");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic multi-context data
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
  float r, g, b;
};

// Background color family per context; families cycle if contexts > 2.
Rgb sample_background(int context, Rng& rng) {
  const float lo = static_cast<float>(rng.uniform(0.55, 0.9));
  const float off1 = static_cast<float>(rng.uniform(0.05, 0.3));
  const float off2 = static_cast<float>(rng.uniform(0.05, 0.3));
  switch (context % 3) {
    case 0: return {off1, off2, lo};   // blue-ish
    case 1: return {lo, off1, off2};   // red-ish
    default: return {off1, lo, off2};  // green-ish
  }
}

// Foreground contrast flips with the context: bright shapes in even
// contexts, dark shapes in odd ones. A shared filter bank has to learn
// both polarities; specialized paths need only one.
Rgb sample_foreground(int context, Rng& rng) {
  if (context % 2 == 0) {
    const float v = static_cast<float>(rng.uniform(0.85, 1.0));
    return {v, v, static_cast<float>(rng.uniform(0.7, 0.9))};
  }
  const float v = static_cast<float>(rng.uniform(0.0, 0.12));
  return {v, v, static_cast<float>(rng.uniform(0.0, 0.15))};
}

void draw_shape(float* img, int64_t size, int shape_class, int64_t cx, int64_t cy, int64_t half,
                const Rgb& fg) {
  auto put = [&](int64_t y, int64_t x) {
    if (y < 0 || y >= size || x < 0 || x >= size) return;
    img[(0 * size + y) * size + x] = fg.r;
    img[(1 * size + y) * size + x] = fg.g;
    img[(2 * size + y) * size + x] = fg.b;
  };
  switch (shape_class % 4) {
    case 0:  // vertical bar
      for (int64_t y = cy - half; y <= cy + half; ++y)
        for (int64_t x = cx - 1; x <= cx + 1; ++x) put(y, x);
      break;
    case 1:  // filled disc
      for (int64_t y = cy - half; y <= cy + half; ++y)
        for (int64_t x = cx - half; x <= cx + half; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= half * half) put(y, x);
      break;
    case 2:  // cross
      for (int64_t d = -half; d <= half; ++d) {
        for (int64_t t = -1; t <= 1; ++t) {
          put(cy + d, cx + t);
          put(cy + t, cx + d);
        }
      }
      break;
    default:  // square outline
      for (int64_t d = -half; d <= half; ++d) {
        for (int64_t t = 0; t <= 1; ++t) {
          put(cy - half + t, cx + d);
          put(cy + half - t, cx + d);
          put(cy + d, cx - half + t);
          put(cy + d, cx + half - t);
        }
      }
      break;
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticContextSpec& spec) {
  if (spec.contexts < 1 || spec.classes < 1)
    throw DataError("synthetic spec needs at least 1 context and 1 class");
  if (spec.image_size < 8) throw DataError("synthetic image size must be >= 8");

  const int64_t n =
      static_cast<int64_t>(spec.contexts) * spec.classes * spec.samples_per_cell;
  const int64_t size = spec.image_size;
  Dataset data;
  data.split = "generated";
  data.classes = spec.classes;
  data.images = Tensor<float>({n, 3, size, size});
  data.labels.resize(static_cast<size_t>(n));
  data.contexts.resize(static_cast<size_t>(n));

  Rng rng(detail::splitmix64(spec.seed ^ 0x53594e5448ull));
  int64_t idx = 0;
  for (int ctx = 0; ctx < spec.contexts; ++ctx)
    for (int cls = 0; cls < spec.classes; ++cls)
      for (int s = 0; s < spec.samples_per_cell; ++s, ++idx) {
        float* img = data.images.data() + idx * 3 * size * size;
        const Rgb bg = sample_background(ctx, rng);
        for (int64_t i = 0; i < size * size; ++i) {
          img[i] = bg.r;
          img[size * size + i] = bg.g;
          img[2 * size * size + i] = bg.b;
        }
        const int64_t half = size / 4;
        const int64_t cx = rng.uniform_int(half + 1, size - half - 2);
        const int64_t cy = rng.uniform_int(half + 1, size - half - 2);
        draw_shape(img, size, cls, cx, cy, half, sample_foreground(ctx, rng));
        if (spec.noise > 0.0f)
          for (int64_t i = 0; i < 3 * size * size; ++i)
            img[i] = std::clamp(
                img[i] + static_cast<float>(rng.normal()) * spec.noise, 0.0f, 1.0f);
        data.labels[static_cast<size_t>(idx)] = cls;
        data.contexts[static_cast<size_t>(idx)] = ctx;
      }
  return data;
}

// ---------------------------------------------------------------------------
// Splits and subsets
// ---------------------------------------------------------------------------

Dataset take_subset(const Dataset& data, const std::vector<int64_t>& indices) {
  Dataset out;
  out.split = data.split;
  out.classes = data.classes;
  const int64_t chw = data.channels() * data.height() * data.width();
  out.images = Tensor<float>({static_cast<int64_t>(indices.size()), data.channels(),
                              data.height(), data.width()});
  out.labels.reserve(indices.size());
  if (!data.contexts.empty()) out.contexts.reserve(indices.size());
  int64_t row = 0;
  for (int64_t i : indices) {
    std::copy(data.images.data() + i * chw, data.images.data() + (i + 1) * chw,
              out.images.data() + row * chw);
    out.labels.push_back(data.labels[static_cast<size_t>(i)]);
    if (!data.contexts.empty()) out.contexts.push_back(data.contexts[static_cast<size_t>(i)]);
    ++row;
  }
  return out;
}

SplitResult split_dataset(const Dataset& data, double train_fraction, uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw DataError("split fraction must be in (0, 1), got " + std::to_string(train_fraction));

  // Group indices by label, shuffle each group, slice per class.
  std::vector<std::vector<int64_t>> by_label(static_cast<size_t>(data.classes));
  for (int64_t i = 0; i < data.size(); ++i)
    by_label[static_cast<size_t>(data.labels[static_cast<size_t>(i)])].push_back(i);

  Rng rng(detail::splitmix64(seed ^ 0x53504c4954ull));
  std::vector<int64_t> train_idx, val_idx;
  for (auto& group : by_label) {
    if (group.size() < 2 && !group.empty())
      throw DataError("split: a class has fewer than 2 samples");
    for (size_t i = group.size(); i > 1; --i)
      std::swap(group[i - 1], group[rng.uniform_int(static_cast<uint64_t>(i))]);
    const auto cut = static_cast<size_t>(
        std::llround(train_fraction * static_cast<double>(group.size())));
    for (size_t i = 0; i < group.size(); ++i)
      (i < cut ? train_idx : val_idx).push_back(group[i]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  SplitResult out;
  out.train = take_subset(data, train_idx);
  out.train.split = "train";
  out.val = take_subset(data, val_idx);
  out.val.split = "val";
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[8] = {'M', 'P', 'D', 'A', 'T', 'A', '0', '1'};
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kDatasetMagic, sizeof(kDatasetMagic));
  write_i64(os, data.size());
  write_i64(os, data.channels());
  write_i64(os, data.height());
  write_i64(os, data.width());
  write_u32(os, static_cast<uint32_t>(data.classes));
  write_u32(os, data.contexts.empty() ? 0u : 1u);
  for (int lab : data.labels) os.put(static_cast<char>(lab));
  for (int ctx : data.contexts) os.put(static_cast<char>(ctx));
  write_f32_array(os, data.images.data(), data.images.size());
  if (!os) throw DataError("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset file " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0)
    throw DataError(path + " is not a dataset file (bad magic)");
  Dataset data;
  const int64_t n = read_i64(is);
  const int64_t c = read_i64(is);
  const int64_t h = read_i64(is);
  const int64_t w = read_i64(is);
  data.classes = static_cast<int>(read_u32(is));
  const bool has_contexts = read_u32(is) != 0;
  if (n < 0 || c <= 0 || h <= 0 || w <= 0)
    throw DataError(path + " has an invalid header");
  data.split = "loaded";
  data.labels.resize(static_cast<size_t>(n));
  for (auto& lab : data.labels) {
    const int byte = is.get();
    if (byte == EOF) throw DataError(path + " is truncated (labels)");
    lab = byte;
    if (lab >= data.classes) throw DataError(path + " has label out of range");
  }
  if (has_contexts) {
    data.contexts.resize(static_cast<size_t>(n));
    for (auto& ctx : data.contexts) {
      const int byte = is.get();
      if (byte == EOF) throw DataError(path + " is truncated (contexts)");
      ctx = byte;
    }
  }
  data.images = Tensor<float>({n, c, h, w});
  try {
    read_f32_array(is, data.images.data(), data.images.size());
  } catch (const Error&) {
    throw DataError(path + " is truncated (pixel payload)");
  }
  return data;
}

}  // namespace mpnet
