#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mpnet/dataset.hpp"
#include "mpnet/ops.hpp"
#include "mpnet/train.hpp"
#include "test_util.hpp"

using namespace mpnet;
using namespace mpnet::testutil;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("mpnet_data_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Builds a format-true CIFAR batch file from a seeded byte stream.
void write_cifar_batch(const std::string& path, int64_t records, uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  Rng rng(seed);
  for (int64_t r = 0; r < records; ++r) {
    os.put(static_cast<char>(rng.uniform_int(10ull)));  // label 0..9
    for (int64_t i = 0; i < 3072; ++i)
      os.put(static_cast<char>(static_cast<unsigned char>(rng.uniform_int(256ull))));
  }
}

uint64_t tensor_checksum(const Tensor<float>& t) {
  uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
  for (size_t i = 0; i < static_cast<size_t>(t.size()) * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("cifar record format arithmetic") {
  // 10,000 records of 3,073 bytes per train batch file.
  CHECK(30730000 % 3073 == 0);
  CHECK(30730000 / 3073 == 10000);
}

TEST_CASE("cifar loader parses format-true files and scales bytes exactly") {
  TempDir dir;
  write_cifar_batch(dir.file("batch.bin"), 40, 123);
  const Dataset data = load_cifar_file(dir.file("batch.bin"), "train");
  CHECK(data.size() == 40);
  CHECK(data.classes == 10);
  CHECK(data.channels() == 3);
  CHECK(data.height() == 32);
  for (int lab : data.labels) {
    CHECK(lab >= 0);
    CHECK(lab <= 9);
  }

  // Spot-check exact byte scaling against the raw file.
  std::ifstream is(dir.file("batch.bin"), std::ios::binary);
  std::vector<unsigned char> raw(3073 * 40);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  for (int64_t r = 0; r < 40; r += 7)
    for (int64_t k = 0; k < 3072; k += 101) {
      const unsigned char byte = raw[static_cast<size_t>(r * 3073 + 1 + k)];
      CHECK(data.images[r * 3072 + k] == static_cast<float>(byte) / 255.0f);
      if (byte == 255) CHECK(data.images[r * 3072 + k] == 1.0f);
      if (byte == 0) CHECK(data.images[r * 3072 + k] == 0.0f);
    }
}

TEST_CASE("cifar loader rejects damaged files") {
  TempDir dir;
  write_cifar_batch(dir.file("short.bin"), 3, 5);
  std::filesystem::resize_file(dir.file("short.bin"), 3073 * 2 + 100);
  CHECK_THROWS_AS(load_cifar_file(dir.file("short.bin"), "train"), DataError);

  // Label byte out of range.
  {
    std::ofstream os(dir.file("badlabel.bin"), std::ios::binary);
    os.put(static_cast<char>(11));
    for (int i = 0; i < 3072; ++i) os.put(0);
  }
  CHECK_THROWS_AS(load_cifar_file(dir.file("badlabel.bin"), "train"), DataError);

  CHECK_THROWS_AS(load_cifar10(dir.file("no_such_dir")), DataError);
}

TEST_CASE("channel means match an independent byte-level re-parse") {
  TempDir dir;
  for (int b = 1; b <= 5; ++b)
    write_cifar_batch(dir.file("data_batch_" + std::to_string(b) + ".bin"), 60,
                      1000 + static_cast<uint64_t>(b));
  write_cifar_batch(dir.file("test_batch.bin"), 30, 2000);

  const Cifar10 cifar = load_cifar10(dir.path.string());
  CHECK(cifar.train.size() == 300);
  CHECK(cifar.test.size() == 30);
  const ChannelStats stats = compute_channel_stats(cifar.train);

  // Independent oracle: accumulate raw bytes straight from the files.
  double sums[3] = {0, 0, 0};
  int64_t count = 0;
  for (int b = 1; b <= 5; ++b) {
    std::ifstream is(dir.file("data_batch_" + std::to_string(b) + ".bin"), std::ios::binary);
    std::vector<unsigned char> rec(3073);
    while (is.read(reinterpret_cast<char*>(rec.data()), 3073)) {
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 1024; ++i)
          sums[c] += static_cast<double>(rec[static_cast<size_t>(1 + c * 1024 + i)]) / 255.0;
      ++count;
    }
  }
  for (int c = 0; c < 3; ++c) {
    const double oracle_mean = sums[c] / (static_cast<double>(count) * 1024.0);
    CHECK(std::abs(stats.mean[static_cast<size_t>(c)] - oracle_mean) < 1e-6);
  }
}

TEST_CASE("real cifar-10 statistics when the dataset is present") {
  const char* dir = std::getenv("MPNET_CIFAR_DIR");
  if (!dir || !std::filesystem::is_directory(dir)) return;  // optional, desk data only
  const Cifar10 cifar = load_cifar10(dir);
  CHECK(cifar.train.size() == 50000);
  CHECK(cifar.test.size() == 10000);
  const ChannelStats stats = compute_channel_stats(cifar.train);
  // Canonical per-channel means of the train split.
  CHECK(stats.mean[0] == doctest::Approx(0.4914).epsilon(0.01));
  CHECK(stats.mean[1] == doctest::Approx(0.4822).epsilon(0.01));
  CHECK(stats.mean[2] == doctest::Approx(0.4465).epsilon(0.01));
}

TEST_CASE("synthetic generator: balance, determinism, independence") {
  SyntheticContextSpec spec;
  spec.contexts = 2;
  spec.classes = 4;
  spec.samples_per_cell = 100;
  spec.image_size = 16;
  spec.noise = 0.0f;
  spec.seed = 77;

  const Dataset a = generate_synthetic(spec);
  CHECK(a.size() == 800);
  CHECK(a.classes == 4);

  // Exactly uniform (context, class) cell counts.
  int64_t cells[2][4] = {};
  for (int64_t i = 0; i < a.size(); ++i)
    ++cells[a.contexts[static_cast<size_t>(i)]][a.labels[static_cast<size_t>(i)]];
  for (auto& row : cells)
    for (int64_t c : row) CHECK(c == 100);

  const Dataset b = generate_synthetic(spec);
  CHECK(tensor_checksum(a.images) == tensor_checksum(b.images));

  SyntheticContextSpec other = spec;
  other.seed = 78;
  CHECK(tensor_checksum(generate_synthetic(other).images) != tensor_checksum(a.images));

  SyntheticContextSpec bad;
  bad.classes = 0;
  CHECK_THROWS_AS(generate_synthetic(bad), DataError);
}

TEST_CASE("synthetic data is separable: a small dense probe clears 90%") {
  SyntheticContextSpec spec;
  spec.contexts = 2;
  spec.classes = 4;
  spec.samples_per_cell = 50;
  spec.image_size = 12;
  spec.noise = 0.0f;
  spec.seed = 5;
  const Dataset data = generate_synthetic(spec);
  const int64_t dim = data.channels() * data.height() * data.width();

  // Flatten into (N, dim) and train a 2-layer probe with plain SGD.
  Tensor<float> flat({data.size(), dim});
  std::copy(data.images.data(), data.images.data() + data.images.size(), flat.data());
  auto x = constant(std::move(flat));

  Rng rng(6);
  auto w1 = parameter(random_tensor<float>({dim, 32}, rng, -0.05, 0.05));
  auto b1 = parameter(Tensor<float>({32}));
  auto w2 = parameter(random_tensor<float>({32, 4}, rng, -0.2, 0.2));
  auto b2 = parameter(Tensor<float>({4}));
  const std::vector<std::pair<std::string, Var<float>>> params{
      {"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}};

  SgdMomentum<float> opt;
  opt.lr = 0.05f;
  opt.momentum = 0.9f;
  opt.attach(params);

  Var<float> logits;
  for (int step = 0; step < 150; ++step) {
    Tape<float> tape;
    opt.zero_grad(params);
    auto h = relu(&tape, dense(&tape, x, w1, b1));
    logits = dense(&tape, h, w2, b2);
    auto loss = cross_entropy_loss(&tape, logits, data.labels);
    tape.backward(loss);
    opt.step(params);
  }

  int64_t correct = 0;
  for (int64_t i = 0; i < data.size(); ++i)
    if (argmax_row(logits->value, i) == data.labels[static_cast<size_t>(i)]) ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(data.size()) > 0.9);
}

TEST_CASE("stratified split: disjoint, exhaustive, balanced, deterministic") {
  SyntheticContextSpec spec;
  spec.samples_per_cell = 100;  // 800 total
  spec.image_size = 8;
  const Dataset data = generate_synthetic(spec);

  const SplitResult split = split_dataset(data, 0.9, 3);
  CHECK(split.train.size() == 720);
  CHECK(split.val.size() == 80);

  // Per-class balance.
  std::vector<int64_t> train_counts(4, 0), val_counts(4, 0);
  for (int lab : split.train.labels) ++train_counts[static_cast<size_t>(lab)];
  for (int lab : split.val.labels) ++val_counts[static_cast<size_t>(lab)];
  for (int c = 0; c < 4; ++c) {
    CHECK(train_counts[static_cast<size_t>(c)] == 180);
    CHECK(val_counts[static_cast<size_t>(c)] == 20);
  }

  // Union equals the original multiset of images (checksum of sums).
  CHECK(split.train.images.size() + split.val.images.size() == data.images.size());
  double sum_all = 0, sum_splits = 0;
  for (int64_t i = 0; i < data.images.size(); ++i) sum_all += data.images[i];
  for (int64_t i = 0; i < split.train.images.size(); ++i) sum_splits += split.train.images[i];
  for (int64_t i = 0; i < split.val.images.size(); ++i) sum_splits += split.val.images[i];
  CHECK(sum_splits == doctest::Approx(sum_all).epsilon(1e-9));

  // No sample in both splits: images are continuous random; compare rows.
  std::set<uint64_t> train_rows;
  const int64_t chw = data.channels() * data.height() * data.width();
  for (int64_t i = 0; i < split.train.size(); ++i) {
    Tensor<float> row({chw});
    std::copy(split.train.images.data() + i * chw, split.train.images.data() + (i + 1) * chw,
              row.data());
    train_rows.insert(tensor_checksum(row));
  }
  for (int64_t i = 0; i < split.val.size(); ++i) {
    Tensor<float> row({chw});
    std::copy(split.val.images.data() + i * chw, split.val.images.data() + (i + 1) * chw,
              row.data());
    CHECK(train_rows.count(tensor_checksum(row)) == 0);
  }

  const SplitResult again = split_dataset(data, 0.9, 3);
  CHECK(tensor_checksum(again.train.images) == tensor_checksum(split.train.images));
  const SplitResult other = split_dataset(data, 0.9, 4);
  CHECK(tensor_checksum(other.train.images) != tensor_checksum(split.train.images));

  CHECK_THROWS_AS(split_dataset(data, 0.0, 1), DataError);
  CHECK_THROWS_AS(split_dataset(data, 1.0, 1), DataError);
}

TEST_CASE("dataset file round trip") {
  TempDir dir;
  SyntheticContextSpec spec;
  spec.samples_per_cell = 10;
  spec.image_size = 8;
  const Dataset data = generate_synthetic(spec);

  const std::string path = dir.file("synth.bin");
  save_dataset(data, path);
  const Dataset back = load_dataset(path);
  CHECK(back.size() == data.size());
  CHECK(back.classes == data.classes);
  CHECK(back.labels == data.labels);
  CHECK(back.contexts == data.contexts);
  CHECK(bitwise_equal(back.images, data.images));

  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK_THROWS_AS(load_dataset(path), DataError);
  CHECK_THROWS_AS(load_dataset(dir.file("missing.bin")), DataError);
}

TEST_CASE("channel stats guard empty datasets and constant channels") {
  Dataset empty;
  empty.images = Tensor<float>({0, 3, 2, 2});
  CHECK_THROWS_AS(compute_channel_stats(empty), DataError);

  Dataset flat;
  flat.classes = 2;
  flat.images = Tensor<float>({4, 1, 2, 2}, 0.5f);
  flat.labels = {0, 1, 0, 1};
  const ChannelStats stats = compute_channel_stats(flat);
  CHECK(stats.mean[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(stats.stddev[0] > 0.0f);  // guarded, never zero
}
