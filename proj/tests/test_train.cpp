#include <cmath>

#include "doctest.h"
#include "mpnet/augment.hpp"
#include "mpnet/train.hpp"
#include "test_util.hpp"

using namespace mpnet;
using namespace mpnet::testutil;

namespace {

struct Fixture {
  Dataset train, val;
  ChannelStats stats;

  explicit Fixture(int per_cell = 16, int image_size = 8, float noise = 0.02f,
                   uint64_t seed = 9) {
    SyntheticContextSpec spec;
    spec.samples_per_cell = per_cell;
    spec.image_size = image_size;
    spec.noise = noise;
    spec.seed = seed;
    const Dataset all = generate_synthetic(spec);
    SplitResult split = split_dataset(all, 0.8, seed);
    train = std::move(split.train);
    val = std::move(split.val);
    stats = compute_channel_stats(train);
  }
};

Model<float> make_model(int64_t paths, ModelMode mode, uint64_t seed, int64_t size = 8) {
  ModelSpec spec;
  spec.paths = paths;
  spec.mode = mode;
  spec.classes = 4;
  spec.in_h = size;
  spec.in_w = size;
  Rng rng(seed);
  return build_basecnn_x<float>(spec, rng);
}

}  // namespace

TEST_CASE("lr schedule: paper values and boundaries") {
  TrainConfig cfg;  // defaults: lr 0.1, decay 10 at epochs 80, 150
  CHECK(lr_at(0, cfg) == doctest::Approx(0.1));
  CHECK(lr_at(79, cfg) == doctest::Approx(0.1));
  CHECK(lr_at(80, cfg) == doctest::Approx(0.01));
  CHECK(lr_at(149, cfg) == doctest::Approx(0.01));
  CHECK(lr_at(150, cfg) == doctest::Approx(0.001));
  CHECK(lr_at(199, cfg) == doctest::Approx(0.001));

  TrainConfig single;
  single.epochs = 60;
  single.decay_epochs = {50};
  CHECK(lr_at(49, single) == doctest::Approx(0.1));
  CHECK(lr_at(50, single) == doctest::Approx(0.01));
}

TEST_CASE("train config validation") {
  TrainConfig bad;
  bad.decay_epochs = {80, 250};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.decay_epochs = {150, 80};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.decay_epochs = {};
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  TrainConfig ok;
  ok.validate();
}

TEST_CASE("sgd momentum: hand-computed steps") {
  auto p = parameter(Tensor<double>::scalar(1.0));
  const std::vector<std::pair<std::string, Var<double>>> params{{"p", p}};
  SgdMomentum<double> opt;
  opt.lr = 0.1;
  opt.momentum = 0.9;
  opt.attach(params);

  // Step 1: g = 1 -> v = -0.1, p = 0.9.
  p->grad[0] = 1.0;
  opt.step(params);
  CHECK(p->value[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(opt.velocity[0][0] == doctest::Approx(-0.1).epsilon(1e-12));

  // Step 2: g = 1 -> v = 0.9*(-0.1) - 0.1 = -0.19, p = 0.71.
  p->grad[0] = 1.0;
  opt.step(params);
  CHECK(p->value[0] == doctest::Approx(0.71).epsilon(1e-12));
  CHECK(opt.velocity[0][0] == doctest::Approx(-0.19).epsilon(1e-12));

  // Zero gradients afterwards: p drifts by the geometric series of v.
  // After k extra steps, p = 0.71 + sum_{t=1..k} (-0.19) * 0.9^t.
  p->grad[0] = 0.0;
  double expect = 0.71;
  double v = -0.19;
  for (int k = 0; k < 5; ++k) {
    opt.step(params);
    v *= 0.9;
    expect += v;
    CHECK(p->value[0] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("sgd with lr=0 from rest is a no-op on parameters") {
  auto p = parameter(Tensor<float>({4}, 2.0f));
  const std::vector<std::pair<std::string, Var<float>>> params{{"p", p}};
  SgdMomentum<float> opt;
  opt.lr = 0.0f;
  opt.momentum = 0.9f;
  opt.attach(params);
  p->ensure_grad();
  p->grad.fill(3.0f);
  opt.step(params);
  for (int64_t i = 0; i < 4; ++i) CHECK(p->value[i] == 2.0f);
}

TEST_CASE("descent property: one small-lr step lowers the fixed-batch loss") {
  Fixture data(8);
  Model<float> model = make_model(2, ModelMode::adaptive, 51);

  Tensor<float> batch({16, 3, 8, 8});
  std::vector<int> labels;
  for (int64_t i = 0; i < 16; ++i) {
    fill_normalized(batch, i, data.train.image(i), data.stats);
    labels.push_back(data.train.labels[static_cast<size_t>(i)]);
  }
  auto input = constant(batch);

  SgdMomentum<float> opt;
  opt.lr = 1e-4f;
  opt.momentum = 0.0f;
  opt.attach(model.params);

  Tape<float> tape;
  opt.zero_grad(model.params);
  auto out = forward(model, &tape, input);
  auto loss0 = cross_entropy_loss(&tape, out.logits, labels);
  tape.backward(loss0);
  opt.step(model.params);
  tape.clear();

  auto out1 = forward(model, static_cast<Tape<float>*>(nullptr), input);
  auto loss1 = cross_entropy_loss<float>(nullptr, out1.logits, labels);
  CHECK(loss1->value[0] < loss0->value[0]);
}

TEST_CASE("full-batch training: loss strictly decreases over the first steps") {
  Fixture data(10, 8, 0.0f, 13);  // 64 training samples
  REQUIRE(data.train.size() == 64);
  Model<float> model = make_model(2, ModelMode::adaptive, 53);

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 64;  // one step per epoch
  cfg.lr = 0.01;
  cfg.decay_epochs = {};
  cfg.seed = 3;
  cfg.shift_pixels = 0;
  cfg.hflip = false;

  const TrainReport report = train(model, data.train, data.val, data.stats, cfg);
  REQUIRE(report.epochs.size() == 5);
  for (size_t e = 1; e < report.epochs.size(); ++e)
    CHECK(report.epochs[e].train_loss < report.epochs[e - 1].train_loss);
}

TEST_CASE("capacity sanity: 32 samples overfit to 100% in 200 steps") {
  SyntheticContextSpec spec;
  spec.samples_per_cell = 4;  // 32 samples
  spec.image_size = 8;
  spec.noise = 0.0f;
  spec.seed = 15;
  const Dataset tiny = generate_synthetic(spec);

  Model<float> model = make_model(1, ModelMode::adaptive, 55);
  const ChannelStats stats = compute_channel_stats(tiny);

  TrainConfig cfg;
  cfg.epochs = 200;  // batch = dataset, one step per epoch
  cfg.batch_size = 32;
  cfg.lr = 0.02;
  cfg.decay_epochs = {};
  cfg.seed = 5;
  cfg.shift_pixels = 0;  // memorization test, no augmentation
  cfg.hflip = false;

  const TrainReport report = train(model, tiny, tiny, stats, cfg);
  CHECK(report.epochs.back().train_acc == 1.0);
}

TEST_CASE("training is deterministic given the seed") {
  Fixture data(8);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.decay_epochs = {};
  cfg.seed = 21;

  Model<float> m1 = make_model(2, ModelMode::adaptive, 57);
  const TrainReport r1 = train(m1, data.train, data.val, data.stats, cfg);
  Model<float> m2 = make_model(2, ModelMode::adaptive, 57);
  const TrainReport r2 = train(m2, data.train, data.val, data.stats, cfg);

  CHECK(r1.deterministic_equal(r2));
  CHECK(parameter_hash(m1) == parameter_hash(m2));

  cfg.seed = 22;
  Model<float> m3 = make_model(2, ModelMode::adaptive, 57);
  const TrainReport r3 = train(m3, data.train, data.val, data.stats, cfg);
  CHECK(!r1.deterministic_equal(r3));
}

TEST_CASE("training leaves validation data untouched; augmentation is train-only") {
  Fixture data(8);
  const uint64_t val_before = [&] {
    uint64_t h = 1469598103934665603ull;
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.val.images.data());
    for (size_t i = 0; i < static_cast<size_t>(data.val.images.size()) * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
    return h;
  }();

  Model<float> model = make_model(2, ModelMode::adaptive, 59);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.lr = 0.01;
  cfg.decay_epochs = {};
  train(model, data.train, data.val, data.stats, cfg);

  uint64_t val_after = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.val.images.data());
  for (size_t i = 0; i < static_cast<size_t>(data.val.images.size()) * sizeof(float); ++i) {
    val_after ^= bytes[i];
    val_after *= 1099511628211ull;
  }
  CHECK(val_after == val_before);
}

TEST_CASE("augmentation: identity, double flip, determinism") {
  Rng rng(61);
  const Tensor<float> image = random_tensor<float>({3, 8, 8}, rng);

  CHECK(bitwise_equal(shift(image, 0, 0), image));
  CHECK(bitwise_equal(hflip(hflip(image)), image));

  // Shifted-out content is zero-padded.
  const Tensor<float> shifted = shift(image, 2, -1);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 8; ++y) {
      CHECK(shifted[(c * 8 + y) * 8 + 0] == 0.0f);
      CHECK(shifted[(c * 8 + y) * 8 + 1] == 0.0f);
    }

  AugmentConfig cfg;
  Rng a(99), b(99);
  for (int trial = 0; trial < 10; ++trial)
    CHECK(bitwise_equal(augment(image, a, cfg), augment(image, b, cfg)));
}

TEST_CASE("evaluate: constant logits, contrived logits, idempotence") {
  Fixture data(8);

  // Zeroed head weights give constant logits: accuracy equals the share of
  // the argmax-0 class on a balanced set.
  Model<float> model = make_model(1, ModelMode::adaptive, 63);
  for (auto& [name, p] : model.params) p->value.fill(0.0f);
  const EvalResult flat = evaluate(model, data.val, data.stats);
  CHECK(flat.accuracy == doctest::Approx(0.25).epsilon(1e-9));  // 4 balanced classes

  const EvalResult again = evaluate(model, data.val, data.stats);
  CHECK(flat.loss == again.loss);
  CHECK(flat.accuracy == again.accuracy);

  const uint64_t hash_before = parameter_hash(model);
  evaluate(model, data.val, data.stats);
  CHECK(parameter_hash(model) == hash_before);

  Dataset empty;
  empty.classes = 4;
  empty.images = Tensor<float>({0, 3, 8, 8});
  CHECK_THROWS_AS(evaluate(model, empty, data.stats), DataError);
}

TEST_CASE("exploding training aborts with a located diagnosis") {
  Fixture data(8);
  Model<float> model = make_model(2, ModelMode::adaptive, 65);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 16;
  cfg.lr = 1e9;  // guaranteed blow-up
  cfg.decay_epochs = {};
  CHECK_THROWS_WITH_AS(train(model, data.train, data.val, data.stats, cfg),
                       doctest::Contains("epoch"), NumericalError);
}
