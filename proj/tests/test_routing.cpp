#include <cmath>

#include "doctest.h"
#include "mpnet/gradcheck.hpp"
#include "mpnet/routing.hpp"
#include "test_util.hpp"

using namespace mpnet;
using namespace mpnet::testutil;

namespace {

template <class T>
std::vector<Var<T>> random_inputs(int64_t m, std::vector<int64_t> shape, Rng& rng) {
  std::vector<Var<T>> xs;
  for (int64_t i = 0; i < m; ++i) xs.push_back(constant(random_tensor<T>(shape, rng)));
  return xs;
}

}  // namespace

TEST_CASE("gate unit parameter count formula") {
  Rng rng(3);
  auto unit = make_gate_unit<float>(32, 2, rng);
  CHECK(unit.parameter_count() == 562);  // (32*16+16) + (16*2+2)
  CHECK(gate_unit_param_count(32, 2) == 562);
  CHECK(gate_unit_param_count(3, 2) == 98);
  CHECK(gate_unit_param_count(128, 4) == 2132);
}

TEST_CASE("compute_gates: zeroed unit gives uniform gates, n=1 gives [1]") {
  Rng rng(5);
  auto unit = make_gate_unit<float>(8, 2, rng);
  unit.w1->value.fill(0.0f);
  unit.b1->value.fill(0.0f);
  unit.w2->value.fill(0.0f);
  unit.b2->value.fill(0.0f);
  auto x = constant(random_tensor<float>({3, 8, 4, 4}, rng));
  auto acts = compute_gates<float>(nullptr, unit, x);
  CHECK(acts.gates->value.shape() == std::vector<int64_t>{3, 2});
  for (int64_t i = 0; i < acts.gates->value.size(); ++i)
    CHECK(acts.gates->value[i] == 0.5f);

  auto single = make_gate_unit<float>(8, 1, rng);
  auto g1 = compute_gates<float>(nullptr, single, x);
  for (int64_t i = 0; i < g1.gates->value.size(); ++i) CHECK(g1.gates->value[i] == 1.0f);

  auto wrong = constant(random_tensor<float>({3, 5, 4, 4}, rng));
  CHECK_THROWS_AS(compute_gates<float>(nullptr, unit, wrong), ShapeError);
}

TEST_CASE("compute_gates: 2-d input skips GAP and per-channel shifts change Z") {
  Rng rng(7);
  auto unit = make_gate_unit<float>(6, 3, rng);
  auto x = constant(random_tensor<float>({2, 6}, rng));
  auto acts = compute_gates<float>(nullptr, unit, x);
  CHECK(acts.gates->value.shape() == std::vector<int64_t>{2, 3});

  // A constant per-channel shift changes the GAP descriptor, so gates
  // generally differ.
  auto x4 = constant(random_tensor<float>({1, 6, 4, 4}, rng));
  Tensor<float> shifted = x4->value;
  for (int64_t c = 0; c < 6; ++c)
    for (int64_t i = 0; i < 16; ++i) shifted[c * 16 + i] += 0.5f + 0.1f * static_cast<float>(c);
  auto g_base = compute_gates<float>(nullptr, unit, x4);
  auto g_shift = compute_gates<float>(nullptr, unit, constant(shifted));
  CHECK(max_abs_diff(g_base.gates->value, g_shift.gates->value) > 1e-6);
}

TEST_CASE("cross_connect: fixed identity coefficients give a permutation") {
  Rng rng(11);
  CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::fixed_stitch, 2, 2, 4, 0, rng);
  layer.coeffs->value = Tensor<float>::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  auto xs = random_inputs<float>(2, {2, 4, 3, 3}, rng);
  auto out = cross_connect<float>(nullptr, layer, xs);
  CHECK(bitwise_equal(out.outputs[0]->value, xs[0]->value));
  CHECK(bitwise_equal(out.outputs[1]->value, xs[1]->value));
}

TEST_CASE("cross_connect: m=1, n=1 is exact identity (singleton softmax)") {
  Rng rng(13);
  CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::adaptive, 1, 1, 4, 0, rng);
  auto xs = random_inputs<float>(1, {2, 4, 5, 5}, rng);
  auto out = cross_connect<float>(nullptr, layer, xs);
  CHECK(bitwise_equal(out.outputs[0]->value, xs[0]->value));
}

TEST_CASE("cross_connect: mass conservation over random adaptive layers") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t m = 1 + static_cast<int64_t>(rng.uniform_int(3ull));
    const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(3ull));
    const int64_t c = 1 + static_cast<int64_t>(rng.uniform_int(6ull));
    CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::adaptive, m, n, c, 0, rng);
    auto xs = random_inputs<float>(m, {2, c, 3, 3}, rng);
    auto out = cross_connect<float>(nullptr, layer, xs);

    Tensor<float> in_sum(xs[0]->value.shape());
    for (const auto& x : xs)
      for (int64_t i = 0; i < in_sum.size(); ++i) in_sum[i] += x->value[i];
    Tensor<float> out_sum(xs[0]->value.shape());
    for (const auto& y : out.outputs)
      for (int64_t i = 0; i < out_sum.size(); ++i) out_sum[i] += y->value[i];
    CHECK(max_abs_diff(in_sum, out_sum) < 1e-5);

    // Column-stochastic gate matrices for every sample. Entries are in
    // (0, 1) strictly once there are at least two outputs; a singleton
    // softmax is exactly 1.
    for (int64_t s = 0; s < 2; ++s) {
      GateMatrix<float> gm = sample_gate_matrix(layer, out, s);
      for (float col_sum : gm.column_sums()) CHECK(std::abs(col_sum - 1.0f) < 1e-6f);
      for (float v : gm.values) {
        CHECK(v > 0.0f);
        if (n > 1) CHECK(v < 1.0f);
        else CHECK(v == 1.0f);
      }
    }
  }
}

TEST_CASE("cross_connect: zero gate parameters mean exact uniform mixing") {
  Rng rng(19);
  for (int64_t n : {2, 3, 4}) {
    CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::adaptive, 2, n, 4, 0, rng);
    for (auto& unit : layer.gate_units) {
      unit.w1->value.fill(0.0f);
      unit.b1->value.fill(0.0f);
      unit.w2->value.fill(0.0f);
      unit.b2->value.fill(0.0f);
    }
    auto xs = random_inputs<float>(2, {3, 4, 2, 2}, rng);
    auto out = cross_connect<float>(nullptr, layer, xs);

    // Gates are exactly 1/n and all outputs are bitwise identical.
    const float uniform = 1.0f / static_cast<float>(n);
    for (const auto& g : out.gates)
      for (int64_t i = 0; i < g->value.size(); ++i) CHECK(g->value[i] == uniform);
    for (int64_t j = 1; j < n; ++j)
      CHECK(bitwise_equal(out.outputs[0]->value, out.outputs[static_cast<size_t>(j)]->value));

    // And each equals the uniform mixture up to rounding.
    Tensor<float> expected(xs[0]->value.shape());
    for (int64_t i = 0; i < expected.size(); ++i)
      expected[i] = uniform * xs[0]->value[i] + uniform * xs[1]->value[i];
    CHECK(max_abs_diff(out.outputs[0]->value, expected) < 1e-6);
  }
}

TEST_CASE("cross_connect: per-sample independence under batch permutation") {
  Rng rng(23);
  CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::adaptive, 2, 2, 3, 0, rng);
  auto xs = random_inputs<float>(2, {4, 3, 3, 3}, rng);

  // Reverse the batch of each input.
  std::vector<Var<float>> reversed;
  for (const auto& x : xs) {
    Tensor<float> r(x->value.shape());
    const int64_t inner = x->value.size() / 4;
    for (int64_t s = 0; s < 4; ++s)
      std::copy(x->value.data() + s * inner, x->value.data() + (s + 1) * inner,
                r.data() + (3 - s) * inner);
    reversed.push_back(constant(std::move(r)));
  }

  auto out_a = cross_connect<float>(nullptr, layer, xs);
  auto out_b = cross_connect<float>(nullptr, layer, reversed);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t s = 0; s < 4; ++s)
      for (int64_t j = 0; j < 2; ++j)
        CHECK(out_a.gates[static_cast<size_t>(i)]->value.at2(s, j) ==
              out_b.gates[static_cast<size_t>(i)]->value.at2(3 - s, j));
}

TEST_CASE("cross_connect: heterogeneous shapes and wrong arity rejected") {
  Rng rng(29);
  CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::adaptive, 2, 2, 3, 0, rng);
  auto a = constant(random_tensor<float>({1, 3, 4, 4}, rng));
  auto b = constant(random_tensor<float>({1, 3, 5, 5}, rng));
  CHECK_THROWS_AS(cross_connect<float>(nullptr, layer, {a, b}), ShapeError);
  CHECK_THROWS_AS(cross_connect<float>(nullptr, layer, {a}), ShapeError);
}

TEST_CASE("cross_connect: gradients reach gate parameters (finite differences)") {
  Rng rng(31);
  CrossConnectLayer<double> layer = make_cross_connect<double>(RoutingMode::adaptive, 2, 2, 3, 0, rng);
  auto x0 = constant(random_tensor<double>({2, 3, 3, 3}, rng));
  auto x1 = constant(random_tensor<double>({2, 3, 3, 3}, rng));

  std::vector<std::pair<std::string, Var<double>>> leaves;
  for (int64_t i = 0; i < 2; ++i) {
    const auto& u = layer.gate_units[static_cast<size_t>(i)];
    leaves.emplace_back("gate" + std::to_string(i) + ".w1", u.w1);
    leaves.emplace_back("gate" + std::to_string(i) + ".b1", u.b1);
    leaves.emplace_back("gate" + std::to_string(i) + ".w2", u.w2);
    leaves.emplace_back("gate" + std::to_string(i) + ".b2", u.b2);
  }

  GradCheckOptions opt;
  opt.tolerance = 1e-6;
  auto report = grad_check<double>(
      [&](Tape<double>* tape) {
        Tape<double> scratch;
        Tape<double>* t = tape ? tape : &scratch;
        auto out = cross_connect(t, layer, {x0, x1});
        Tensor<double> w0(out.outputs[0]->value.shape());
        Rng wrng(77);
        for (int64_t i = 0; i < w0.size(); ++i) w0[i] = wrng.uniform(-1.0, 1.0);
        auto mixed = add(t, out.outputs[0],
                         scalar_broadcast_mul(t, constant(Tensor<double>::scalar(0.5)),
                                              out.outputs[1]));
        auto shifted = add(t, mixed, constant(std::move(w0)));
        return sum_squares(t, shifted);
      },
      leaves, opt);
  CHECK(report.pass);

  // Gradients also flow into the inputs through both mixing and GAP.
  auto x_leaf = leaf(random_tensor<double>({1, 3, 3, 3}, rng), true);
  auto input_report = grad_check<double>(
      [&](Tape<double>* tape) {
        Tape<double> scratch;
        Tape<double>* t = tape ? tape : &scratch;
        auto out = cross_connect(t, layer, {x_leaf, x_leaf});
        return sum_squares(t, out.outputs[0]);
      },
      {{"input", x_leaf}}, opt);
  CHECK(input_report.pass);
}

TEST_CASE("expand_input: split and reconstruction") {
  Rng rng(37);
  CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::adaptive, 1, 2, 3, 0, rng);
  for (auto& unit : layer.gate_units) {
    unit.w1->value.fill(0.0f);
    unit.b1->value.fill(0.0f);
    unit.w2->value.fill(0.0f);
    unit.b2->value.fill(0.0f);
  }
  auto image = constant(random_tensor<float>({1, 3, 6, 6}, rng));
  auto out = expand_input<float>(nullptr, layer, image);
  REQUIRE(out.outputs.size() == 2);
  for (int64_t i = 0; i < image->value.size(); ++i) {
    CHECK(out.outputs[0]->value[i] == 0.5f * image->value[i]);
    CHECK(out.outputs[1]->value[i] == 0.5f * image->value[i]);
  }

  // Forced [1, 0] via fixed coefficients: [image, zeros].
  CrossConnectLayer<float> forced = make_cross_connect<float>(RoutingMode::fixed_stitch, 1, 2, 3, 0, rng);
  forced.coeffs->value = Tensor<float>::from({2, 1}, {1.0f, 0.0f});
  auto hard = expand_input<float>(nullptr, forced, image);
  CHECK(bitwise_equal(hard.outputs[0]->value, image->value));
  for (int64_t i = 0; i < image->value.size(); ++i) CHECK(hard.outputs[1]->value[i] == 0.0f);

  // Random unit: sum of outputs reconstructs the image.
  CrossConnectLayer<float> rnd = make_cross_connect<float>(RoutingMode::adaptive, 1, 3, 3, 0, rng);
  auto split = expand_input<float>(nullptr, rnd, image);
  Tensor<float> sum(image->value.shape());
  for (const auto& y : split.outputs)
    for (int64_t i = 0; i < sum.size(); ++i) sum[i] += y->value[i];
  CHECK(max_abs_diff(sum, image->value) < 1e-6);

  CrossConnectLayer<float> not_expansion = make_cross_connect<float>(RoutingMode::adaptive, 2, 2, 3, 0, rng);
  CHECK_THROWS_AS(expand_input<float>(nullptr, not_expansion, image), ShapeError);
}

TEST_CASE("average_heads") {
  Rng rng(41);
  auto a = constant(Tensor<float>::from({1, 2}, {2.0f, 0.0f}));
  auto b = constant(Tensor<float>::from({1, 2}, {0.0f, 2.0f}));
  auto avg = average_heads<float>(nullptr, {a, b});
  CHECK(avg->value[0] == 1.0f);
  CHECK(avg->value[1] == 1.0f);

  auto same = constant(random_tensor<float>({2, 4}, rng));
  auto one = average_heads<float>(nullptr, {same});
  CHECK(bitwise_equal(one->value, same->value));
  auto twice = average_heads<float>(nullptr, {same, same});
  CHECK(max_abs_diff(twice->value, same->value) < 1e-7);

  CHECK_THROWS_AS(average_heads<float>(nullptr, {}), ShapeError);
}

TEST_CASE("fixed-stitch coefficients start near 1/n and are unconstrained") {
  Rng rng(43);
  CrossConnectLayer<float> layer = make_cross_connect<float>(RoutingMode::fixed_stitch, 2, 4, 8, 0, rng);
  CHECK(layer.coeffs->value.shape() == std::vector<int64_t>{4, 2});
  for (int64_t i = 0; i < layer.coeffs->value.size(); ++i)
    CHECK(std::abs(layer.coeffs->value[i] - 0.25f) <= 0.01f);
  CHECK(layer.parameter_count() == 8);
}
