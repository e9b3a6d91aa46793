#include <unistd.h>

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mpnet/analysis.hpp"
#include "mpnet/io.hpp"
#include "test_util.hpp"

using namespace mpnet;
using namespace mpnet::testutil;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("mpnet_ana_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct Fixture {
  Dataset data;
  ChannelStats stats;
  Model<float> model;

  Fixture() {
    SyntheticContextSpec spec;
    spec.samples_per_cell = 8;  // 64 samples
    spec.image_size = 8;
    spec.seed = 3;
    data = generate_synthetic(spec);
    stats = compute_channel_stats(data);

    ModelSpec mspec;
    mspec.paths = 2;
    mspec.classes = 4;
    mspec.in_h = 8;
    mspec.in_w = 8;
    Rng rng(71);
    model = build_basecnn_x<float>(mspec, rng);
  }
};

}  // namespace

TEST_CASE("trace_routes: structure, uniform untrained gates, purity") {
  Fixture f;
  zero_gate_parameters(f.model);
  const uint64_t hash_before = parameter_hash(f.model);

  const RouteTraceSet traces = trace_routes(f.model, f.data, f.stats);
  CHECK(parameter_hash(f.model) == hash_before);
  CHECK(traces.cross_layers == 5);
  CHECK(traces.records.size() == static_cast<size_t>(f.data.size() * 5));

  for (const auto& r : traces.records) {
    for (float g : r.gates) CHECK(g == 0.5f);
    float in_sum = 0.0f, out_sum = 0.0f;
    for (float s : r.in_strength) in_sum += s;
    for (float s : r.out_strength) out_sum += s;
    CHECK(in_sum == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(out_sum == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("trace of a batch equals concatenated single-sample traces") {
  Fixture f;
  std::vector<int64_t> head{0, 1, 2, 3};
  const Dataset four = take_subset(f.data, head);
  const RouteTraceSet batch = trace_routes(f.model, four, f.stats);

  for (int64_t i = 0; i < 4; ++i) {
    const Dataset one = take_subset(f.data, {i});
    const RouteTraceSet single = trace_routes(f.model, one, f.stats);
    for (const auto& rec : single.records) {
      // Find the matching record in the batch trace.
      bool found = false;
      for (const auto& brec : batch.records)
        if (brec.sample_id == i && brec.layer == rec.layer) {
          found = true;
          for (size_t k = 0; k < rec.gates.size(); ++k) CHECK(brec.gates[k] == rec.gates[k]);
        }
      CHECK(found);
    }
  }
}

TEST_CASE("trace exports: csv header and json array") {
  Fixture f;
  TempDir dir;
  const Dataset two = take_subset(f.data, {0, 1});
  const RouteTraceSet traces = trace_routes(f.model, two, f.stats);
  write_trace_csv(traces, dir.file("trace.csv"));
  write_trace_json(traces, dir.file("trace.json"));

  const std::string csv = read_text_file(dir.file("trace.csv"));
  CHECK(csv.find("sample_id,label,context,layer,m,n") == 0);
  CHECK(csv.find("g0_0") != std::string::npos);
  CHECK(csv.find("in0") != std::string::npos);
  CHECK(csv.find("out1") != std::string::npos);

  const std::string json = read_text_file(dir.file("trace.json"));
  CHECK(json.front() == '[');

  std::vector<RouteTraceRecord> first;
  for (const auto& r : traces.records)
    if (r.sample_id == 0) first.push_back(r);
  write_route_svg(first, dir.file("route.svg"));
  const std::string svg = read_text_file(dir.file("route.svg"));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("<rect") != std::string::npos);
}

TEST_CASE("rank_by_gate: extremes, disjointness, determinism, validation") {
  Fixture f;
  const GateAddress addr{0, 0, 0};  // input expansion gate
  const GateRanking ranking = rank_by_gate(f.model, f.data, f.stats, addr, 10);
  CHECK(ranking.top.size() == 10);
  CHECK(ranking.bottom.size() == 10);

  // Top values are sorted descending, bottom ascending, and the sets are
  // disjoint on a dataset much larger than 2k.
  for (size_t i = 1; i < ranking.top.size(); ++i)
    CHECK(ranking.top[i - 1].gate_value >= ranking.top[i].gate_value);
  for (size_t i = 1; i < ranking.bottom.size(); ++i)
    CHECK(ranking.bottom[i - 1].gate_value <= ranking.bottom[i].gate_value);
  for (const auto& t : ranking.top)
    for (const auto& b : ranking.bottom) CHECK(t.sample_id != b.sample_id);

  // k=1 on a 3-sample set picks the true extremes.
  const Dataset three = take_subset(f.data, {0, 1, 2});
  const GateRanking tiny = rank_by_gate(f.model, three, f.stats, addr, 1);
  const RouteTraceSet traces = trace_routes(f.model, three, f.stats);
  float best = -1.0f, worst = 2.0f;
  int64_t best_id = -1, worst_id = -1;
  for (const auto& r : traces.records)
    if (r.layer == 0) {
      if (r.gates[0] > best) {
        best = r.gates[0];
        best_id = r.sample_id;
      }
      if (r.gates[0] < worst) {
        worst = r.gates[0];
        worst_id = r.sample_id;
      }
    }
  CHECK(tiny.top[0].sample_id == best_id);
  CHECK(tiny.bottom[0].sample_id == worst_id);

  CHECK_THROWS_AS(rank_by_gate(f.model, f.data, f.stats, {9, 0, 0}, 5), ConfigError);
  CHECK_THROWS_AS(rank_by_gate(f.model, f.data, f.stats, {1, 5, 0}, 5), ConfigError);
  CHECK_THROWS_AS(rank_by_gate(f.model, f.data, f.stats, {1, 0, 7}, 5), ConfigError);

  TempDir dir;
  write_ranking_csv(ranking, dir.file("rank.csv"));
  CHECK(read_text_file(dir.file("rank.csv")).find("end,rank,sample_id") == 0);
}

TEST_CASE("synthesis: frozen params, monotone-ish objective, step-size zero") {
  Fixture f;
  const uint64_t hash_before = parameter_hash(f.model);

  SynthesisConfig cfg;
  cfg.target = {1, 0, 1};  // first post-conv cross layer
  cfg.steps = 40;
  cfg.step_size = 0.05;
  cfg.l2_coeff = 0.001;
  // Zeros-init on an untrained model (zero biases) sits exactly on the
  // relu kink where relu' := 0, a true flat point; start from noise.
  cfg.init = SynthesisInit::noise;
  cfg.seed = 5;
  const SynthesisResult result = synthesize_gate_input(f.model, f.stats, cfg);

  CHECK(parameter_hash(f.model) == hash_before);  // freeze contract
  CHECK(result.objective.size() == 41);
  CHECK(result.objective.back() > result.objective.front());
  CHECK(result.relevance_final > result.relevance_start);
  CHECK(result.image.shape() == std::vector<int64_t>{3, 8, 8});

  // Step size zero: nothing moves.
  SynthesisConfig frozen = cfg;
  frozen.steps = 5;
  frozen.step_size = 0.0;
  const SynthesisResult still = synthesize_gate_input(f.model, f.stats, frozen);
  for (double obj : still.objective) CHECK(obj == still.objective[0]);
  CHECK(still.relevance_final == still.relevance_start);

  // Dominant regularizer pins the input near zero (denormalized: the
  // channel means). 2 * l2 * step stays below 1 so the pull contracts.
  SynthesisConfig heavy = cfg;
  heavy.init = SynthesisInit::noise;
  heavy.l2_coeff = 50.0;
  heavy.steps = 200;
  heavy.step_size = 0.005;
  const SynthesisResult pinned = synthesize_gate_input(f.model, f.stats, heavy);
  double dist = 0.0;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 64; ++i)
      dist += std::abs(static_cast<double>(pinned.image[c * 64 + i]) -
                       static_cast<double>(f.stats.mean[static_cast<size_t>(c)]));
  CHECK(dist / (3 * 64) < 0.02);

  TempDir dir;
  write_objective_csv(result, dir.file("objective.csv"));
  CHECK(read_text_file(dir.file("objective.csv")).find("step,objective") == 0);
  write_ppm(dir.file("synth.ppm"), result.image);
  CHECK(read_text_file(dir.file("synth.ppm")).substr(0, 2) == "P6");
}

TEST_CASE("weight_histograms: identical paths, counts, errors, exports") {
  Fixture f;
  // Clone path 0 into path 1: histogram distance must be exactly zero.
  for (size_t j = 0; j < f.model.conv[0].size(); ++j) {
    f.model.conv[1][j].weight->value = f.model.conv[0][j].weight->value;
    f.model.conv[1][j].bias->value = f.model.conv[0][j].bias->value;
  }
  for (size_t j = 0; j < f.model.dense[0].size(); ++j) {
    f.model.dense[1][j].weight->value = f.model.dense[0][j].weight->value;
    f.model.dense[1][j].bias->value = f.model.dense[0][j].bias->value;
  }

  const auto hists = weight_histograms(f.model, {3, 7}, 31);
  REQUIRE(hists.size() == 2);
  CHECK(hists[0].layer == "conv3");
  CHECK(hists[1].layer == "dense1");
  for (const auto& h : hists) {
    CHECK(h.max_pairwise_l1 == 0.0);
    for (const auto& counts : h.counts) {
      int64_t total = 0;
      for (int64_t c : counts) total += c;
      CHECK(total == h.param_count);
    }
  }
  // conv3: 64 -> 64 filters of 3x3 plus bias.
  CHECK(hists[0].param_count == 64 * 64 * 9 + 64);

  ModelSpec single;
  single.paths = 1;
  single.in_h = 8;
  single.in_w = 8;
  single.classes = 4;
  Rng rng(5);
  Model<float> one_path = build_basecnn_x<float>(single, rng);
  CHECK_THROWS_AS(weight_histograms(one_path, {0}, 16), ConfigError);
  CHECK_THROWS_AS(weight_histograms(f.model, {40}, 16), ConfigError);

  TempDir dir;
  write_histogram_csv(hists, dir.file("hist.csv"));
  write_histogram_svg(hists, dir.file("hist.svg"));
  CHECK(read_text_file(dir.file("hist.csv")).find("layer,path,bin") == 0);
  CHECK(read_text_file(dir.file("hist.svg")).find("<svg") != std::string::npos);
}
