#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpnet/dataset.hpp"
#include "mpnet/model.hpp"

namespace mpnet {

/// Routing record of one sample at one cross-connection layer.
struct RouteTraceRecord {
  int64_t sample_id = 0;
  int label = 0;
  int context = -1;  // -1 when the dataset has no context metadata
  int64_t layer = 0;
  int64_t m = 0, n = 0;
  std::vector<float> gates;         // row-major n x m
  std::vector<float> in_strength;   // length m, sums to 1
  std::vector<float> out_strength;  // length n, sums to 1
};

struct RouteTraceSet {
  std::vector<RouteTraceRecord> records;
  int64_t cross_layers = 0;
};

/// Runs the model over the dataset and collects one record per sample per
/// cross-connection layer. Pure read: parameters untouched.
RouteTraceSet trace_routes(const Model<float>& model, const Dataset& data,
                           const ChannelStats& stats, int batch_size = 128);

/// CSV schema: sample_id,label,context,layer,m,n,
///   g{j}_{i} (row-major gate matrix), in{i}, out{j}.
void write_trace_csv(const RouteTraceSet& traces, const std::string& path);
void write_trace_json(const RouteTraceSet& traces, const std::string& path);

/// Layer diagram in the style of the route visualizations: boxes shaded by
/// relative path strength, connection lines weighted by gate value.
/// Draws the trace records of a single sample.
void write_route_svg(const std::vector<RouteTraceRecord>& sample_records,
                     const std::string& path);

struct GateAddress {
  int64_t layer = 0;  // cross-connection index, forward order, 0-based
  int64_t input = 0;  // i: which input tensor's gate unit
  int64_t gate = 0;   // j: which output gate
};

void validate_gate_address(const Model<float>& model, const GateAddress& addr);

struct RankEntry {
  int64_t sample_id = 0;
  int label = 0;
  int context = -1;
  float gate_value = 0.0f;
};

struct GateRanking {
  GateAddress address;
  std::vector<RankEntry> top;     // highest gate values, descending
  std::vector<RankEntry> bottom;  // lowest gate values, ascending
};

/// Ranks dataset samples by g^l_ij. Deterministic: ties break by sample id.
GateRanking rank_by_gate(const Model<float>& model, const Dataset& data,
                         const ChannelStats& stats, const GateAddress& addr, int64_t k,
                         int batch_size = 128);

void write_ranking_csv(const GateRanking& ranking, const std::string& path);

enum class SynthesisInit { zeros, noise };

/// Gradient-ascent synthesis of an input that maximizes the pre-softmax
/// relevance score a^l_ij of a frozen model, with L2 pullback.
struct SynthesisConfig {
  GateAddress target;
  int steps = 256;
  double step_size = 0.1;
  double l2_coeff = 0.01;
  SynthesisInit init = SynthesisInit::zeros;
  uint64_t seed = 0;
};

struct SynthesisResult {
  Tensor<float> image;             // (C, H, W) in [0, 1], denormalized
  std::vector<double> objective;   // per step, a^l_ij - lambda * |x|^2
  double relevance_start = 0.0;    // a^l_ij at step 0
  double relevance_final = 0.0;
};

SynthesisResult synthesize_gate_input(const Model<float>& model, const ChannelStats& stats,
                                      const SynthesisConfig& cfg);

void write_objective_csv(const SynthesisResult& result, const std::string& path);

/// Per-path histogram of one feed-forward layer's parameters (weights and
/// bias), over a bin range shared across paths.
struct LayerHistogram {
  std::string layer;        // e.g. "conv3" or "dense1"
  int64_t param_count = 0;  // per path
  float lo = 0.0f, hi = 0.0f;
  std::vector<std::vector<int64_t>> counts;  // [path][bin]
  double max_pairwise_l1 = 0.0;  // max over path pairs of L1 distance of normalized bins
};

/// Layer indices address the feed-forward stack 0-based: conv layers
/// first, then dense layers (BaseCNN: 0..5 conv, 6..8 dense).
std::vector<LayerHistogram> weight_histograms(const Model<float>& model,
                                              const std::vector<int64_t>& layer_indices,
                                              int bins);

void write_histogram_csv(const std::vector<LayerHistogram>& hists, const std::string& path);
void write_histogram_svg(const std::vector<LayerHistogram>& hists, const std::string& path);

}  // namespace mpnet
