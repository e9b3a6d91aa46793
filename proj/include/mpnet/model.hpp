#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mpnet/ops.hpp"
#include "mpnet/rng.hpp"
#include "mpnet/routing.hpp"
#include "mpnet/tape.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

enum class ModelMode { adaptive, fixed_stitch, no_cross };

inline std::string to_string(ModelMode m) {
  switch (m) {
    case ModelMode::adaptive: return "adaptive";
    case ModelMode::fixed_stitch: return "fixed-stitch";
    case ModelMode::no_cross: return "no-cross";
  }
  return "adaptive";
}

inline ModelMode parse_model_mode(const std::string& s) {
  if (s == "adaptive") return ModelMode::adaptive;
  if (s == "fixed-stitch" || s == "fixed_stitch") return ModelMode::fixed_stitch;
  if (s == "no-cross" || s == "no_cross") return ModelMode::no_cross;
  throw ConfigError("unknown model mode '" + s + "' (adaptive | fixed-stitch | no-cross)");
}

/// Layer plan of one path plus the cross-connection sites. Defaults are
/// the BaseCNN column: C32 C32 [pool] C64 C64 [pool] C128 C128, F32 F32,
/// classifier head; connections at the input, after conv 2/4/6 and after
/// dense 2 (0-based indices below).
struct ArchSpec {
  std::vector<int64_t> conv_channels{32, 32, 64, 64, 128, 128};
  std::vector<int64_t> pool_after{1, 3};
  std::vector<int64_t> dense_nodes{32, 32};
  bool cross_at_input = true;
  std::vector<int64_t> cross_after_conv{1, 3, 5};
  std::vector<int64_t> cross_after_dense{1};
  int64_t kernel = 3;
  int64_t gate_hidden = 16;

  bool operator==(const ArchSpec&) const = default;

  int64_t pool_count() const { return static_cast<int64_t>(pool_after.size()); }
  int64_t cross_site_count() const {
    return (cross_at_input ? 1 : 0) + static_cast<int64_t>(cross_after_conv.size()) +
           static_cast<int64_t>(cross_after_dense.size());
  }
};

struct ModelSpec {
  int64_t paths = 2;
  int64_t classes = 10;
  ModelMode mode = ModelMode::adaptive;
  int64_t in_channels = 3;
  int64_t in_h = 32;
  int64_t in_w = 32;
  ArchSpec arch;

  bool operator==(const ModelSpec&) const = default;
};

template <class T>
struct ConvLayer {
  Var<T> weight, bias;
  bool pool_after = false;
};

template <class T>
struct DenseLayer {
  Var<T> weight, bias;
  bool relu_after = true;
};

/// Multi-path network: `paths` parallel BaseCNN columns joined by
/// cross-connection layers at the spec'd sites, head outputs averaged.
/// paths == 1 degenerates to a plain single column with no gating.
template <class T>
struct Model {
  ModelSpec spec;
  std::vector<std::vector<ConvLayer<T>>> conv;    // [path][conv index]
  std::vector<std::vector<DenseLayer<T>>> dense;  // [path][dense index], last = head
  std::vector<CrossConnectLayer<T>> cross;        // in forward order
  std::vector<std::pair<std::string, Var<T>>> params;  // name -> tensor, insertion-ordered

  bool has_routing() const { return !cross.empty(); }

  const Var<T>* find_param(const std::string& name) const {
    for (const auto& [n, v] : params)
      if (n == name) return &v;
    return nullptr;
  }
};

namespace detail {

template <class T>
Tensor<T> kaiming_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

inline bool contains(const std::vector<int64_t>& v, int64_t x) {
  for (int64_t e : v)
    if (e == x) return true;
  return false;
}

}  // namespace detail

/// Channel count seen by the cross-connection at each site, in forward
/// order: input site, conv sites, dense sites.
inline std::vector<int64_t> cross_site_channels(const ModelSpec& spec) {
  std::vector<int64_t> chans;
  if (spec.arch.cross_at_input) chans.push_back(spec.in_channels);
  for (int64_t j : spec.arch.cross_after_conv)
    chans.push_back(spec.arch.conv_channels[static_cast<size_t>(j)]);
  for (int64_t j : spec.arch.cross_after_dense)
    chans.push_back(spec.arch.dense_nodes[static_cast<size_t>(j)]);
  return chans;
}

/// Builds a BaseCNN-X graph. Path weights are drawn before gate weights,
/// so models that differ only in routing mode start from identical path
/// parameters for a given seed.
template <class T>
Model<T> build_basecnn_x(const ModelSpec& spec, Rng& rng) {
  if (spec.paths < 1) throw ConfigError("paths must be >= 1, got " + std::to_string(spec.paths));
  if (spec.classes < 2) throw ConfigError("classes must be >= 2");
  const int64_t pools = spec.arch.pool_count();
  const int64_t pool_factor = int64_t(1) << pools;
  if (spec.in_h % pool_factor != 0 || spec.in_w % pool_factor != 0)
    throw ConfigError("input spatial dims " + std::to_string(spec.in_h) + "x" +
                      std::to_string(spec.in_w) + " must be divisible by " +
                      std::to_string(pool_factor));

  Model<T> model;
  model.spec = spec;
  const ArchSpec& arch = spec.arch;
  const int64_t k = arch.kernel;

  const int64_t flat_dim =
      (spec.in_h / pool_factor) * (spec.in_w / pool_factor) * arch.conv_channels.back();

  for (int64_t p = 0; p < spec.paths; ++p) {
    std::vector<ConvLayer<T>> convs;
    int64_t c_in = spec.in_channels;
    for (size_t j = 0; j < arch.conv_channels.size(); ++j) {
      const int64_t c_out = arch.conv_channels[j];
      ConvLayer<T> layer;
      layer.weight = parameter(detail::kaiming_uniform<T>({c_out, c_in, k, k}, c_in * k * k, rng));
      layer.bias = parameter(Tensor<T>({c_out}));
      layer.pool_after = detail::contains(arch.pool_after, static_cast<int64_t>(j));
      const std::string base = "path" + std::to_string(p) + ".conv" + std::to_string(j);
      model.params.emplace_back(base + ".weight", layer.weight);
      model.params.emplace_back(base + ".bias", layer.bias);
      convs.push_back(std::move(layer));
      c_in = c_out;
    }
    model.conv.push_back(std::move(convs));

    std::vector<DenseLayer<T>> denses;
    int64_t f_in = flat_dim;
    std::vector<int64_t> widths = arch.dense_nodes;
    widths.push_back(spec.classes);
    for (size_t j = 0; j < widths.size(); ++j) {
      DenseLayer<T> layer;
      layer.weight = parameter(detail::kaiming_uniform<T>({f_in, widths[j]}, f_in, rng));
      layer.bias = parameter(Tensor<T>({widths[j]}));
      layer.relu_after = j + 1 < widths.size();  // no activation on the head
      const std::string base = "path" + std::to_string(p) + ".dense" + std::to_string(j);
      model.params.emplace_back(base + ".weight", layer.weight);
      model.params.emplace_back(base + ".bias", layer.bias);
      denses.push_back(std::move(layer));
      f_in = widths[j];
    }
    model.dense.push_back(std::move(denses));
  }

  if (spec.paths > 1 && spec.mode != ModelMode::no_cross) {
    const RoutingMode rmode =
        spec.mode == ModelMode::adaptive ? RoutingMode::adaptive : RoutingMode::fixed_stitch;
    const std::vector<int64_t> chans = cross_site_channels(spec);
    for (size_t site = 0; site < chans.size(); ++site) {
      const int64_t m = (site == 0 && arch.cross_at_input) ? 1 : spec.paths;
      auto layer = make_cross_connect<T>(rmode, m, spec.paths, chans[site],
                                         static_cast<int64_t>(site), rng, arch.gate_hidden);
      const std::string base = "cross" + std::to_string(site);
      if (rmode == RoutingMode::adaptive) {
        for (int64_t i = 0; i < m; ++i) {
          const auto& u = layer.gate_units[static_cast<size_t>(i)];
          const std::string g = base + ".gate" + std::to_string(i);
          model.params.emplace_back(g + ".w1", u.w1);
          model.params.emplace_back(g + ".b1", u.b1);
          model.params.emplace_back(g + ".w2", u.w2);
          model.params.emplace_back(g + ".b2", u.b2);
        }
      } else {
        model.params.emplace_back(base + ".coeffs", layer.coeffs);
      }
      model.cross.push_back(std::move(layer));
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// Per-sample routing record of one forward pass at one cross-connection:
/// the gate matrix plus the relative activation strength of each input and
/// output tensor (mean absolute activation, normalized across the layer).
template <class T>
struct LayerTrace {
  int64_t layer_index = 0;
  int64_t m = 0, n = 0;
  std::vector<GateMatrix<T>> per_sample;
  std::vector<std::vector<T>> in_strength;   // [sample][i]
  std::vector<std::vector<T>> out_strength;  // [sample][j]
};

struct ForwardOptions {
  bool trace = false;
  bool keep_gate_vars = false;  // retain relevance/gate Vars (activation maximization)
  bool nan_probe = false;       // locate the first non-finite activation
};

template <class T>
struct ForwardResult {
  Var<T> logits;
  std::vector<LayerTrace<T>> traces;
  std::vector<std::vector<Var<T>>> relevance;  // [cross layer][input i] -> (N, n)
  std::vector<std::vector<Var<T>>> gates;
  std::string first_nonfinite;  // layer name, empty if all finite (nan_probe)
};

namespace detail {

template <class T>
std::vector<std::vector<T>> relative_strengths(const std::vector<Var<T>>& tensors) {
  const int64_t count = static_cast<int64_t>(tensors.size());
  const int64_t batch = tensors[0]->value.dim(0);
  const int64_t inner = tensors[0]->value.size() / batch;
  std::vector<std::vector<T>> out(static_cast<size_t>(batch),
                                  std::vector<T>(static_cast<size_t>(count)));
  for (int64_t s = 0; s < batch; ++s) {
    T sum = T(0);
    for (int64_t t = 0; t < count; ++t) {
      const T* p = tensors[static_cast<size_t>(t)]->value.data() + s * inner;
      T acc = T(0);
      for (int64_t i = 0; i < inner; ++i) acc += std::abs(p[i]);
      const T mean = acc / static_cast<T>(inner);
      out[static_cast<size_t>(s)][static_cast<size_t>(t)] = mean;
      sum += mean;
    }
    for (int64_t t = 0; t < count; ++t) {
      // All-zero layer: fall back to uniform so strengths still sum to 1.
      out[static_cast<size_t>(s)][static_cast<size_t>(t)] =
          sum > T(0) ? out[static_cast<size_t>(s)][static_cast<size_t>(t)] / sum
                     : T(1) / static_cast<T>(count);
    }
  }
  return out;
}

template <class T>
void record_trace(ForwardResult<T>& result, const CrossConnectLayer<T>& layer,
                  const CrossConnectResult<T>& cc, const std::vector<Var<T>>& inputs) {
  LayerTrace<T> trace;
  trace.layer_index = layer.layer_index;
  trace.m = layer.m;
  trace.n = layer.n;
  const int64_t batch = inputs[0]->value.dim(0);
  trace.per_sample.reserve(static_cast<size_t>(batch));
  for (int64_t s = 0; s < batch; ++s) trace.per_sample.push_back(sample_gate_matrix(layer, cc, s));
  trace.in_strength = relative_strengths(inputs);
  trace.out_strength = relative_strengths(cc.outputs);
  result.traces.push_back(std::move(trace));
}

template <class T>
void probe(ForwardResult<T>& result, const ForwardOptions& opts, const std::string& name,
           const Var<T>& v) {
  if (!opts.nan_probe || !result.first_nonfinite.empty()) return;
  if (!v->value.all_finite()) result.first_nonfinite = name;
}

}  // namespace detail

template <class T>
ForwardResult<T> forward(const Model<T>& model, Tape<T>* tape, const Var<T>& input,
                         const ForwardOptions& opts = {}) {
  const ModelSpec& spec = model.spec;
  if (input->value.rank() != 4 || input->value.dim(1) != spec.in_channels ||
      input->value.dim(2) != spec.in_h || input->value.dim(3) != spec.in_w)
    throw ShapeError("forward: batch shape " + shape_string(input->value.shape()) +
                     " does not match model input " +
                     shape_string({-1, spec.in_channels, spec.in_h, spec.in_w}));

  ForwardResult<T> result;
  size_t next_cross = 0;

  auto apply_cross = [&](std::vector<Var<T>>& xs, const std::string& where) {
    const CrossConnectLayer<T>& layer = model.cross[next_cross];
    CrossConnectResult<T> cc = cross_connect(tape, layer, xs, !opts.nan_probe);
    if (opts.trace) detail::record_trace(result, layer, cc, xs);
    if (opts.keep_gate_vars) {
      result.relevance.push_back(cc.relevance);
      result.gates.push_back(cc.gates);
    }
    for (int64_t j = 0; j < layer.n; ++j)
      detail::probe(result, opts, where + ".out" + std::to_string(j), cc.outputs[static_cast<size_t>(j)]);
    xs = std::move(cc.outputs);
    ++next_cross;
  };

  detail::probe(result, opts, "input", input);

  std::vector<Var<T>> xs;
  if (spec.paths == 1) {
    xs.push_back(input);
  } else if (!model.has_routing()) {
    xs.assign(static_cast<size_t>(spec.paths), input);
  } else {
    xs.push_back(input);
    if (spec.arch.cross_at_input) apply_cross(xs, "cross0");
    else xs.assign(static_cast<size_t>(spec.paths), input);
  }

  for (size_t j = 0; j < spec.arch.conv_channels.size(); ++j) {
    for (size_t p = 0; p < xs.size(); ++p) {
      const ConvLayer<T>& layer = model.conv[p][j];
      xs[p] = relu(tape, conv2d(tape, xs[p], layer.weight, layer.bias, 1, Padding::same));
      if (layer.pool_after) xs[p] = maxpool2x2(tape, xs[p]);
      detail::probe(result, opts,
                    "path" + std::to_string(p) + ".conv" + std::to_string(j), xs[p]);
    }
    if (model.has_routing() && detail::contains(spec.arch.cross_after_conv, static_cast<int64_t>(j)))
      apply_cross(xs, "cross" + std::to_string(next_cross));
  }

  for (auto& x : xs) x = flatten2d(tape, x);

  const size_t dense_count = model.dense[0].size();
  for (size_t j = 0; j < dense_count; ++j) {
    for (size_t p = 0; p < xs.size(); ++p) {
      const DenseLayer<T>& layer = model.dense[p][j];
      xs[p] = dense(tape, xs[p], layer.weight, layer.bias);
      if (layer.relu_after) xs[p] = relu(tape, xs[p]);
      detail::probe(result, opts,
                    "path" + std::to_string(p) + ".dense" + std::to_string(j), xs[p]);
    }
    if (j + 1 < dense_count && model.has_routing() &&
        detail::contains(spec.arch.cross_after_dense, static_cast<int64_t>(j)))
      apply_cross(xs, "cross" + std::to_string(next_cross));
  }

  result.logits = xs.size() == 1 ? xs[0] : average_heads(tape, xs);
  detail::probe(result, opts, "logits", result.logits);
  return result;
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct ParamCount {
  int64_t total = 0;
  std::vector<std::pair<std::string, int64_t>> per_layer;  // layer name -> count
};

/// Exact integer parameter count with a per-layer breakdown (tensors
/// grouped by their layer prefix, e.g. "path0.conv3").
template <class T>
ParamCount count_parameters(const Model<T>& model) {
  ParamCount pc;
  for (const auto& [name, var] : model.params) {
    const size_t dot = name.rfind('.');
    const std::string layer = dot == std::string::npos ? name : name.substr(0, dot);
    if (pc.per_layer.empty() || pc.per_layer.back().first != layer)
      pc.per_layer.emplace_back(layer, 0);
    pc.per_layer.back().second += var->value.size();
    pc.total += var->value.size();
  }
  return pc;
}

/// Forces all gate logits to zero (adaptive mode), making every
/// cross-connection compute the exact uniform mixture.
template <class T>
void zero_gate_parameters(Model<T>& model) {
  for (auto& layer : model.cross)
    for (auto& unit : layer.gate_units) {
      unit.w1->value.fill(T(0));
      unit.b1->value.fill(T(0));
      unit.w2->value.fill(T(0));
      unit.b2->value.fill(T(0));
    }
}

/// FNV-1a over all parameter bytes, in registry order. Analysis ops are
/// pure reads; tests compare this hash before/after.
template <class T>
uint64_t parameter_hash(const Model<T>& model) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [name, var] : model.params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(var->value.data());
    const size_t len = static_cast<size_t>(var->value.size()) * sizeof(T);
    for (size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace mpnet
