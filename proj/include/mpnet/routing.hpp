#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpnet/ops.hpp"
#include "mpnet/rng.hpp"
#include "mpnet/tape.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

enum class RoutingMode { adaptive, fixed_stitch };

/// Per-input gating subnetwork: GAP (for 4-d inputs) -> affine(hidden) ->
/// relu -> affine(n). Softmax on top yields the coupling coefficients.
/// 2-d inputs skip GAP and feed the feature vector directly.
template <class T>
struct GateUnit {
  int64_t in_channels = 0;
  int64_t out_paths = 0;
  Var<T> w1, b1;  // in_channels x hidden, hidden
  Var<T> w2, b2;  // hidden x out_paths, out_paths

  int64_t hidden() const { return w1->value.dim(1); }

  int64_t parameter_count() const {
    return w1->value.size() + b1->value.size() + w2->value.size() + b2->value.size();
  }
};

/// Expected parameter count of one gate unit: (C*hidden + hidden) + (hidden*n + n).
inline int64_t gate_unit_param_count(int64_t channels, int64_t paths, int64_t hidden = 16) {
  return channels * hidden + hidden + hidden * paths + paths;
}

template <class T>
GateUnit<T> make_gate_unit(int64_t in_channels, int64_t out_paths, Rng& rng, int64_t hidden = 16) {
  GateUnit<T> u;
  u.in_channels = in_channels;
  u.out_paths = out_paths;
  // Kaiming-uniform fan-in; small initial logits keep initial gates near
  // uniform.
  auto init = [&rng](std::vector<int64_t> shape, int64_t fan_in) {
    Tensor<T> t(shape);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
  };
  u.w1 = parameter(init({in_channels, hidden}, in_channels));
  u.b1 = parameter(Tensor<T>({hidden}));
  u.w2 = parameter(init({hidden, out_paths}, hidden));
  u.b2 = parameter(Tensor<T>({out_paths}));
  return u;
}

/// Relevance scores (pre-softmax logits) and gate probabilities for a batch:
/// both (N, n). A is kept because activation maximization targets it.
template <class T>
struct GateActivations {
  Var<T> relevance;  // A_i
  Var<T> gates;      // G_i = softmax(A_i)
};

/// `validate` enables the stochasticity guard; NaN-probing forwards turn
/// it off so diagnostics can walk past the first bad layer.
template <class T>
GateActivations<T> compute_gates(Tape<T>* tape, const GateUnit<T>& unit, const Var<T>& x,
                                 bool validate = true) {
  if (x->value.rank() != 2 && x->value.rank() != 4)
    throw ShapeError("compute_gates: input must be 2-d or 4-d, got " +
                     shape_string(x->value.shape()));
  if (x->value.dim(1) != unit.in_channels)
    throw ShapeError("compute_gates: input channels " + shape_string(x->value.shape()) +
                     " do not match gate unit expecting " + std::to_string(unit.in_channels));
  Var<T> z = x->value.rank() == 4 ? global_avg_pool(tape, x) : x;
  Var<T> h = relu(tape, dense(tape, z, unit.w1, unit.b1));
  Var<T> a = dense(tape, h, unit.w2, unit.b2);
  Var<T> g = softmax(tape, a);

  // Invariant guard: every per-sample gate vector is a probability
  // distribution. Also trips on NaN.
  if (validate) {
    const int64_t rows = g->value.dim(0), cols = g->value.dim(1);
    for (int64_t r = 0; r < rows; ++r) {
      T sum = T(0);
      for (int64_t j = 0; j < cols; ++j) sum += g->value[r * cols + j];
      if (!(std::abs(static_cast<double>(sum) - 1.0) < 1e-4))
        throw NumericalError("compute_gates: gate vector does not sum to 1 (sum=" +
                             std::to_string(static_cast<double>(sum)) + ")");
    }
  }
  return {a, g};
}

/// Per-sample coupling coefficients of one cross-connection layer:
/// n x m, column i holding the gates computed from input tensor i.
/// Columns are stochastic (sum to 1).
template <class T>
struct GateMatrix {
  int64_t m = 0, n = 0;
  std::vector<T> values;  // row-major n x m

  T at(int64_t j, int64_t i) const { return values[static_cast<size_t>(j * m + i)]; }
  T& at(int64_t j, int64_t i) { return values[static_cast<size_t>(j * m + i)]; }

  std::vector<T> column_sums() const {
    std::vector<T> sums(static_cast<size_t>(m), T(0));
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < m; ++i) sums[static_cast<size_t>(i)] += at(j, i);
    return sums;
  }
};

/// Mixing layer between m input and n output sets of feature maps. In
/// adaptive mode each input owns a gate unit and coefficients are
/// recomputed per sample; in fixed-stitch mode the n x m coefficients are
/// free parameters, independent of the input.
template <class T>
struct CrossConnectLayer {
  RoutingMode mode = RoutingMode::adaptive;
  int64_t m = 0, n = 0;
  int64_t layer_index = 0;  // position along the network, for trace labels
  std::vector<GateUnit<T>> gate_units;  // adaptive: one per input
  Var<T> coeffs;                        // fixed-stitch: n x m

  int64_t parameter_count() const {
    if (mode == RoutingMode::fixed_stitch) return coeffs->value.size();
    int64_t total = 0;
    for (const auto& u : gate_units) total += u.parameter_count();
    return total;
  }
};

template <class T>
CrossConnectLayer<T> make_cross_connect(RoutingMode mode, int64_t m, int64_t n,
                                        int64_t in_channels, int64_t layer_index, Rng& rng,
                                        int64_t gate_hidden = 16) {
  CrossConnectLayer<T> layer;
  layer.mode = mode;
  layer.m = m;
  layer.n = n;
  layer.layer_index = layer_index;
  if (mode == RoutingMode::adaptive) {
    layer.gate_units.reserve(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i)
      layer.gate_units.push_back(make_gate_unit<T>(in_channels, n, rng, gate_hidden));
  } else {
    // 1/n plus small noise; unconstrained afterwards.
    Tensor<T> c({n, m});
    for (int64_t i = 0; i < c.size(); ++i)
      c[i] = static_cast<T>(1.0 / static_cast<double>(n) + rng.uniform(-0.01, 0.01));
    layer.coeffs = parameter(std::move(c));
  }
  return layer;
}

template <class T>
struct CrossConnectResult {
  std::vector<Var<T>> outputs;    // n tensors, each shaped like the inputs
  std::vector<Var<T>> relevance;  // adaptive: m tensors (N, n) of pre-softmax logits
  std::vector<Var<T>> gates;      // adaptive: m tensors (N, n) of probabilities
};

/// Y_j = sum_i g_ij * X_i. Differentiable through both the mixing term and
/// the gate computation (gradients reach W1/W2 and flow into X_i via the
/// GAP path as well).
template <class T>
CrossConnectResult<T> cross_connect(Tape<T>* tape, const CrossConnectLayer<T>& layer,
                                    const std::vector<Var<T>>& inputs, bool validate = true) {
  if (static_cast<int64_t>(inputs.size()) != layer.m)
    throw ShapeError("cross_connect: layer expects " + std::to_string(layer.m) +
                     " inputs, got " + std::to_string(inputs.size()));
  for (const auto& x : inputs)
    check_same_shape(inputs[0]->value, x->value, "cross_connect");

  CrossConnectResult<T> out;
  if (layer.mode == RoutingMode::adaptive) {
    out.relevance.reserve(inputs.size());
    out.gates.reserve(inputs.size());
    for (int64_t i = 0; i < layer.m; ++i) {
      auto acts = compute_gates(tape, layer.gate_units[static_cast<size_t>(i)],
                                inputs[static_cast<size_t>(i)], validate);
      out.relevance.push_back(acts.relevance);
      out.gates.push_back(acts.gates);
    }
    for (int64_t j = 0; j < layer.n; ++j) {
      Var<T> y;
      for (int64_t i = 0; i < layer.m; ++i) {
        Var<T> g_col = pick_column(tape, out.gates[static_cast<size_t>(i)], j);
        Var<T> term = rowwise_scale(tape, g_col, inputs[static_cast<size_t>(i)]);
        y = y ? add(tape, y, term) : term;
      }
      out.outputs.push_back(y);
    }
  } else {
    for (int64_t j = 0; j < layer.n; ++j) {
      Var<T> y;
      for (int64_t i = 0; i < layer.m; ++i) {
        Var<T> c = pick(tape, layer.coeffs, j * layer.m + i);
        Var<T> term = scalar_broadcast_mul(tape, c, inputs[static_cast<size_t>(i)]);
        y = y ? add(tape, y, term) : term;
      }
      out.outputs.push_back(y);
    }
  }
  return out;
}

/// One-to-many connection distributing a single image across n paths.
template <class T>
CrossConnectResult<T> expand_input(Tape<T>* tape, const CrossConnectLayer<T>& layer,
                                   const Var<T>& image) {
  if (layer.m != 1)
    throw ShapeError("expand_input: layer must have m=1, got m=" + std::to_string(layer.m));
  return cross_connect(tape, layer, std::vector<Var<T>>{image});
}

/// Elementwise mean of the parallel head outputs.
template <class T>
Var<T> average_heads(Tape<T>* tape, const std::vector<Var<T>>& logits) {
  return mean_over(tape, logits);
}

/// Gate matrix of one sample: column i = gates computed from X_i.
/// Adaptive mode reads row `sample` of each per-input gate tensor; fixed
/// mode returns the shared coefficient matrix.
template <class T>
GateMatrix<T> sample_gate_matrix(const CrossConnectLayer<T>& layer,
                                 const CrossConnectResult<T>& result, int64_t sample) {
  GateMatrix<T> gm;
  gm.m = layer.m;
  gm.n = layer.n;
  gm.values.resize(static_cast<size_t>(layer.m * layer.n));
  if (layer.mode == RoutingMode::adaptive) {
    for (int64_t i = 0; i < layer.m; ++i) {
      const Tensor<T>& g = result.gates[static_cast<size_t>(i)]->value;
      for (int64_t j = 0; j < layer.n; ++j) gm.at(j, i) = g[sample * layer.n + j];
    }
  } else {
    for (int64_t j = 0; j < layer.n; ++j)
      for (int64_t i = 0; i < layer.m; ++i) gm.at(j, i) = layer.coeffs->value[j * layer.m + i];
  }
  return gm;
}

}  // namespace mpnet
