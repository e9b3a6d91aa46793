#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mpnet/rng.hpp"
#include "mpnet/tape.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

/// Central-difference comparison of analytic gradients. Meant for f64:
/// finite differences are unusable in f32.
///
/// The forward path used for the numerical side never touches backward
/// rules, so the two routes stay independent.
struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = true;

  const GradCheckEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

struct GradCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-5;
  /// Coordinates sampled per leaf; <= 0 checks every coordinate.
  int64_t max_coords_per_leaf = -1;
  uint64_t sample_seed = 12345;
};

/// `forward` must rebuild the scalar loss from the current leaf values on
/// the given tape (pass nullptr for value-only evaluation). `leaves` are
/// the differentiable inputs/parameters to check.
template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>*)>& forward,
                           const std::vector<std::pair<std::string, Var<T>>>& leaves,
                           const GradCheckOptions& opt = {}) {
  for (auto& [name, leaf] : leaves) {
    leaf->ensure_grad();
    leaf->zero_grad();
  }
  Tape<T> tape;
  Var<T> loss = forward(&tape);
  tape.backward(loss);

  GradCheckReport report;
  Rng rng(opt.sample_seed);
  const T eps = static_cast<T>(opt.epsilon);

  for (auto& [name, leaf] : leaves) {
    GradCheckEntry entry;
    entry.name = name;

    std::vector<int64_t> coords;
    const int64_t n = leaf->value.size();
    if (opt.max_coords_per_leaf > 0 && opt.max_coords_per_leaf < n) {
      for (int64_t i = 0; i < opt.max_coords_per_leaf; ++i)
        coords.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }

    for (int64_t c : coords) {
      const T saved = leaf->value[c];
      leaf->value[c] = saved + eps;
      const double f_plus = static_cast<double>(forward(nullptr)->value[0]);
      leaf->value[c] = saved - eps;
      const double f_minus = static_cast<double>(forward(nullptr)->value[0]);
      leaf->value[c] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(eps));
      const double analytic = static_cast<double>(leaf->grad[c]);
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      const double rel = std::abs(numeric - analytic) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.coords_checked;
    }

    entry.pass = entry.max_rel_err < opt.tolerance;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mpnet
