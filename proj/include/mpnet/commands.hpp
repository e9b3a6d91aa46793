#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mpnet/analysis.hpp"
#include "mpnet/config.hpp"

namespace mpnet {

// Command bodies behind the CLI. Each writes only under cfg.out, prints a
// short summary to `log` and returns normally; failures surface as typed
// exceptions which the CLI maps to exit codes (config 2, data 3,
// numerical 4).

/// Trains per config; writes config.ini (provenance), report.csv,
/// summary.json and checkpoints under cfg.out. Returns best val error.
double run_train(const ExperimentConfig& cfg, std::ostream& log);

/// Evaluates a checkpoint on the config's validation split.
EvalResult run_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
                    std::ostream& log);

/// Prints the per-layer parameter breakdown and total for the given path
/// counts (classes/input dims per config defaults: 10-class 32x32 RGB).
void run_params(const std::vector<int64_t>& path_counts, ModelMode mode, std::ostream& log);

/// Route traces of the first `max_samples` validation samples: trace.csv,
/// trace.json and a route diagram SVG for the first sample.
void run_trace(const ExperimentConfig& cfg, const std::string& checkpoint, int64_t max_samples,
               std::ostream& log);

/// Top-k / bottom-k samples by one gate: rank.csv.
void run_rank(const ExperimentConfig& cfg, const std::string& checkpoint,
              const GateAddress& addr, int64_t k, std::ostream& log);

/// Gate-neuron activation maximization: synth.ppm + objective.csv.
void run_synth(const ExperimentConfig& cfg, const std::string& checkpoint,
               SynthesisConfig synth_cfg, std::ostream& log);

/// Per-path weight histograms: hist.csv + hist.svg.
void run_hist(const ExperimentConfig& cfg, const std::string& checkpoint,
              const std::vector<int64_t>& layers, int bins, std::ostream& log);

/// Generates the config's synthetic dataset and saves it as one file.
void run_gendata(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace mpnet
