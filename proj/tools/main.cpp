#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpnet/commands.hpp"
#include "mpnet/errors.hpp"

// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

namespace {

struct CommonArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out;
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_checkpoint) {
  cmd->add_option("--config", args.config_path, "experiment config file (ini)");
  cmd->add_option("--out", args.out, "output directory (overrides [run] out)");
  cmd->add_option("--seed", args.seed, "seed (overrides [train] seed)");
  if (needs_checkpoint)
    cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint file")->required();
}

mpnet::ExperimentConfig resolve_config(const CommonArgs& args) {
  mpnet::ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = mpnet::load_experiment_config(args.config_path);
  // Flags override file values.
  if (!args.out.empty()) cfg.out = args.out;
  if (args.seed >= 0) cfg.train.seed = static_cast<uint64_t>(args.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-path CNNs with feature-dependent cross-connections"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, trace_args, rank_args, synth_args, hist_args, gen_args;

  // train
  auto* cmd_train = app.add_subcommand("train", "train a model per config");
  add_common(cmd_train, train_args, false);
  int64_t train_paths = -1;
  std::string train_mode;
  int train_epochs = -1;
  cmd_train->add_option("--paths", train_paths, "override [model] paths");
  cmd_train->add_option("--mode", train_mode, "override [model] mode");
  cmd_train->add_option("--epochs", train_epochs, "override [train] epochs");

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  add_common(cmd_eval, eval_args, true);

  // params
  auto* cmd_params = app.add_subcommand("params", "parameter-count table");
  int64_t params_paths = 0;
  std::string params_mode = "adaptive";
  cmd_params->add_option("--paths", params_paths, "single path count (default: 1..4)");
  cmd_params->add_option("--mode", params_mode, "adaptive | fixed-stitch | no-cross");

  // trace
  auto* cmd_trace = app.add_subcommand("trace", "route traces of validation samples");
  add_common(cmd_trace, trace_args, true);
  int64_t trace_samples = 64;
  cmd_trace->add_option("--samples", trace_samples, "number of samples to trace");

  // rank
  auto* cmd_rank = app.add_subcommand("rank", "top/bottom samples for one gate");
  add_common(cmd_rank, rank_args, true);
  mpnet::GateAddress rank_addr;
  int64_t rank_k = 10;
  cmd_rank->add_option("--layer", rank_addr.layer, "cross-connection layer index (0-based)");
  cmd_rank->add_option("--input", rank_addr.input, "input tensor index i");
  cmd_rank->add_option("--gate", rank_addr.gate, "gate index j");
  cmd_rank->add_option("-k", rank_k, "list length");

  // synth
  auto* cmd_synth = app.add_subcommand("synth", "synthesize an input maximizing a gate neuron");
  add_common(cmd_synth, synth_args, true);
  mpnet::SynthesisConfig synth_cfg;
  std::string synth_init = "zeros";
  cmd_synth->add_option("--layer", synth_cfg.target.layer, "cross-connection layer index");
  cmd_synth->add_option("--input", synth_cfg.target.input, "input tensor index i");
  cmd_synth->add_option("--gate", synth_cfg.target.gate, "gate index j");
  cmd_synth->add_option("--steps", synth_cfg.steps, "ascent steps");
  cmd_synth->add_option("--step-size", synth_cfg.step_size, "ascent step size");
  cmd_synth->add_option("--l2", synth_cfg.l2_coeff, "L2 coefficient");
  cmd_synth->add_option("--init", synth_init, "zeros | noise");

  // hist
  auto* cmd_hist = app.add_subcommand("hist", "per-path weight histograms");
  add_common(cmd_hist, hist_args, true);
  std::vector<int64_t> hist_layers{3, 7};
  int hist_bins = 41;
  cmd_hist->add_option("--layers", hist_layers,
                       "feed-forward layer indices (0-based, conv then dense)");
  cmd_hist->add_option("--bins", hist_bins, "histogram bins");

  // gen-data
  auto* cmd_gendata = app.add_subcommand("gen-data", "generate the synthetic dataset file");
  add_common(cmd_gendata, gen_args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      mpnet::ExperimentConfig cfg = resolve_config(train_args);
      if (train_paths > 0) cfg.paths = train_paths;
      if (!train_mode.empty()) {
        cfg.mode = mpnet::parse_model_mode(train_mode);
        cfg.train.mode = cfg.mode;
      }
      if (train_epochs > 0) cfg.train.epochs = train_epochs;
      mpnet::run_train(cfg, std::cout);
    } else if (cmd_eval->parsed()) {
      mpnet::run_eval(resolve_config(eval_args), eval_args.checkpoint, std::cout);
    } else if (cmd_params->parsed()) {
      std::vector<int64_t> counts = params_paths > 0 ? std::vector<int64_t>{params_paths}
                                                     : std::vector<int64_t>{1, 2, 3, 4};
      mpnet::run_params(counts, mpnet::parse_model_mode(params_mode), std::cout);
    } else if (cmd_trace->parsed()) {
      mpnet::run_trace(resolve_config(trace_args), trace_args.checkpoint, trace_samples,
                       std::cout);
    } else if (cmd_rank->parsed()) {
      mpnet::run_rank(resolve_config(rank_args), rank_args.checkpoint, rank_addr, rank_k,
                      std::cout);
    } else if (cmd_synth->parsed()) {
      if (synth_init == "noise") synth_cfg.init = mpnet::SynthesisInit::noise;
      else if (synth_init != "zeros")
        throw mpnet::ConfigError("--init must be zeros or noise, got '" + synth_init + "'");
      mpnet::ExperimentConfig cfg = resolve_config(synth_args);
      synth_cfg.seed = cfg.train.seed;
      mpnet::run_synth(cfg, synth_args.checkpoint, synth_cfg, std::cout);
    } else if (cmd_hist->parsed()) {
      mpnet::run_hist(resolve_config(hist_args), hist_args.checkpoint, hist_layers, hist_bins,
                      std::cout);
    } else if (cmd_gendata->parsed()) {
      mpnet::run_gendata(resolve_config(gen_args), std::cout);
    }
  } catch (const mpnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mpnet::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mpnet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const mpnet::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
