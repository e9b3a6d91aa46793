#include "mpnet/commands.hpp"

#include <filesystem>
#include <ostream>

#include "mpnet/checkpoint.hpp"
#include "mpnet/io.hpp"
#include "mpnet/parallel.hpp"

namespace mpnet {

namespace fs = std::filesystem;

namespace {

void apply_threads(const ExperimentConfig& cfg) {
  set_thread_count(cfg.threads == 0
                       ? static_cast<int>(std::thread::hardware_concurrency())
                       : cfg.threads);
}

std::string out_path(const ExperimentConfig& cfg, const std::string& file) {
  fs::create_directories(cfg.out);
  return cfg.out + "/" + file;
}

Model<float> load_for_config(const ExperimentConfig& cfg, const std::string& checkpoint) {
  Model<float> model = load_checkpoint(checkpoint);
  if (model.spec.classes != cfg.classes)
    throw ConfigError("checkpoint has " + std::to_string(model.spec.classes) +
                      " classes, config expects " + std::to_string(cfg.classes));
  return model;
}

}  // namespace

double run_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  apply_threads(cfg);
  write_text_file(out_path(cfg, "config.ini"), experiment_config_to_text(cfg));

  PreparedData data = prepare_data(cfg);
  const ModelSpec spec = model_spec_from_config(cfg, data.train);
  RngHub hub(cfg.train.seed);
  Rng init_rng = hub.stream("init");
  Model<float> model = build_basecnn_x<float>(spec, init_rng);

  log << "run " << cfg.name << ": " << to_string(cfg.mode) << " paths=" << cfg.paths
      << " train=" << data.train.size() << " val=" << data.val.size()
      << " params=" << count_parameters(model).total << "\n";

  TrainHooks hooks;
  hooks.on_epoch = [&log](const EpochStats& e) {
    log << "epoch " << e.epoch << ": lr=" << format_float(e.lr)
        << " train_loss=" << format_float(e.train_loss)
        << " train_acc=" << format_float(e.train_acc)
        << " val_acc=" << format_float(e.val_acc) << "\n";
  };

  const TrainReport report =
      train(model, data.train, data.val, data.stats, cfg.train, out_path(cfg, "checkpoints"), hooks);

  write_report_csv(report, out_path(cfg, "report.csv"));
  write_report_json(report, out_path(cfg, "summary.json"));
  log << "best val error " << format_float(report.best_val_error()) << " (epoch "
      << report.best_epoch << ")\n";
  return report.best_val_error();
}

EvalResult run_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
                    std::ostream& log) {
  cfg.validate();
  apply_threads(cfg);
  PreparedData data = prepare_data(cfg);
  Model<float> model = load_for_config(cfg, checkpoint);

  const EvalResult result = evaluate(model, data.val, data.stats);
  log << "val loss " << format_float(result.loss) << ", accuracy "
      << format_float(result.accuracy) << "\n";
  for (size_t c = 0; c < result.per_class_accuracy.size(); ++c)
    log << "  class " << c << ": " << format_float(result.per_class_accuracy[c]) << "\n";
  return result;
}

void run_params(const std::vector<int64_t>& path_counts, ModelMode mode, std::ostream& log) {
  for (int64_t paths : path_counts) {
    ModelSpec spec;
    spec.paths = paths;
    spec.mode = mode;
    Rng rng(0);
    const Model<float> model = build_basecnn_x<float>(spec, rng);
    const ParamCount pc = count_parameters(model);
    log << "paths=" << paths << " (" << to_string(spec.mode) << ")\n";
    for (const auto& [layer, count] : pc.per_layer) log << "  " << layer << "  " << count << "\n";
    log << "  total  " << pc.total << "\n";
  }
}

void run_trace(const ExperimentConfig& cfg, const std::string& checkpoint, int64_t max_samples,
               std::ostream& log) {
  cfg.validate();
  apply_threads(cfg);
  PreparedData data = prepare_data(cfg);
  Model<float> model = load_for_config(cfg, checkpoint);
  if (!model.has_routing())
    throw ConfigError("trace: checkpoint model has no cross-connection layers");

  std::vector<int64_t> indices;
  for (int64_t i = 0; i < std::min<int64_t>(max_samples, data.val.size()); ++i)
    indices.push_back(i);
  const Dataset subset = take_subset(data.val, indices);
  const RouteTraceSet traces = trace_routes(model, subset, data.stats);

  write_trace_csv(traces, out_path(cfg, "trace.csv"));
  write_trace_json(traces, out_path(cfg, "trace.json"));
  std::vector<RouteTraceRecord> first;
  for (const auto& r : traces.records)
    if (r.sample_id == 0) first.push_back(r);
  if (!first.empty()) write_route_svg(first, out_path(cfg, "route_sample0.svg"));
  log << "traced " << subset.size() << " samples over " << traces.cross_layers
      << " cross-connection layers -> " << traces.records.size() << " records\n";
}

void run_rank(const ExperimentConfig& cfg, const std::string& checkpoint,
              const GateAddress& addr, int64_t k, std::ostream& log) {
  cfg.validate();
  apply_threads(cfg);
  PreparedData data = prepare_data(cfg);
  Model<float> model = load_for_config(cfg, checkpoint);

  const GateRanking ranking = rank_by_gate(model, data.val, data.stats, addr, k);
  write_ranking_csv(ranking, out_path(cfg, "rank.csv"));
  log << "gate (layer=" << addr.layer << ", input=" << addr.input << ", gate=" << addr.gate
      << "): top " << ranking.top.size() << " / bottom " << ranking.bottom.size() << "\n";
  for (const auto& e : ranking.top)
    log << "  top sample " << e.sample_id << " label=" << e.label << " context=" << e.context
        << " g=" << format_float(e.gate_value) << "\n";
}

void run_synth(const ExperimentConfig& cfg, const std::string& checkpoint,
               SynthesisConfig synth_cfg, std::ostream& log) {
  cfg.validate();
  apply_threads(cfg);
  PreparedData data = prepare_data(cfg);
  Model<float> model = load_for_config(cfg, checkpoint);

  const SynthesisResult result = synthesize_gate_input(model, data.stats, synth_cfg);
  write_ppm(out_path(cfg, "synth.ppm"), result.image);
  write_objective_csv(result, out_path(cfg, "objective.csv"));
  log << "relevance " << format_float(result.relevance_start) << " -> "
      << format_float(result.relevance_final) << " over " << (result.objective.size() - 1)
      << " steps\n";
}

void run_hist(const ExperimentConfig& cfg, const std::string& checkpoint,
              const std::vector<int64_t>& layers, int bins, std::ostream& log) {
  cfg.validate();
  apply_threads(cfg);
  Model<float> model = load_for_config(cfg, checkpoint);

  const std::vector<LayerHistogram> hists = weight_histograms(model, layers, bins);
  write_histogram_csv(hists, out_path(cfg, "hist.csv"));
  write_histogram_svg(hists, out_path(cfg, "hist.svg"));
  for (const auto& h : hists)
    log << h.layer << ": " << h.param_count << " params/path, max pairwise L1 "
        << format_float(h.max_pairwise_l1) << "\n";
}

void run_gendata(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Dataset data = generate_synthetic(cfg.synth);
  const std::string path = out_path(cfg, "synthetic.bin");
  save_dataset(data, path);
  log << "wrote " << data.size() << " samples (" << cfg.synth.contexts << " contexts x "
      << cfg.synth.classes << " classes) to " << path << "\n";
}

}  // namespace mpnet
