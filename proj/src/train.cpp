#include "mpnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>

#include "json.hpp"
#include "mpnet/checkpoint.hpp"
#include "mpnet/io.hpp"

namespace mpnet {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (shift_pixels < 0) throw ConfigError("shift_pixels must be >= 0");
  for (size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] >= epochs)
      throw ConfigError("decay epoch " + std::to_string(decay_epochs[i]) +
                        " must be < epochs (" + std::to_string(epochs) + ")");
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
      throw ConfigError("decay epochs must be strictly increasing");
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  double rate = cfg.lr;
  for (int d : cfg.decay_epochs)
    if (epoch >= d) rate /= cfg.lr_decay_factor;
  return rate;
}

bool TrainReport::deterministic_equal(const TrainReport& other) const {
  if (epochs.size() != other.epochs.size() || best_epoch != other.best_epoch ||
      best_val_acc != other.best_val_acc || best_val_loss != other.best_val_loss ||
      seed != other.seed || mode != other.mode)
    return false;
  for (size_t i = 0; i < epochs.size(); ++i) {
    const EpochStats& a = epochs[i];
    const EpochStats& b = other.epochs[i];
    if (a.epoch != b.epoch || a.lr != b.lr || a.train_loss != b.train_loss ||
        a.train_acc != b.train_acc || a.val_loss != b.val_loss || a.val_acc != b.val_acc)
      return false;
  }
  return true;
}

void write_report_csv(const TrainReport& report, const std::string& path) {
  CsvWriter csv({"epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"});
  for (const EpochStats& e : report.epochs)
    csv.add_row({std::to_string(e.epoch), format_float(e.lr), format_float(e.train_loss),
                 format_float(e.train_acc), format_float(e.val_loss), format_float(e.val_acc),
                 format_float(e.seconds)});
  csv.save(path);
}

void write_report_json(const TrainReport& report, const std::string& path) {
  // Wall times are excluded: the summary must be identical across reruns
  // of the same config and seed.
  nlohmann::json j;
  j["seed"] = report.seed;
  j["mode"] = report.mode;
  j["epochs"] = report.epochs.size();
  j["best_epoch"] = report.best_epoch;
  j["best_val_acc"] = report.best_val_acc;
  j["best_val_err"] = report.best_val_error();
  j["best_val_loss"] = report.best_val_loss;
  if (!report.epochs.empty()) {
    j["final_train_loss"] = report.epochs.back().train_loss;
    j["final_train_acc"] = report.epochs.back().train_acc;
    j["final_val_acc"] = report.epochs.back().val_acc;
  }
  write_text_file(path, j.dump(2) + "\n");
}

namespace {

Tensor<float> make_eval_batch(const Dataset& data, const ChannelStats& stats, int64_t begin,
                              int64_t count) {
  Tensor<float> batch({count, data.channels(), data.height(), data.width()});
  for (int64_t i = 0; i < count; ++i)
    fill_normalized(batch, i, data.image(begin + i), stats);
  return batch;
}

}  // namespace

EvalResult evaluate(const Model<float>& model, const Dataset& data, const ChannelStats& stats,
                    int batch_size) {
  if (data.size() == 0) throw DataError("evaluate: empty dataset");
  EvalResult result;
  std::vector<int64_t> per_class_total(static_cast<size_t>(data.classes), 0);
  std::vector<int64_t> per_class_correct(static_cast<size_t>(data.classes), 0);
  double loss_sum = 0.0;
  int64_t correct = 0;

  for (int64_t begin = 0; begin < data.size(); begin += batch_size) {
    const int64_t count = std::min<int64_t>(batch_size, data.size() - begin);
    Var<float> input = constant(make_eval_batch(data, stats, begin, count));
    ForwardResult<float> out = forward(model, static_cast<Tape<float>*>(nullptr), input);
    std::vector<int> labels(data.labels.begin() + begin, data.labels.begin() + begin + count);
    Var<float> loss = cross_entropy_loss<float>(nullptr, out.logits, labels);
    loss_sum += static_cast<double>(loss->value[0]) * static_cast<double>(count);
    for (int64_t i = 0; i < count; ++i) {
      const int lab = labels[static_cast<size_t>(i)];
      const bool hit = argmax_row(out.logits->value, i) == lab;
      ++per_class_total[static_cast<size_t>(lab)];
      if (hit) {
        ++correct;
        ++per_class_correct[static_cast<size_t>(lab)];
      }
    }
  }

  result.loss = loss_sum / static_cast<double>(data.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  result.per_class_accuracy.resize(static_cast<size_t>(data.classes), 0.0);
  for (int c = 0; c < data.classes; ++c)
    if (per_class_total[static_cast<size_t>(c)] > 0)
      result.per_class_accuracy[static_cast<size_t>(c)] =
          static_cast<double>(per_class_correct[static_cast<size_t>(c)]) /
          static_cast<double>(per_class_total[static_cast<size_t>(c)]);
  return result;
}

TrainReport train(Model<float>& model, const Dataset& train_set, const Dataset& val_set,
                  const ChannelStats& stats, const TrainConfig& cfg,
                  const std::string& checkpoint_dir, const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.size() == 0) throw DataError("train: empty training set");

  RngHub hub(cfg.seed);
  Rng augment_rng = hub.stream("augment");
  Rng shuffle_rng = hub.stream("shuffle");
  const AugmentConfig aug{cfg.shift_pixels, cfg.hflip};

  SgdMomentum<float> opt;
  opt.momentum = static_cast<float>(cfg.momentum);
  opt.weight_decay = static_cast<float>(cfg.weight_decay);
  opt.attach(model.params);

  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

  TrainReport report;
  report.seed = cfg.seed;
  report.mode = to_string(cfg.mode);

  std::vector<int64_t> order(static_cast<size_t>(train_set.size()));
  for (int64_t i = 0; i < train_set.size(); ++i) order[static_cast<size_t>(i)] = i;

  Tape<float> tape;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    opt.lr = static_cast<float>(lr_at(epoch, cfg));

    // Fisher-Yates from the shuffle stream.
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<uint64_t>(i))]);

    double loss_sum = 0.0;
    int64_t correct = 0;
    int batch_index = 0;
    for (int64_t begin = 0; begin < train_set.size(); begin += cfg.batch_size, ++batch_index) {
      const int64_t count = std::min<int64_t>(cfg.batch_size, train_set.size() - begin);
      Tensor<float> batch({count, train_set.channels(), train_set.height(), train_set.width()});
      std::vector<int> labels(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        const int64_t src = order[static_cast<size_t>(begin + i)];
        fill_normalized(batch, i, augment(train_set.image(src), augment_rng, aug), stats);
        labels[static_cast<size_t>(i)] = train_set.labels[static_cast<size_t>(src)];
      }

      Var<float> input = constant(std::move(batch));
      opt.zero_grad(model.params);

      ForwardResult<float> out;
      Var<float> loss;
      bool exploded = false;
      try {
        out = forward(model, &tape, input);
        loss = cross_entropy_loss(&tape, out.logits, labels);
        exploded = !std::isfinite(loss->value[0]);
      } catch (const NumericalError&) {
        exploded = true;
      }
      if (exploded) {
        // Re-run with guards off to locate the first non-finite layer.
        ForwardOptions probe_opts;
        probe_opts.nan_probe = true;
        ForwardResult<float> probe =
            forward(model, static_cast<Tape<float>*>(nullptr), input, probe_opts);
        tape.clear();
        throw NumericalError(
            "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
            std::to_string(batch_index) + ", first non-finite activation: " +
            (probe.first_nonfinite.empty() ? std::string("loss") : probe.first_nonfinite));
      }

      loss_sum += static_cast<double>(loss->value[0]) * static_cast<double>(count);
      for (int64_t i = 0; i < count; ++i)
        if (argmax_row(out.logits->value, i) == labels[static_cast<size_t>(i)]) ++correct;

      tape.backward(loss);
      opt.step(model.params);
      tape.clear();  // cleared between minibatches
    }

    EpochStats stats_row;
    stats_row.epoch = epoch;
    stats_row.lr = opt.lr;
    stats_row.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats_row.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());

    const EvalResult val = evaluate(model, val_set, stats);
    stats_row.val_loss = val.loss;
    stats_row.val_acc = val.accuracy;
    stats_row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(stats_row);

    const bool improved = report.best_epoch < 0 || val.accuracy > report.best_val_acc;
    if (improved) {
      report.best_epoch = epoch;
      report.best_val_acc = val.accuracy;
      report.best_val_loss = val.loss;
      if (!checkpoint_dir.empty()) save_checkpoint(model, checkpoint_dir + "/best.ckpt");
    }
    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(model, checkpoint_dir + "/epoch" + std::to_string(epoch) + ".ckpt");

    if (hooks.on_epoch) hooks.on_epoch(stats_row);
  }

  if (!checkpoint_dir.empty()) save_checkpoint(model, checkpoint_dir + "/final.ckpt");
  return report;
}

}  // namespace mpnet
