#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mpnet/augment.hpp"
#include "mpnet/dataset.hpp"
#include "mpnet/model.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double lr_decay_factor = 10.0;
  std::vector<int> decay_epochs{80, 150};
  uint64_t seed = 1;
  int shift_pixels = 4;
  bool hflip = true;
  double weight_decay = 0.0;  // off unless configured
  int checkpoint_every = 0;   // epochs between periodic checkpoints; 0 = off
  ModelMode mode = ModelMode::adaptive;

  bool operator==(const TrainConfig&) const = default;

  void validate() const;
};

/// Piecewise-constant step schedule: the base rate divided by
/// `lr_decay_factor` once per decay epoch already reached.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  uint64_t seed = 0;
  std::string mode;

  double best_val_error() const { return 1.0 - best_val_acc; }
  /// Field-wise equality ignoring wall time.
  bool deterministic_equal(const TrainReport& other) const;
};

void write_report_csv(const TrainReport& report, const std::string& path);
void write_report_json(const TrainReport& report, const std::string& path);

/// v <- momentum * v - lr * g;  p <- p + v.
/// Plain momentum (no Nesterov); optional decoupled-from-nothing weight
/// decay folded into the gradient.
template <class T>
struct SgdMomentum {
  T lr = T(0.1);
  T momentum = T(0.9);
  T weight_decay = T(0);
  std::vector<Tensor<T>> velocity;

  void attach(const std::vector<std::pair<std::string, Var<T>>>& params) {
    velocity.clear();
    velocity.reserve(params.size());
    for (const auto& [name, p] : params) velocity.emplace_back(p->value.shape());
  }

  void zero_grad(const std::vector<std::pair<std::string, Var<T>>>& params) {
    for (const auto& [name, p] : params) {
      p->ensure_grad();
      p->zero_grad();
    }
  }

  void step(const std::vector<std::pair<std::string, Var<T>>>& params) {
    if (velocity.size() != params.size())
      throw Error("optimizer not attached to this parameter set");
    for (size_t i = 0; i < params.size(); ++i) {
      const Var<T>& p = params[i].second;
      Tensor<T>& v = velocity[i];
      check_same_shape(v, p->value, "sgd_momentum_step");
      check_same_shape(p->grad, p->value, "sgd_momentum_step");
      const int64_t n = v.size();
      for (int64_t k = 0; k < n; ++k) {
        T g = p->grad[k];
        if (weight_decay != T(0)) g += weight_decay * p->value[k];
        v[k] = momentum * v[k] - lr * g;
        p->value[k] += v[k];
      }
    }
  }
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
};

/// Top-1 accuracy and mean loss; never mutates parameters, never augments.
EvalResult evaluate(const Model<float>& model, const Dataset& data, const ChannelStats& stats,
                    int batch_size = 256);

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
};

/// Full training loop. Deterministic given the config seed (augmentation,
/// shuffling and init draw from named streams of that seed). Writes
/// best/final (and optional periodic) checkpoints when `checkpoint_dir`
/// is non-empty. Aborts with NumericalError naming epoch, batch and the
/// first non-finite layer if the loss leaves the reals.
TrainReport train(Model<float>& model, const Dataset& train_set, const Dataset& val_set,
                  const ChannelStats& stats, const TrainConfig& cfg,
                  const std::string& checkpoint_dir = "", const TrainHooks& hooks = {});

}  // namespace mpnet
