#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rrwave/model.hpp"
#include "rrwave/signal_io.hpp"
#include "rrwave/tensor.hpp"

namespace rrwave {

struct TrainConfig {
  double lr = 1e-4;
  double eps = 1e-13;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int max_epochs = 1000;
  int early_stop_patience = 5;
  int plateau_patience = 4;
  double plateau_factor = 0.25;
  int batch_size = 32;
  uint64_t seed = 0;
  bool reset_bn_stats = false;     // on finetune: restart running statistics
  double target_train_mse = 0.0;   // > 0: stop once train MSE drops below
  double wall_budget_s = 0.0;      // > 0: stop after this much wall time

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// Per-parameter first moment and variance-of-belief state.
struct AdaBeliefState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> s;
  int64_t t = 0;

  static AdaBeliefState for_params(const std::vector<Tensor>& params);
};

// One update: m_t = b1*m + (1-b1)*g; s_t = b2*s + (1-b2)*(g-m_t)^2 + eps;
// theta -= lr * m_hat / (sqrt(s_hat) + eps) with bias-corrected moments.
void adabelief_step(std::vector<Tensor>& params, AdaBeliefState& state, double lr, double beta1,
                    double beta2, double eps);

// Improvement tracking shared by LR decay (plateau) and early stopping.
// "Improved" means strictly lower validation loss than the running best.
class PlateauStopper {
 public:
  PlateauStopper(int plateau_patience, double plateau_factor, int stop_patience);

  struct Decision {
    bool improved = false;
    bool decay = false;
    bool stop = false;
  };
  Decision observe(double val_loss);

  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_seen() const { return seen_; }

 private:
  int plateau_patience_;
  double plateau_factor_;
  int stop_patience_;
  double best_ = 0.0;
  bool has_best_ = false;
  int best_epoch_ = 0;
  int seen_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;
};

struct FitResult {
  Model best_model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_mse = 0.0;
  int decay_events = 0;
  int epochs_run = 0;
};

// MSE training loop with AdaBelief, plateau LR decay and early stopping.
// Deterministic in (model, data, config.seed).
FitResult fit(Model& model, const WindowSet& train, const WindowSet& val,
              const TrainConfig& cfg);

// Transfer pathway: all layers stay trainable, optimizer state restarts.
// W mismatch between checkpoint and data raises ConfigMismatch unless
// `allow_reshape` (the trunk is length-agnostic).
FitResult finetune(const Model& checkpoint, const WindowSet& train, const WindowSet& val,
                   const TrainConfig& cfg, bool allow_reshape = false);

// Mean MSE of the model over a window set, evaluated in inference mode.
double evaluate_mse(Model& model, const WindowSet& set, int batch_size = 64);

// Per-window predictions in inference mode.
std::vector<double> predict(Model& model, const WindowSet& set, int batch_size = 64);

void save_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace rrwave
