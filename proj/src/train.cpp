#include "rrwave/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "rrwave/binio.hpp"
#include "rrwave/rng.hpp"

namespace rrwave {

using nlohmann::json;

void TrainConfig::validate() const {
  require(lr >= 0.0, Err::InvalidConfig, "lr must be >= 0");
  require(eps > 0.0, Err::InvalidConfig, "eps must be > 0");
  require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, Err::InvalidConfig,
          "betas must lie in (0, 1)");
  require(max_epochs >= 0, Err::InvalidConfig, "max_epochs must be >= 0");
  require(early_stop_patience >= 1 && plateau_patience >= 1, Err::InvalidConfig,
          "patiences must be >= 1");
  require(plateau_factor > 0.0 && plateau_factor < 1.0, Err::InvalidConfig,
          "plateau_factor must lie in (0, 1)");
  require(batch_size >= 1, Err::InvalidConfig, "batch_size must be >= 1");
}

std::string TrainConfig::to_json() const {
  const json j = {{"lr", lr},
                  {"eps", eps},
                  {"beta1", beta1},
                  {"beta2", beta2},
                  {"max_epochs", max_epochs},
                  {"early_stop_patience", early_stop_patience},
                  {"plateau_patience", plateau_patience},
                  {"plateau_factor", plateau_factor},
                  {"batch_size", batch_size},
                  {"seed", seed},
                  {"reset_bn_stats", reset_bn_stats},
                  {"target_train_mse", target_train_mse},
                  {"wall_budget_s", wall_budget_s}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(Err::InvalidConfig, std::string("bad train config JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.eps = j.value("eps", c.eps);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.reset_bn_stats = j.value("reset_bn_stats", c.reset_bn_stats);
    c.target_train_mse = j.value("target_train_mse", c.target_train_mse);
    c.wall_budget_s = j.value("wall_budget_s", c.wall_budget_s);
  } catch (const json::exception& e) {
    raise(Err::InvalidConfig, std::string("bad train config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

AdaBeliefState AdaBeliefState::for_params(const std::vector<Tensor>& params) {
  AdaBeliefState st;
  for (const auto& p : params) {
    st.m.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    st.s.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
  return st;
}

void adabelief_step(std::vector<Tensor>& params, AdaBeliefState& state, double lr, double beta1,
                    double beta2, double eps) {
  require(state.m.size() == params.size() && state.s.size() == params.size(), Err::ShapeMismatch,
          "optimizer state does not match parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto theta = params[pi].data();
    auto& m = state.m[pi];
    auto& s = state.s[pi];
    require(m.size() == theta.size(), Err::ShapeMismatch, "optimizer slot shape mismatch");
    const bool has_grad = params[pi].has_grad();
    auto grad = params[pi].grad();
    for (size_t i = 0; i < theta.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      const double diff = g - m[i];
      s[i] = beta2 * s[i] + (1.0 - beta2) * diff * diff + eps;
      const double m_hat = m[i] / bc1;
      const double s_hat = s[i] / bc2;
      theta[i] -= lr * m_hat / (std::sqrt(s_hat) + eps);
    }
  }
}

PlateauStopper::PlateauStopper(int plateau_patience, double plateau_factor, int stop_patience)
    : plateau_patience_(plateau_patience),
      plateau_factor_(plateau_factor),
      stop_patience_(stop_patience) {
  require(plateau_patience >= 1 && stop_patience >= 1, Err::InvalidConfig, "patiences must be >= 1");
  require(plateau_factor > 0.0 && plateau_factor < 1.0, Err::InvalidConfig, "bad plateau factor");
}

PlateauStopper::Decision PlateauStopper::observe(double val_loss) {
  ++seen_;
  Decision d;
  if (!has_best_ || val_loss < best_) {
    has_best_ = true;
    best_ = val_loss;
    best_epoch_ = seen_;
    d.improved = true;
    return d;
  }
  const int since_best = seen_ - best_epoch_;
  d.decay = since_best % plateau_patience_ == 0;
  d.stop = since_best >= stop_patience_;
  return d;
}

double evaluate_mse(Model& model, const WindowSet& set, int batch_size) {
  require(!set.empty(), Err::EmptySplit, "evaluate_mse on empty set");
  double sq_sum = 0.0;
  size_t n = 0;
  for (size_t at = 0; at < set.size(); at += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = at; i < std::min(set.size(), at + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(i);
    auto [x, y] = set.batch(idx);
    Tensor pred = model.forward(nullptr, x, BnMode::kInfer);
    for (size_t i = 0; i < idx.size(); ++i) {
      const double d = pred.data()[i] - y.data()[i];
      sq_sum += d * d;
    }
    n += idx.size();
  }
  return sq_sum / static_cast<double>(n);
}

std::vector<double> predict(Model& model, const WindowSet& set, int batch_size) {
  std::vector<double> out;
  out.reserve(set.size());
  for (size_t at = 0; at < set.size(); at += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = at; i < std::min(set.size(), at + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(i);
    auto [x, y] = set.batch(idx);
    Tensor pred = model.forward(nullptr, x, BnMode::kInfer);
    for (size_t i = 0; i < idx.size(); ++i) out.push_back(pred.data()[i]);
  }
  return out;
}

FitResult fit(Model& model, const WindowSet& train, const WindowSet& val, const TrainConfig& cfg) {
  cfg.validate();
  require(!train.empty() && !val.empty(), Err::EmptySplit, "train and val must be non-empty");
  require(train.w() == model.config.w && val.w() == model.config.w, Err::ConfigMismatch,
          "window seconds of the data do not match the model");

  FitResult res;
  if (cfg.max_epochs == 0) {
    res.best_model = model.clone();
    return res;
  }

  auto params = model.trainable_params();
  AdaBeliefState state = AdaBeliefState::for_params(params);
  PlateauStopper stopper(cfg.plateau_patience, cfg.plateau_factor, cfg.early_stop_patience);
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5f7ff1eULL));

  const auto wall_start = std::chrono::steady_clock::now();
  double lr = cfg.lr;
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sq_sum = 0.0;
    size_t n_seen = 0;
    int batch_index = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
      std::span<const size_t> idx(order.data() + at, hi - at);
      Tape tape;
      auto [x, y] = train.batch(idx);
      Tensor pred = model.forward(&tape, x, BnMode::kTrain);
      Tensor loss = mse_loss(&tape, pred, y);
      const double lv = loss.scalar();
      if (!std::isfinite(lv))
        raise(Err::NonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(batch_index));
      sq_sum += lv * static_cast<double>(idx.size());
      n_seen += idx.size();
      tape.backward(loss);
      adabelief_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.eps);
      for (auto& p : params) p.zero_grad();
      ++batch_index;
    }
    const double train_mse = sq_sum / static_cast<double>(n_seen);
    const double val_mse = evaluate_mse(model, val);
    if (!std::isfinite(val_mse))
      raise(Err::NonFiniteLoss, "validation loss at epoch " + std::to_string(epoch));
    res.history.push_back(EpochRecord{epoch, train_mse, val_mse, lr});

    const auto d = stopper.observe(val_mse);
    if (d.improved) {
      res.best_model = model.clone();
      res.best_epoch = epoch;
      res.best_val_mse = val_mse;
      res.best_model.meta.epoch = epoch;
      res.best_model.meta.best_val_mse = val_mse;
    }
    if (d.decay) {
      lr *= cfg.plateau_factor;
      ++res.decay_events;
    }
    if (d.stop) break;
    if (cfg.target_train_mse > 0.0 && train_mse < cfg.target_train_mse) break;
    if (cfg.wall_budget_s > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count() >
            cfg.wall_budget_s)
      break;
  }
  res.epochs_run = static_cast<int>(res.history.size());
  return res;
}

FitResult finetune(const Model& checkpoint, const WindowSet& train, const WindowSet& val,
                   const TrainConfig& cfg, bool allow_reshape) {
  Model m = checkpoint.clone();
  const int data_w = train.w();
  if (m.config.w != data_w) {
    require(allow_reshape, Err::ConfigMismatch,
            "checkpoint trained at W=" + std::to_string(m.config.w) + " but data is W=" +
                std::to_string(data_w) + " (pass --reshape-head to accept)");
    m.config.w = data_w;  // convolutional trunk is length-agnostic
  }
  if (cfg.reset_bn_stats) m.reset_bn_stats();
  return fit(m, train, val, cfg);
}

void save_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::string text = "epoch,train_mse,val_mse,lr\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_mse, r.val_mse,
                  r.lr);
    text += buf;
  }
  write_file_atomic(path, text);
}

}  // namespace rrwave
