#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxygap/adamw.hpp"
#include "proxygap/backbone.hpp"
#include "proxygap/datagen.hpp"
#include "proxygap/dataset_io.hpp"
#include "proxygap/errors.hpp"

namespace proxygap {

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  int epochs = 12;
  int batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},           {"weight_decay", c.weight_decay},
                     {"epochs", c.epochs},   {"batch_size", c.batch_size},
                     {"beta1", c.beta1},     {"beta2", c.beta2},
                     {"eps", c.eps},         {"seed", c.seed}};
}

struct TrainTrace {
  std::vector<double> val_loss;    // one entry per epoch
  std::vector<double> train_loss;  // per-epoch mean over training sequences
};

template <typename Real>
struct PretrainResult {
  BackboneParams<Real> params;
  TrainTrace trace;
};

namespace detail {

inline std::vector<uint8_t> gather_tokens(const std::vector<LabeledExample>& examples,
                                          const std::vector<int64_t>& order,
                                          int64_t begin, int64_t end) {
  std::vector<uint8_t> tokens(static_cast<size_t>((end - begin) * kSeqLen));
  for (int64_t i = begin; i < end; ++i) {
    const auto& ex = examples[static_cast<size_t>(order[static_cast<size_t>(i)])];
    std::copy(ex.tokens.begin(), ex.tokens.end(),
              tokens.begin() + static_cast<ptrdiff_t>((i - begin) * kSeqLen));
  }
  return tokens;
}

}  // namespace detail

// mean next-token loss over a split, dropout off
template <typename Real>
double eval_nll(const BackboneParams<Real>& params,
                const std::vector<LabeledExample>& examples, int batch_size) {
  std::vector<int64_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto n = static_cast<int64_t>(examples.size());
  double total = 0;
  for (int64_t begin = 0; begin < n; begin += batch_size) {
    const int64_t end = std::min<int64_t>(begin + batch_size, n);
    const auto tokens = detail::gather_tokens(examples, order, begin, end);
    Tape<Real> tape(false);
    auto fwd = forward(tape, params, tokens, end - begin, false);
    auto loss = nll_loss(tape, fwd, tokens, params.config.seq_len);
    total += static_cast<double>(loss->value[0]) * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(n);
}

// AdamW pretraining with a constant learning rate, per-epoch reshuffling
// from a named stream, and a full-validation pass at the end of each epoch.
// Dropout masks are keyed by (seed, step, layer), so the whole trace is a
// pure function of (splits, configs, seed).
template <typename Real>
PretrainResult<Real> pretrain(const SplitSet& splits, const BackboneConfig& backbone_cfg,
                              const TrainConfig& train_cfg) {
  backbone_cfg.validate();
  train_cfg.validate();
  if (splits.train.empty() || splits.val.empty())
    throw std::invalid_argument("pretrain: train and val splits must be non-empty");

  PretrainResult<Real> result;
  result.params = init_backbone<Real>(backbone_cfg, derive_key(train_cfg.seed, "init"));
  auto& params = result.params;

  typename AdamW<Real>::Options opts;
  opts.lr = train_cfg.lr;
  opts.weight_decay = train_cfg.weight_decay;
  opts.beta1 = train_cfg.beta1;
  opts.beta2 = train_cfg.beta2;
  opts.eps = train_cfg.eps;
  AdamW<Real> optimizer(params.all(), params.decay_mask(), opts);

  const auto n = static_cast<int64_t>(splits.train.size());
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  int64_t step = 0;
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    Rng shuffle_rng = derive_rng(train_cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    double epoch_total = 0;
    for (int64_t begin = 0; begin < n; begin += train_cfg.batch_size) {
      const int64_t end = std::min<int64_t>(begin + train_cfg.batch_size, n);
      const auto tokens = detail::gather_tokens(splits.train, order, begin, end);

      Tape<Real> tape;
      auto fwd = forward(tape, params, tokens, end - begin, true,
                         derive_key(train_cfg.seed, "dropout", static_cast<uint64_t>(step)));
      auto loss = nll_loss(tape, fwd, tokens, backbone_cfg.seq_len);
      const double loss_value = static_cast<double>(loss->value[0]);
      if (!std::isfinite(loss_value))
        throw NonFiniteLossError("pretrain: non-finite loss at epoch " +
                                     std::to_string(epoch) + " step " + std::to_string(step),
                                 epoch, static_cast<int>(step));
      optimizer.zero_grad();
      tape.backward(loss);
      optimizer.step();

      epoch_total += loss_value * static_cast<double>(end - begin);
      ++step;
    }
    result.trace.train_loss.push_back(epoch_total / static_cast<double>(n));
    const double val = eval_nll(params, splits.val, train_cfg.batch_size);
    if (!std::isfinite(val))
      throw NonFiniteLossError("pretrain: non-finite validation loss after epoch " +
                                   std::to_string(epoch),
                               epoch, -1);
    result.trace.val_loss.push_back(val);
  }
  return result;
}

// ----------------------------- compression proxy -----------------------------

constexpr double kProxyAlpha = 1e-6;

// S = -min_t val_loss(t) - alpha * ln(max(2, n_params))
inline double proxy_score(const TrainTrace& trace, int64_t n_params) {
  if (trace.val_loss.empty())
    throw std::invalid_argument("proxy_score: empty validation trace");
  if (n_params < 0) throw std::invalid_argument("proxy_score: negative param count");
  const double best = *std::min_element(trace.val_loss.begin(), trace.val_loss.end());
  return -best - kProxyAlpha * std::log(std::max<double>(2.0, static_cast<double>(n_params)));
}

// run record: config echo, losses, proxy score, param count, wall time, seeds
inline nlohmann::json make_run_record(const DatasetConfig& dataset_cfg,
                                      const BackboneConfig& backbone_cfg,
                                      const TrainConfig& train_cfg,
                                      const TrainTrace& trace, double proxy,
                                      int64_t param_count, double wall_seconds,
                                      const nlohmann::json& seed_provenance) {
  return nlohmann::json{{"dataset", dataset_cfg},
                        {"backbone", backbone_cfg},
                        {"train", train_cfg},
                        {"val_loss", trace.val_loss},
                        {"train_loss", trace.train_loss},
                        {"proxy_score", proxy},
                        {"param_count", param_count},
                        {"wall_time_seconds", wall_seconds},
                        {"seed_provenance", seed_provenance}};
}

}  // namespace proxygap
