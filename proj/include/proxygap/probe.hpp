#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxygap/adamw.hpp"
#include "proxygap/backbone.hpp"
#include "proxygap/datagen.hpp"
#include "proxygap/errors.hpp"

namespace proxygap {

struct ProbeConfig {
  int hidden = 256;
  int epochs = 100;
  double lr = 1e-3;
  int batch_size = 1024;
  uint64_t seed = 0;

  void validate() const {
    if (hidden < 1 || epochs < 1 || lr <= 0 || batch_size < 1)
      throw std::invalid_argument("ProbeConfig: all fields must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed}};
}

template <typename Real>
struct FeatureMatrix {
  int64_t n = 0;
  int64_t dim = 0;
  std::vector<Real> data;            // n x dim, row-major
  std::vector<uint8_t> labels;       // n
  std::vector<uint8_t> informative;  // n
};

template <typename Real>
struct FeatureSet {
  FeatureMatrix<Real> train, test, ood;
};

// one-hidden-layer MLP probe: dim -> hidden (GELU) -> 2
template <typename Real>
struct ProbeWeights {
  Tensor<Real> w1, b1, w2, b2;
};

template <typename Real>
struct ProbeRun {
  std::string protocol;  // "main" | "diag"
  ProbeWeights<Real> weights;
  double test_acc = 0.0;
  double ood_acc = 0.0;
  // used = rows the protocol actually fit/evaluated on (post filter)
  int64_t n_train_total = 0, n_test_total = 0, n_ood_total = 0;
  int64_t n_train_used = 0, n_test_used = 0, n_ood_used = 0;
};

// ----------------------------- feature extraction -----------------------------

// row i = final-norm hidden state of example i at the query position,
// dropout off; batched for throughput
template <typename Real>
FeatureMatrix<Real> extract_features(const BackboneParams<Real>& params,
                                     const std::vector<LabeledExample>& examples,
                                     int batch_size = 256) {
  const auto& cfg = params.config;
  const int64_t t = cfg.seq_len, c = cfg.width;
  FeatureMatrix<Real> out;
  out.n = static_cast<int64_t>(examples.size());
  out.dim = c;
  out.data.resize(static_cast<size_t>(out.n * c));
  out.labels.resize(static_cast<size_t>(out.n));
  out.informative.resize(static_cast<size_t>(out.n));

  for (int64_t begin = 0; begin < out.n; begin += batch_size) {
    const int64_t end = std::min<int64_t>(begin + batch_size, out.n);
    const int64_t bs = end - begin;
    std::vector<uint8_t> tokens(static_cast<size_t>(bs * t));
    for (int64_t i = 0; i < bs; ++i)
      std::copy(examples[static_cast<size_t>(begin + i)].tokens.begin(),
                examples[static_cast<size_t>(begin + i)].tokens.end(),
                tokens.begin() + static_cast<ptrdiff_t>(i * t));
    Tape<Real> tape(false);
    auto fwd = forward(tape, params, tokens, bs, false);
    for (int64_t i = 0; i < bs; ++i)
      std::copy_n(fwd.hidden->value.data() + (i * t + (t - 2)) * c, c,
                  out.data.data() + (begin + i) * c);
  }
  for (int64_t i = 0; i < out.n; ++i) {
    out.labels[static_cast<size_t>(i)] = examples[static_cast<size_t>(i)].label;
    out.informative[static_cast<size_t>(i)] =
        examples[static_cast<size_t>(i)].informative ? 1 : 0;
  }
  return out;
}

template <typename Real>
FeatureSet<Real> extract_feature_set(const BackboneParams<Real>& params,
                                     const SplitSet& splits, int batch_size = 256) {
  return {extract_features(params, splits.train, batch_size),
          extract_features(params, splits.test, batch_size),
          extract_features(params, splits.ood, batch_size)};
}

template <typename Real>
FeatureMatrix<Real> filter_informative(const FeatureMatrix<Real>& f) {
  FeatureMatrix<Real> out;
  out.dim = f.dim;
  for (int64_t i = 0; i < f.n; ++i) {
    if (!f.informative[static_cast<size_t>(i)]) continue;
    out.data.insert(out.data.end(), f.data.begin() + static_cast<ptrdiff_t>(i * f.dim),
                    f.data.begin() + static_cast<ptrdiff_t>((i + 1) * f.dim));
    out.labels.push_back(f.labels[static_cast<size_t>(i)]);
    out.informative.push_back(1);
    ++out.n;
  }
  return out;
}

// ----------------------------- probe training -----------------------------

// Adam-style updates (no weight decay), fixed epoch budget, deterministic
// per-epoch shuffling; init and shuffling keyed by cfg.seed
template <typename Real>
ProbeWeights<Real> train_probe(const FeatureMatrix<Real>& feats, const ProbeConfig& cfg) {
  cfg.validate();
  if (feats.n < 2)
    throw std::invalid_argument("train_probe: need at least 2 examples");
  bool has0 = false, has1 = false;
  for (uint8_t l : feats.labels) (l ? has1 : has0) = true;
  if (!has0 || !has1)
    throw std::invalid_argument("train_probe: single-class input (degenerate probe)");

  ProbeWeights<Real> w;
  Rng init = derive_rng(cfg.seed, "probe-init");
  auto normal_mat = [&](int64_t rows, int64_t cols) {
    auto t = make_tensor<Real>({rows, cols}, true);
    for (auto& x : t->value) x = static_cast<Real>(init.normal(0.0, 0.02));
    return t;
  };
  w.w1 = normal_mat(feats.dim, cfg.hidden);
  w.b1 = make_tensor<Real>({cfg.hidden}, true);
  w.w2 = normal_mat(cfg.hidden, 2);
  w.b2 = make_tensor<Real>({2}, true);

  typename AdamW<Real>::Options opts;
  opts.lr = cfg.lr;
  opts.weight_decay = 0.0;
  AdamW<Real> optimizer({w.w1, w.b1, w.w2, w.b2}, {false, false, false, false}, opts);

  std::vector<int64_t> order(static_cast<size_t>(feats.n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = derive_rng(cfg.seed, "probe-shuffle", static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    for (int64_t begin = 0; begin < feats.n; begin += cfg.batch_size) {
      const int64_t end = std::min<int64_t>(begin + cfg.batch_size, feats.n);
      const int64_t bs = end - begin;
      auto x = make_tensor<Real>({bs, feats.dim}, false);
      std::vector<int32_t> targets(static_cast<size_t>(bs));
      for (int64_t i = 0; i < bs; ++i) {
        const int64_t src = order[static_cast<size_t>(begin + i)];
        std::copy_n(feats.data.data() + src * feats.dim, feats.dim,
                    x->value.data() + i * feats.dim);
        targets[static_cast<size_t>(i)] = feats.labels[static_cast<size_t>(src)];
      }
      Tape<Real> tape;
      auto logits = linear(tape, gelu(tape, linear(tape, x, w.w1, w.b1)), w.w2, w.b2);
      auto loss = cross_entropy(tape, logits, std::move(targets));
      if (!std::isfinite(static_cast<double>(loss->value[0])))
        throw NonFiniteLossError("train_probe: non-finite loss", epoch, 0);
      optimizer.zero_grad();
      tape.backward(loss);
      optimizer.step();
    }
  }
  return w;
}

// argmax over the two logits; exact ties resolve to label 0
template <typename Real>
double probe_accuracy(const ProbeWeights<Real>& w, const FeatureMatrix<Real>& feats,
                      int batch_size = 4096) {
  if (feats.n == 0)
    throw std::invalid_argument("probe_accuracy: empty feature matrix");
  int64_t correct = 0;
  for (int64_t begin = 0; begin < feats.n; begin += batch_size) {
    const int64_t end = std::min<int64_t>(begin + batch_size, feats.n);
    const int64_t bs = end - begin;
    auto x = make_tensor<Real>({bs, feats.dim}, false);
    std::copy_n(feats.data.data() + begin * feats.dim, bs * feats.dim, x->value.data());
    Tape<Real> tape(false);
    auto logits = linear(tape, gelu(tape, linear(tape, x, w.w1, w.b1)), w.w2, w.b2);
    for (int64_t i = 0; i < bs; ++i) {
      const Real l0 = logits->value[static_cast<size_t>(i * 2)];
      const Real l1 = logits->value[static_cast<size_t>(i * 2 + 1)];
      const uint8_t pred = l1 > l0 ? 1 : 0;
      if (pred == feats.labels[static_cast<size_t>(begin + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(feats.n);
}

// ----------------------------- protocols -----------------------------

// all-sample protocol: fit on the full labeled train split, evaluate on the
// full test and OOD splits
template <typename Real>
ProbeRun<Real> run_main_protocol(const FeatureSet<Real>& features, const ProbeConfig& cfg) {
  ProbeRun<Real> run;
  run.protocol = "main";
  run.n_train_total = run.n_train_used = features.train.n;
  run.n_test_total = run.n_test_used = features.test.n;
  run.n_ood_total = run.n_ood_used = features.ood.n;
  run.weights = train_probe(features.train, cfg);
  run.test_acc = probe_accuracy(run.weights, features.test);
  run.ood_acc = probe_accuracy(run.weights, features.ood);
  return run;
}

// filtered informative-subset diagnostic: restrict all three splits to
// generator-recorded informative examples, then refit and evaluate
template <typename Real>
ProbeRun<Real> run_diag_protocol(const FeatureSet<Real>& features, const ProbeConfig& cfg) {
  ProbeRun<Real> run;
  run.protocol = "diag";
  run.n_train_total = features.train.n;
  run.n_test_total = features.test.n;
  run.n_ood_total = features.ood.n;

  const auto train = filter_informative(features.train);
  const auto test = filter_informative(features.test);
  const auto ood = filter_informative(features.ood);
  run.n_train_used = train.n;
  run.n_test_used = test.n;
  run.n_ood_used = ood.n;

  if (train.n == 0 || test.n == 0 || ood.n == 0)
    throw ProtocolInapplicable("diag protocol: empty informative subset");
  bool has0 = false, has1 = false;
  for (uint8_t l : train.labels) (l ? has1 : has0) = true;
  if (!has0 || !has1)
    throw ProtocolInapplicable("diag protocol: single-class informative train subset");

  run.weights = train_probe(train, cfg);
  run.test_acc = probe_accuracy(run.weights, test);
  run.ood_acc = probe_accuracy(run.weights, ood);
  return run;
}

template <typename Real>
ProbeRun<Real> run_main_protocol(const BackboneParams<Real>& params, const SplitSet& splits,
                                 const ProbeConfig& cfg) {
  return run_main_protocol(extract_feature_set(params, splits), cfg);
}

template <typename Real>
ProbeRun<Real> run_diag_protocol(const BackboneParams<Real>& params, const SplitSet& splits,
                                 const ProbeConfig& cfg) {
  return run_diag_protocol(extract_feature_set(params, splits), cfg);
}

template <typename Real>
nlohmann::json make_probe_record(const ProbeRun<Real>& run, const ProbeConfig& cfg) {
  return nlohmann::json{{"protocol", run.protocol},
                        {"probe", cfg},
                        {"counts",
                         {{"train_total", run.n_train_total},
                          {"train_used", run.n_train_used},
                          {"test_total", run.n_test_total},
                          {"test_used", run.n_test_used},
                          {"ood_total", run.n_ood_total},
                          {"ood_used", run.n_ood_used}}},
                        {"test_acc", run.test_acc},
                        {"ood_acc", run.ood_acc},
                        {"seed", cfg.seed}};
}

}  // namespace proxygap
