#include "proxygap/pretrain.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace proxygap;

namespace {

DatasetConfig micro_dataset(uint64_t seed = 3) {
  DatasetConfig cfg;
  cfg.b = 0.7;
  cfg.rho = 0.8;
  cfg.eta = 0.05;
  cfg.p = 0.6;
  cfg.d = 2;
  cfg.n_train = 64;
  cfg.n_val = 32;
  cfg.n_test = 8;
  cfg.n_ood = 8;
  cfg.seed = seed;
  return cfg;
}

BackboneConfig micro_backbone() {
  BackboneConfig cfg;
  cfg.n_layers = 1;
  cfg.width = 16;
  cfg.n_heads = 2;
  return cfg;
}

}  // namespace

TEST(TrainConfig, RejectsDegenerateBudgets) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  const auto splits = gen_dataset(micro_dataset());
  TrainConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(pretrain<float>(splits, micro_backbone(), bad), std::invalid_argument);
}

TEST(AdamW, DecoupledDecayHitsOnlyMaskedParams) {
  auto params = init_backbone<float>(micro_backbone(), 4);
  const auto before_wq = params.layers[0].wq->value;
  const auto before_emb = params.tok_emb->value;
  const auto before_bias = params.layers[0].bq->value;
  const auto before_norm = params.layers[0].ln1_g->value;

  AdamW<float>::Options opts;
  opts.lr = 0.1;
  opts.weight_decay = 0.5;
  AdamW<float> opt(params.all(), params.decay_mask(), opts);
  opt.zero_grad();
  opt.step();  // zero gradients: the only update is the decay term

  for (size_t i = 0; i < before_wq.size(); ++i)
    EXPECT_NEAR(params.layers[0].wq->value[i], before_wq[i] * (1.0f - 0.1f * 0.5f), 1e-7f);
  EXPECT_EQ(params.tok_emb->value, before_emb);
  EXPECT_EQ(params.layers[0].bq->value, before_bias);
  EXPECT_EQ(params.layers[0].ln1_g->value, before_norm);
}

TEST(AdamW, SingleBatchStepDecreasesLoss) {
  const auto cfg = micro_backbone();
  auto params = init_backbone<float>(cfg, 5);
  const auto splits = gen_dataset(micro_dataset());
  std::vector<uint8_t> tokens;
  for (int i = 0; i < 8; ++i)
    tokens.insert(tokens.end(), splits.train[static_cast<size_t>(i)].tokens.begin(),
                  splits.train[static_cast<size_t>(i)].tokens.end());

  auto batch_loss = [&](bool do_step, AdamW<float>* opt) {
    Tape<float> tape(do_step);
    auto fwd = forward(tape, params, tokens, 8, false);
    auto loss = nll_loss(tape, fwd, tokens, cfg.seq_len);
    if (do_step) {
      opt->zero_grad();
      tape.backward(loss);
      opt->step();
    }
    return static_cast<double>(loss->value[0]);
  };

  AdamW<float>::Options opts;
  opts.lr = 1e-3;
  opts.weight_decay = 0.0;
  AdamW<float> opt(params.all(), params.decay_mask(), opts);
  const double before = batch_loss(true, &opt);
  const double after = batch_loss(false, nullptr);
  EXPECT_LT(after, before);
}

TEST(Pretrain, DeterministicTraceAndParams) {
  const auto splits = gen_dataset(micro_dataset());
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.seed = 77;
  const auto a = pretrain<float>(splits, micro_backbone(), tc);
  const auto b = pretrain<float>(splits, micro_backbone(), tc);
  ASSERT_EQ(a.trace.val_loss.size(), 2u);
  ASSERT_EQ(a.trace.train_loss.size(), 2u);
  EXPECT_EQ(a.trace.val_loss, b.trace.val_loss);
  EXPECT_EQ(a.trace.train_loss, b.trace.train_loss);
  const auto pa = a.params.all(), pb = b.params.all();
  for (size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  for (double v : a.trace.val_loss) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
}

TEST(Pretrain, LearnsAboveChanceStructure) {
  // a fully templated corpus must fall well below the uniform floor
  auto dcfg = micro_dataset(9);
  dcfg.n_train = 256;
  dcfg.b = 1.0;
  dcfg.p = 1.0;
  dcfg.d = 1;
  const auto splits = gen_dataset(dcfg);
  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 32;
  tc.lr = 1e-3;
  tc.seed = 12;
  const auto result = pretrain<float>(splits, micro_backbone(), tc);
  EXPECT_LT(result.trace.val_loss.back(), std::log(80.0) - 0.5);
  EXPECT_LT(result.trace.val_loss.back(), result.trace.val_loss.front());
}

TEST(Pretrain, AbortsOnNonFiniteLoss) {
  const auto splits = gen_dataset(micro_dataset());
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 64;
  tc.lr = 1e28;  // blows the weights up; the next forward goes non-finite
  tc.seed = 13;
  EXPECT_THROW(pretrain<float>(splits, micro_backbone(), tc), NonFiniteLossError);
}

TEST(ProxyScore, MatchesClosedForm) {
  TrainTrace trace;
  trace.val_loss = {1.0};
  EXPECT_NEAR(proxy_score(trace, 2), -1.0 - 1e-6 * std::log(2.0), 1e-15);

  trace.val_loss = {2.0, 1.5, 1.8};
  const int64_t n_params = 822096;
  EXPECT_NEAR(proxy_score(trace, n_params), -1.5 - 1e-6 * std::log(822096.0), 1e-15);

  // the penalty clamps below 2 parameters
  trace.val_loss = {0.5};
  EXPECT_DOUBLE_EQ(proxy_score(trace, 0), proxy_score(trace, 2));
}

TEST(ProxyScore, MonotoneInBestValLossAndMinPositionInvariant) {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    TrainTrace a, b;
    const int epochs = 1 + static_cast<int>(rng.below(12));
    for (int e = 0; e < epochs; ++e) {
      a.val_loss.push_back(1.0 + rng.uniform() * 3.0);
      b.val_loss.push_back(1.0 + rng.uniform() * 3.0);
    }
    const double min_a = *std::min_element(a.val_loss.begin(), a.val_loss.end());
    const double min_b = *std::min_element(b.val_loss.begin(), b.val_loss.end());
    const double sa = proxy_score(a, 1000), sb = proxy_score(b, 1000);
    if (min_a < min_b) {
      EXPECT_GT(sa, sb);
    } else if (min_b < min_a) {
      EXPECT_GT(sb, sa);
    }
    // position of the minimum is irrelevant
    auto rotated = a;
    std::rotate(rotated.val_loss.begin(), rotated.val_loss.begin() + 1, rotated.val_loss.end());
    EXPECT_DOUBLE_EQ(proxy_score(rotated, 1000), sa);
  }
}

TEST(ProxyScore, RejectsBadInputs) {
  TrainTrace empty;
  EXPECT_THROW(proxy_score(empty, 10), std::invalid_argument);
  TrainTrace ok;
  ok.val_loss = {1.0};
  EXPECT_THROW(proxy_score(ok, -1), std::invalid_argument);
}

TEST(RunRecord, CarriesConfigEchoAndLosses) {
  TrainTrace trace;
  trace.val_loss = {2.0, 1.5};
  trace.train_loss = {2.2, 1.6};
  const auto record =
      make_run_record(micro_dataset(), micro_backbone(), TrainConfig{}, trace, -1.5,
                      12345, 7.5, {{"run_seed", 42}});
  EXPECT_EQ(record.at("param_count").get<int64_t>(), 12345);
  EXPECT_EQ(record.at("val_loss").size(), 2u);
  EXPECT_DOUBLE_EQ(record.at("proxy_score").get<double>(), -1.5);
  EXPECT_DOUBLE_EQ(record.at("dataset").at("rho").get<double>(), 0.8);
  EXPECT_EQ(record.at("train").at("epochs").get<int>(), 12);
  EXPECT_EQ(record.at("seed_provenance").at("run_seed").get<int>(), 42);
  EXPECT_TRUE(record.contains("wall_time_seconds"));
}
