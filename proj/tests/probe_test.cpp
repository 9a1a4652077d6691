#include "proxygap/probe.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace proxygap;

namespace {

ProbeConfig small_probe(uint64_t seed = 1, int epochs = 40) {
  ProbeConfig cfg;
  cfg.hidden = 16;
  cfg.epochs = epochs;
  cfg.batch_size = 128;
  cfg.seed = seed;
  return cfg;
}

// linearly separable blobs in 4 dimensions
FeatureMatrix<float> separable_features(int64_t n, uint64_t seed) {
  FeatureMatrix<float> f;
  f.n = n;
  f.dim = 4;
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t label = static_cast<uint8_t>(rng.below(2));
    const double center = label ? 1.5 : -1.5;
    for (int64_t j = 0; j < 4; ++j)
      f.data.push_back(static_cast<float>(center + rng.normal(0.0, 0.3)));
    f.labels.push_back(label);
    f.informative.push_back(1);
  }
  return f;
}

FeatureMatrix<float> random_label_features(int64_t n, int64_t dim, uint64_t seed) {
  FeatureMatrix<float> f;
  f.n = n;
  f.dim = dim;
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < dim; ++j) f.data.push_back(static_cast<float>(rng.normal()));
    f.labels.push_back(static_cast<uint8_t>(rng.below(2)));
    f.informative.push_back(1);
  }
  return f;
}

// one-hot encoding of the same-bucket bit; the oracle feature for the task
FeatureSet<float> oracle_feature_set(const SplitSet& splits) {
  auto encode = [](const std::vector<LabeledExample>& examples) {
    FeatureMatrix<float> f;
    f.n = static_cast<int64_t>(examples.size());
    f.dim = 2;
    for (const auto& ex : examples) {
      const uint8_t bit = testutil::bayes_decode(ex);
      f.data.push_back(bit ? 0.0f : 1.0f);
      f.data.push_back(bit ? 1.0f : 0.0f);
      f.labels.push_back(ex.label);
      f.informative.push_back(ex.informative ? 1 : 0);
    }
    return f;
  };
  return {encode(splits.train), encode(splits.test), encode(splits.ood)};
}

DatasetConfig probe_dataset(double rho, double eta, uint64_t seed) {
  DatasetConfig cfg;
  cfg.b = 0.6;
  cfg.rho = rho;
  cfg.eta = eta;
  cfg.p = 0.5;
  cfg.d = 2;
  cfg.n_train = 512;
  cfg.n_val = 64;
  cfg.n_test = 512;
  cfg.n_ood = 2000;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(TrainProbe, FitsSeparableData) {
  const auto train = separable_features(256, 21);
  const auto weights = train_probe(train, small_probe());
  EXPECT_DOUBLE_EQ(probe_accuracy(weights, train), 1.0);
  const auto held_out = separable_features(256, 22);
  EXPECT_GT(probe_accuracy(weights, held_out), 0.99);
}

TEST(TrainProbe, DeterministicBySeed) {
  const auto train = separable_features(128, 23);
  const auto a = train_probe(train, small_probe(5));
  const auto b = train_probe(train, small_probe(5));
  EXPECT_EQ(a.w1->value, b.w1->value);
  EXPECT_EQ(a.b1->value, b.b1->value);
  EXPECT_EQ(a.w2->value, b.w2->value);
  EXPECT_EQ(a.b2->value, b.b2->value);
  const auto c = train_probe(train, small_probe(6));
  EXPECT_NE(a.w1->value, c.w1->value);
}

TEST(TrainProbe, ShuffledLabelsStayNearChance) {
  const auto train = random_label_features(400, 8, 31);
  const auto weights = train_probe(train, small_probe(7, 30));
  const auto held_out = random_label_features(2000, 8, 32);
  const double acc = probe_accuracy(weights, held_out);
  EXPECT_NEAR(acc, 0.5, testutil::binomial_ci99(0.5, held_out.n));
}

TEST(TrainProbe, RejectsDegenerateInputs) {
  FeatureMatrix<float> single;
  single.n = 1;
  single.dim = 2;
  single.data = {1.0f, 2.0f};
  single.labels = {0};
  single.informative = {1};
  EXPECT_THROW(train_probe(single, small_probe()), std::invalid_argument);

  auto one_class = separable_features(32, 33);
  std::fill(one_class.labels.begin(), one_class.labels.end(), uint8_t{1});
  EXPECT_THROW(train_probe(one_class, small_probe()), std::invalid_argument);
}

TEST(ExtractFeatures, EmptyRepeatableAndAnswerBlind) {
  BackboneConfig cfg;
  cfg.n_layers = 1;
  cfg.width = 16;
  cfg.n_heads = 2;
  const auto params = init_backbone<float>(cfg, 3);

  const auto empty = extract_features(params, {});
  EXPECT_EQ(empty.n, 0);

  auto dcfg = probe_dataset(0.9, 0.0, 44);
  dcfg.n_train = 24;
  const auto examples = gen_split(dcfg, "train", dcfg.n_train);
  const auto a = extract_features(params, examples);
  const auto b = extract_features(params, examples);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.labels, b.labels);

  // flipping the answer token leaves every feature row unchanged
  auto flipped = examples;
  for (auto& ex : flipped)
    ex.tokens[63] = ex.tokens[63] == Vocabulary::label0 ? Vocabulary::label1
                                                        : Vocabulary::label0;
  const auto c = extract_features(params, flipped);
  EXPECT_EQ(a.data, c.data);
}

TEST(Protocols, OracleFeaturesSaturateMainProtocol) {
  // rho=1, eta=0: the one-hot same-bucket bit decides the label exactly
  auto dcfg = probe_dataset(1.0, 0.0, 45);
  const auto splits = gen_dataset(dcfg);
  const auto features = oracle_feature_set(splits);
  const auto run = run_main_protocol(features, small_probe(8));
  EXPECT_DOUBLE_EQ(run.test_acc, 1.0);
  EXPECT_DOUBLE_EQ(run.ood_acc, 1.0);
  EXPECT_EQ(run.protocol, "main");
  EXPECT_EQ(run.n_train_used, dcfg.n_train);
}

TEST(Protocols, DiagEqualsMainWhenEveryExampleIsInformative) {
  auto dcfg = probe_dataset(1.0, 0.05, 46);
  const auto splits = gen_dataset(dcfg);
  const auto features = oracle_feature_set(splits);
  const auto cfg = small_probe(9);
  const auto main_run = run_main_protocol(features, cfg);
  const auto diag_run = run_diag_protocol(features, cfg);
  EXPECT_DOUBLE_EQ(main_run.test_acc, diag_run.test_acc);
  EXPECT_DOUBLE_EQ(main_run.ood_acc, diag_run.ood_acc);
  EXPECT_EQ(main_run.n_train_used, diag_run.n_train_used);
  EXPECT_EQ(diag_run.n_ood_used, diag_run.n_ood_total);
}

TEST(Protocols, DiagInapplicableWithoutInformativeExamples) {
  auto dcfg = probe_dataset(0.0, 0.0, 47);
  dcfg.n_train = 128;
  dcfg.n_test = 64;
  dcfg.n_ood = 64;
  const auto splits = gen_dataset(dcfg);
  const auto features = oracle_feature_set(splits);
  EXPECT_THROW(run_diag_protocol(features, small_probe(10)), ProtocolInapplicable);
}

TEST(Protocols, LabelFreeDatasetGivesChanceLevelMainAccuracy) {
  // rho = 0: labels are independent of every token, so OOD accuracy sits at
  // the 0.5 floor no matter what the backbone computed
  const auto dcfg = probe_dataset(0.0, 0.0, 48);
  const auto splits = gen_dataset(dcfg);
  BackboneConfig bcfg;
  bcfg.n_layers = 1;
  bcfg.width = 32;
  bcfg.n_heads = 4;
  const auto params = init_backbone<float>(bcfg, 11);
  const auto run = run_main_protocol(params, splits, small_probe(12, 25));
  EXPECT_NEAR(run.ood_acc, 0.5, testutil::three_se(0.5, dcfg.n_ood));
}

TEST(Protocols, ProbeTrainingNeverTouchesBackbone) {
  const auto dcfg = probe_dataset(0.8, 0.05, 49);
  const auto splits = gen_dataset(dcfg);
  BackboneConfig bcfg;
  bcfg.n_layers = 1;
  bcfg.width = 16;
  bcfg.n_heads = 2;
  const auto params = init_backbone<float>(bcfg, 13);
  const uint64_t before = testutil::hash_params(params);
  (void)run_main_protocol(params, splits, small_probe(14, 10));
  EXPECT_EQ(testutil::hash_params(params), before);
}

TEST(ProbeRecord, CarriesProtocolAndCounts) {
  auto dcfg = probe_dataset(1.0, 0.0, 50);
  const auto splits = gen_dataset(dcfg);
  const auto features = oracle_feature_set(splits);
  const auto cfg = small_probe(15);
  const auto run = run_diag_protocol(features, cfg);
  const auto record = make_probe_record(run, cfg);
  EXPECT_EQ(record.at("protocol").get<std::string>(), "diag");
  EXPECT_EQ(record.at("counts").at("train_used").get<int64_t>(), dcfg.n_train);
  EXPECT_EQ(record.at("probe").at("hidden").get<int>(), 16);
  EXPECT_TRUE(record.at("ood_acc").is_number());
}
