#include "proxygap/metrics.hpp"

#include <gtest/gtest.h>

#include "proxygap/rng.hpp"

using namespace proxygap;

namespace {

// Published three-seed primary rows, reconstructed from synthetic components
// that reproduce the gaps exactly: proxy_b = 0 and accuracies split around
// 0.5 so that delta_proxy/delta_main/delta_diag land on the published values.
std::vector<SeedReport> primary_reference_rows() {
  return {
      compute_seed_report(42, 1.2406, 0.0, 0.5, 0.5 - 0.0062, 0.5, 0.5 + 0.0153),
      compute_seed_report(123, 1.2390, 0.0, 0.25, 0.25 + 0.2494, 0.25, 0.25 + 0.2691),
      compute_seed_report(456, 1.2168, 0.0, 0.25, 0.25 + 0.4742, 0.25, 0.25 + 0.4836),
  };
}

}  // namespace

TEST(SeedReport, SignConventionsAndCriteria) {
  const auto rows = primary_reference_rows();

  EXPECT_NEAR(rows[0].delta_proxy, 1.2406, 1e-12);
  EXPECT_NEAR(rows[0].delta_main, -0.0062, 1e-12);
  ASSERT_TRUE(rows[0].delta_diag);
  EXPECT_NEAR(*rows[0].delta_diag, 0.0153, 1e-12);
  EXPECT_FALSE(rows[0].all_sample_reversal);  // main gap negative
  EXPECT_TRUE(rows[0].diagnostic_criterion);

  EXPECT_TRUE(rows[1].all_sample_reversal);
  EXPECT_TRUE(rows[1].diagnostic_criterion);

  EXPECT_NEAR(rows[2].delta_proxy, 1.2168, 1e-12);
  EXPECT_NEAR(rows[2].delta_main, 0.4742, 1e-12);
  EXPECT_NEAR(*rows[2].delta_diag, 0.4836, 1e-12);
  EXPECT_TRUE(rows[2].all_sample_reversal);
  EXPECT_TRUE(rows[2].diagnostic_criterion);
}

TEST(SeedReport, ZeroGapsAreNonEvents) {
  const auto r = compute_seed_report(1, 2.5, 2.5, 0.7, 0.8, 0.6, 0.9);
  EXPECT_DOUBLE_EQ(r.delta_proxy, 0.0);
  EXPECT_FALSE(r.all_sample_reversal);
  EXPECT_FALSE(r.diagnostic_criterion);
}

TEST(SeedReport, AbsentDiagnosticsNeverSatisfyTheCriterion) {
  const auto r = compute_seed_report(2, 1.0, 0.0, 0.4, 0.9);
  EXPECT_TRUE(r.all_sample_reversal);
  EXPECT_FALSE(r.diag_applicable);
  EXPECT_FALSE(r.delta_diag.has_value());
  EXPECT_FALSE(r.diagnostic_criterion);

  // one side present is still inapplicable
  const auto half = compute_seed_report(3, 1.0, 0.0, 0.4, 0.9, 0.5, std::nullopt);
  EXPECT_FALSE(half.diag_applicable);
}

TEST(SeedReport, ValidatesInputs) {
  EXPECT_THROW(compute_seed_report(1, std::nan(""), 0.0, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(compute_seed_report(1, 0.0, 0.0, 1.5, 0.5), std::invalid_argument);
  EXPECT_THROW(compute_seed_report(1, 0.0, 0.0, 0.5, 0.5, -0.1, 0.5), std::invalid_argument);
}

TEST(Aggregate, ReproducesPublishedPrimaryMeanRowAndCounts) {
  const auto report = aggregate("primary", primary_reference_rows());
  // published mean row at its 4-decimal precision
  EXPECT_NEAR(report.mean_delta_proxy, 1.2321, 5e-5);
  EXPECT_NEAR(report.mean_delta_main, 0.2391, 5e-5);
  ASSERT_TRUE(report.mean_delta_diag);
  EXPECT_NEAR(*report.mean_delta_diag, 0.2560, 5e-5);
  EXPECT_EQ(report.reversal_count, 2);
  EXPECT_EQ(report.diagnostic_count, 3);
  EXPECT_EQ(report.diag_contributing, 3);
}

TEST(Aggregate, ReproducesPublishedBackgroundOnlyPattern) {
  // per-seed values consistent with the published ablation aggregate: proxy
  // gap positive in all seeds (mean 1.2675), one positive main gap (mean
  // +0.0057), two tiny positive diagnostic gaps against one larger negative
  // (mean -0.0025)
  const std::vector<SeedReport> rows{
      compute_seed_report(42, 1.2700, 0.0, 0.4, 0.4 + 0.0871, 0.4, 0.4 + 0.0100),
      compute_seed_report(123, 1.2800, 0.0, 0.4, 0.4 - 0.0300, 0.4, 0.4 + 0.0050),
      compute_seed_report(456, 1.2525, 0.0, 0.4, 0.4 - 0.0400, 0.4, 0.4 - 0.0225),
  };
  const auto report = aggregate("background_only", rows);
  EXPECT_NEAR(report.mean_delta_proxy, 1.2675, 5e-5);
  EXPECT_NEAR(report.mean_delta_main, 0.0057, 5e-5);
  ASSERT_TRUE(report.mean_delta_diag);
  EXPECT_NEAR(*report.mean_delta_diag, -0.0025, 5e-5);
  EXPECT_EQ(report.reversal_count, 1);
  EXPECT_EQ(report.diagnostic_count, 2);
}

TEST(Aggregate, PermutationInvariantMeans) {
  auto rows = primary_reference_rows();
  const auto base = aggregate("primary", rows);
  Rng rng(4);
  rng.shuffle(rows.begin(), rows.end());
  const auto shuffled = aggregate("primary", rows);
  EXPECT_DOUBLE_EQ(base.mean_delta_proxy, shuffled.mean_delta_proxy);
  EXPECT_DOUBLE_EQ(base.mean_delta_main, shuffled.mean_delta_main);
  EXPECT_DOUBLE_EQ(*base.mean_delta_diag, *shuffled.mean_delta_diag);
  EXPECT_EQ(base.reversal_count, shuffled.reversal_count);
}

TEST(Aggregate, ExcludesAbsentDiagnosticsFromTheMean) {
  const std::vector<SeedReport> rows{
      compute_seed_report(1, 1.0, 0.0, 0.5, 0.6, 0.5, 0.7),
      compute_seed_report(2, 1.0, 0.0, 0.5, 0.6),  // diag inapplicable
  };
  const auto report = aggregate("mixed", rows);
  EXPECT_EQ(report.diag_contributing, 1);
  ASSERT_TRUE(report.mean_delta_diag);
  EXPECT_NEAR(*report.mean_delta_diag, 0.2, 1e-12);

  const std::vector<SeedReport> none{compute_seed_report(1, 1.0, 0.0, 0.5, 0.6)};
  const auto empty_diag = aggregate("none", none);
  EXPECT_FALSE(empty_diag.mean_delta_diag.has_value());
  EXPECT_EQ(empty_diag.diag_contributing, 0);
}

TEST(Aggregate, SingleReportIsItsOwnMean) {
  const auto row = compute_seed_report(9, 1.5, 0.3, 0.5, 0.55, 0.5, 0.52);
  const auto report = aggregate("solo", {row});
  EXPECT_DOUBLE_EQ(report.mean_delta_proxy, row.delta_proxy);
  EXPECT_DOUBLE_EQ(report.mean_delta_main, row.delta_main);
  EXPECT_DOUBLE_EQ(*report.mean_delta_diag, *row.delta_diag);
  EXPECT_THROW(aggregate("empty", {}), std::invalid_argument);
}

TEST(Csv, RoundTripsThroughTheTableFormat) {
  const auto report = aggregate("primary", primary_reference_rows());
  const auto csv = report_to_csv(report);
  EXPECT_EQ(csv.substr(0, std::string(kGapCsvHeader).size()), kGapCsvHeader);

  const auto rows = parse_gap_csv(csv);
  ASSERT_EQ(rows.size(), 4u);  // 3 seeds + mean
  EXPECT_EQ(rows[0].seed, "42");
  EXPECT_NEAR(rows[0].proxy, 1.2406, 1e-6);
  EXPECT_NEAR(rows[0].main, -0.0062, 1e-6);
  ASSERT_TRUE(rows[3].diag);
  EXPECT_EQ(rows[3].seed, "mean");
  EXPECT_NEAR(*rows[3].diag, 0.2560, 1e-4);

  EXPECT_THROW(parse_gap_csv("bogus header\n1,2,3,4\n"), std::invalid_argument);
  EXPECT_THROW(parse_gap_csv(std::string(kGapCsvHeader) + "\n"), std::invalid_argument);
}

TEST(Csv, AbsentDiagnosticsLeaveTheCellEmpty) {
  const auto report =
      aggregate("nodiag", {compute_seed_report(5, 1.0, 0.0, 0.5, 0.6)});
  const auto csv = report_to_csv(report);
  const auto rows = parse_gap_csv(csv);
  EXPECT_FALSE(rows[0].diag.has_value());
  EXPECT_FALSE(rows[1].diag.has_value());
}

TEST(Json, ConfigReportRoundTrip) {
  auto rows = primary_reference_rows();
  rows.push_back(compute_seed_report(7, 0.5, 0.6, 0.5, 0.4));  // negative, no diag
  const auto report = aggregate("primary", rows);
  const nlohmann::json j = report;
  const auto back = j.get<ConfigReport>();
  EXPECT_EQ(back.name, report.name);
  ASSERT_EQ(back.seeds.size(), report.seeds.size());
  for (size_t i = 0; i < back.seeds.size(); ++i) {
    EXPECT_DOUBLE_EQ(back.seeds[i].delta_proxy, report.seeds[i].delta_proxy);
    EXPECT_EQ(back.seeds[i].delta_diag.has_value(), report.seeds[i].delta_diag.has_value());
    EXPECT_EQ(back.seeds[i].all_sample_reversal, report.seeds[i].all_sample_reversal);
  }
  EXPECT_DOUBLE_EQ(back.mean_delta_proxy, report.mean_delta_proxy);
  EXPECT_EQ(back.reversal_count, report.reversal_count);
  EXPECT_EQ(back.diag_contributing, report.diag_contributing);
}

TEST(FormatMetric, FixedSixDecimalFormatting) {
  EXPECT_EQ(format_metric(1.2406), "1.240600");
  EXPECT_EQ(format_metric(-0.0062), "-0.006200");
  EXPECT_EQ(format_metric(0.0), "0.000000");
}
