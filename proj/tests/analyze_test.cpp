#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "bfuse/analyze.hpp"
#include "bfuse/error.hpp"
#include "support/support.hpp"

namespace bfuse {
namespace {

CorrectnessMatrix from_rows(std::vector<std::vector<int>> rows) {
  CorrectnessMatrix cm;
  cm.num_samples = rows[0].size();
  for (std::size_t b = 0; b < rows.size(); ++b) {
    cm.backbone_names.push_back("m" + std::to_string(b));
    for (int v : rows[b]) cm.correct.push_back(static_cast<std::uint8_t>(v));
  }
  return cm;
}

Report sample_report(const std::string& method, double fused) {
  Report r;
  r.method = method;
  r.norm = "l2";
  r.source = "zeroshot";
  r.seed = 3;
  r.backbone_accuracy = {{"b", 61.5}, {"a", 70.25}};
  r.fused_accuracy = fused;
  r.config = {{"shots", nullptr}};
  finalize(r);
  return r;
}

TEST(Correctness, MatchesPredictions) {
  PredictionVector a;
  a.preds = {0, 1, 2, 0};
  a.confidence.assign(4, 1.0);
  PredictionVector b = a;
  b.preds = {1, 1, 0, 0};
  const LabelVector labels = {0, 1, 2, 1};
  const std::vector<PredictionVector> preds = {a, b};
  const auto cm = correctness(preds, {"a", "b"}, labels, {3, 0, 2});
  EXPECT_EQ(cm.num_samples, 3u);
  EXPECT_EQ(cm.correct, (std::vector<std::uint8_t>{0, 1, 1, 0, 0, 0}));
  EXPECT_EQ(cm.row_count(0), 2u);
}

TEST(Oracle, Examples) {
  EXPECT_EQ(oracle_accuracy(from_rows({{1, 0}, {0, 1}})), 1.0);
  EXPECT_EQ(oracle_accuracy(from_rows({{0, 0, 0}, {0, 0, 0}})), 0.0);
}

TEST(Oracle, NeverBelowAnySingleBackbone) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cm = testing::random_correctness(rng, 1 + rng.below(6), 1 + rng.below(300),
                                                rng.uniform());
    const double oracle = oracle_accuracy(cm);
    for (std::size_t b = 0; b < cm.num_backbones(); ++b) {
      EXPECT_GE(oracle, static_cast<double>(cm.row_count(b)) / cm.num_samples);
    }
  }
}

TEST(Venn, TwoBackboneExample) {
  const auto v = venn_partition(from_rows({{1, 1, 0}, {1, 0, 0}}));
  EXPECT_EQ(v.none_correct, 1u);
  EXPECT_EQ(v.counts.size(), 2u);
  EXPECT_EQ(v.counts.at(0b11u), 1u);
  EXPECT_EQ(v.counts.at(0b01u), 1u);
}

TEST(Venn, IdenticalBackbonesOnlyFillTheFullSubset) {
  const auto v = venn_partition(from_rows({{1, 0, 1, 1}, {1, 0, 1, 1}, {1, 0, 1, 1}}));
  EXPECT_EQ(v.none_correct, 1u);
  ASSERT_EQ(v.counts.size(), 1u);
  EXPECT_EQ(v.counts.at(0b111u), 3u);
}

TEST(Venn, MatchesBruteForceAndReconciles) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cm = testing::random_correctness(rng, 1 + rng.below(5), 1 + rng.below(200),
                                                rng.uniform());
    const auto v = venn_partition(cm);
    std::size_t none = 0;
    EXPECT_EQ(v.counts, testing::brute_force_venn(cm, &none));
    EXPECT_EQ(v.none_correct, none);
    std::size_t total = v.none_correct;
    for (const auto& [mask, count] : v.counts) total += count;
    EXPECT_EQ(total, cm.num_samples);
    for (std::size_t b = 0; b < cm.num_backbones(); ++b) {
      EXPECT_EQ(v.backbone_total(b), cm.row_count(b));
    }
    EXPECT_NEAR(oracle_accuracy(cm),
                1.0 - static_cast<double>(v.none_correct) / cm.num_samples, 1e-15);
  }
}

TEST(Venn, TooManyBackbonesIsAnError) {
  Rng rng(3);
  EXPECT_THROW(venn_partition(testing::random_correctness(rng, 17, 4, 0.5)), ConfigError);
  EXPECT_NO_THROW(venn_partition(testing::random_correctness(rng, 16, 4, 0.5)));
}

TEST(Venn, JsonSubsetKeysAreSortedNames) {
  CorrectnessMatrix cm = from_rows({{1, 1, 0}, {1, 0, 1}});
  cm.backbone_names = {"zeta", "alpha"};
  const auto j = to_json(venn_partition(cm));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j["subsets"].items()) keys.push_back(k);
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_TRUE(j["subsets"].contains("alpha|zeta"));
  EXPECT_EQ(j["none_correct"], 0);
}

TEST(Venn, CsvHasOneRowPerSubsetPlusNone) {
  Rng rng(4);
  const auto v = venn_partition(testing::random_correctness(rng, 4, 100, 0.5));
  const std::string csv = to_csv(v);
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  EXPECT_EQ(static_cast<std::size_t>(lines), 1 + v.counts.size() + 1);
  EXPECT_EQ(csv.rfind("subset,size,count\n", 0), 0u);
}

TEST(Report, DeltaIsFusedMinusBestSingle) {
  const Report r = sample_report("logavg", 75.0);
  EXPECT_EQ(r.best_backbone, "a");
  EXPECT_EQ(r.best_single, 70.25);
  EXPECT_NEAR(r.delta, 75.0 - 70.25, 1e-9);
}

TEST(Report, JsonRoundTripAndDeterministicRendering) {
  const Report r = sample_report("gac", 72.0);
  EXPECT_EQ(render(to_json(r)), render(to_json(r)));
  const Report back = report_from_json(to_json(r));
  EXPECT_EQ(back.method, "gac");
  EXPECT_EQ(back.backbone_accuracy, r.backbone_accuracy);
  EXPECT_EQ(back.delta, r.delta);
  EXPECT_THROW(report_from_json(nlohmann::json{{"method", "x"}}), ConfigError);
}

TEST(Report, EmitIsByteIdenticalAcrossCalls) {
  testing::TempDir dir;
  const Report r = sample_report("vote1", 66.0);
  for (ReportFormat f : {ReportFormat::kJson, ReportFormat::kCsv}) {
    emit_report(r, f, dir / "a");
    emit_report(r, f, dir / "b");
    EXPECT_EQ(testing::read_bytes(dir / "a"), testing::read_bytes(dir / "b"));
  }
  EXPECT_EQ(parse_report_format("csv"), ReportFormat::kCsv);
  EXPECT_THROW(parse_report_format("xml"), ConfigError);
}

TEST(DeltaTable, Aggregates) {
  std::vector<Report> zero = {sample_report("a", 70.25), sample_report("b", 70.25)};
  const auto z = delta_table(zero);
  EXPECT_EQ(z.mean, 0.0);
  EXPECT_EQ(z.max, 0.0);
  EXPECT_EQ(z.min, 0.0);

  std::vector<Report> mixed = {sample_report("a", 70.25 + 1.26), sample_report("b", 70.25 - 4.08)};
  const auto m = delta_table(mixed);
  EXPECT_EQ(m.count, 2u);
  EXPECT_NEAR(m.mean, -1.41, 1e-9);
  EXPECT_NEAR(m.max, 1.26, 1e-9);
  EXPECT_NEAR(m.min, -4.08, 1e-9);
  EXPECT_THROW(delta_table(std::span<const Report>{}), ConfigError);
}

}  // namespace
}  // namespace bfuse
