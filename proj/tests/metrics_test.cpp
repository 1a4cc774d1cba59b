// Copyright 2025 ************
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pnrec/metrics.hpp"
#include "pnrec/synthetic.hpp"

namespace pnrec {
namespace {

// Fixed dense score table as a ranking callback.
auto TableScores(const oracle::Dense& s) {
  return [&s](int u, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[u][i];
  };
}

TEST(RankItemsTest, MasksTrainItems) {
  const InteractionDataset ds(1, 4, {{0, 2}}, {{0, 1}});
  const oracle::Dense s = {{0.1, 0.2, 0.9, 0.3}};
  const RankingResult rr = RankItems(ds, 3, TableScores(s));
  ASSERT_EQ(rr.users.size(), 1u);
  EXPECT_EQ(rr.users[0].top_k, (std::vector<int>{3, 1, 0}));
  EXPECT_EQ(rr.users[0].rankable, 3);
  EXPECT_EQ(rr.users[0].test_positions[0], (std::pair<int, int>{1, 2}));
}

TEST(RankItemsTest, TiesBreakByItemIndex) {
  const InteractionDataset ds(1, 5, {{0, 0}}, {{0, 4}});
  const oracle::Dense s = {{1.0, 0.5, 0.5, 0.7, 0.5}};
  const RankingResult rr = RankItems(ds, 4, TableScores(s));
  EXPECT_EQ(rr.users[0].top_k, (std::vector<int>{3, 1, 2, 4}));
  EXPECT_EQ(rr.users[0].test_positions[0].second, 4);
}

TEST(RankItemsTest, ExcludesUsersWithoutTestOrTrain) {
  const InteractionDataset ds(3, 3, {{0, 0}, {1, 1}}, {{0, 1}, {2, 0}});
  const oracle::Dense s(3, std::vector<double>(3, 0.0));
  const RankingResult rr = RankItems(ds, 2, TableScores(s));
  ASSERT_EQ(rr.users.size(), 1u);
  EXPECT_EQ(rr.excluded_no_test, 1);
  EXPECT_EQ(rr.excluded_no_train, 1);
}

TEST(RecallPrecisionNdcgTest, Examples) {
  // Two test items, one in the top 20 at position 1.
  std::vector<Edge> train = {{0, 0}};
  const InteractionDataset ds(1, 40, train, {{0, 1}, {0, 39}});
  oracle::Dense s(1, std::vector<double>(40));
  for (int i = 0; i < 40; ++i) s[0][i] = -i;
  const RankingQuality q = RecallPrecisionNdcg(RankItems(ds, 20, TableScores(s)));
  EXPECT_DOUBLE_EQ(q.recall, 0.5);
  EXPECT_DOUBLE_EQ(q.precision, 1.0 / 20);
  EXPECT_DOUBLE_EQ(q.ndcg, 1.0 / (1.0 + 1.0 / std::log2(3.0)));

  const InteractionDataset one(1, 3, {{0, 0}}, {{0, 1}});
  const oracle::Dense top = {{0.0, 1.0, 0.5}};
  EXPECT_DOUBLE_EQ(RecallPrecisionNdcg(RankItems(one, 20, TableScores(top))).ndcg,
                   1.0);
  const oracle::Dense second = {{0.0, 0.5, 1.0}};
  EXPECT_DOUBLE_EQ(
      RecallPrecisionNdcg(RankItems(one, 20, TableScores(second))).ndcg,
      1.0 / std::log2(3.0));
}

TEST(RecallPrecisionNdcgTest, WithinUnitInterval) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u01;
  for (int rep = 0; rep < 50; ++rep) {
    const auto ds = oracle::RandomDataset(8, 12, 0.3, 0.3, rng);
    oracle::Dense s(8, std::vector<double>(12));
    for (auto& row : s) {
      for (double& v : row) v = u01(rng);
    }
    const auto q = RecallPrecisionNdcg(RankItems(ds, 5, TableScores(s)));
    for (double v : {q.recall, q.precision, q.ndcg}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(BiasTest, TwoItemsPerfectlyAligned) {
  // Item 0 popular and ranked first, item 1 rare and ranked last.
  std::vector<Edge> train, test;
  for (int u = 0; u < 4; ++u) train.push_back({u, 2 + u});
  for (int u = 1; u < 4; ++u) train.push_back({u, 0});
  train.push_back({0, 1});
  test = {{0, 0}, {1, 1}};
  const InteractionDataset ds(4, 6, train, test);
  oracle::Dense s(4, std::vector<double>(6, 0.0));
  for (auto& row : s) {
    row[0] = 10;
    row[1] = -10;
  }
  const BiasResult b =
      PopularityOpportunityBias(RankItems(ds, 2, TableScores(s)), ds);
  EXPECT_FALSE(b.degenerate);
  EXPECT_EQ(b.items, 2);
  EXPECT_DOUBLE_EQ(b.value, 1.0);
}

TEST(BiasTest, SingleItemIsDegenerate) {
  const InteractionDataset ds(2, 3, {{0, 1}, {1, 2}}, {{0, 0}, {1, 0}});
  const oracle::Dense s(2, std::vector<double>(3, 0.0));
  const BiasResult b =
      PopularityOpportunityBias(RankItems(ds, 2, TableScores(s)), ds);
  EXPECT_TRUE(b.degenerate);
  EXPECT_EQ(b.value, 0.0);
}

TEST(BiasTest, RoundingNoiseDoesNotBreakTies) {
  // Item 0: q = {0, 1, 1}, mean (0 + 1 + 1) / 3. Item 1: q = 1 - 1/3.
  // Both are 2/3 exactly but differ in the last bit as doubles.
  // Train degrees: d_0 = 1, d_1 = 2.
  const InteractionDataset ds(4, 6, {{3, 0}, {0, 1}, {3, 1}}, {});
  RankingResult rr;
  rr.k = 1;
  rr.users = {{0, 4, {}, {{0, 4}}},
              {1, 4, {}, {{0, 1}}},
              {2, 4, {}, {{0, 1}, {1, 2}}}};
  ASSERT_NE((0.0 + 1.0 + 1.0) / 3.0, 1.0 - 1.0 / 3.0);
  const BiasResult b = PopularityOpportunityBias(rr, ds);
  EXPECT_TRUE(b.degenerate);
  EXPECT_EQ(b.items, 2);
}

TEST(BiasTest, NearZeroWhenScoresIgnorePopularity) {
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticConfig cfg;
    cfg.num_users = 400;
    cfg.num_items = 300;
    cfg.seed = seed;
    const auto ds = GenerateSynthetic(cfg).dataset;
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> u01;
    oracle::Dense s(ds.num_users(), std::vector<double>(ds.num_items()));
    for (auto& row : s) {
      for (double& v : row) v = u01(rng);
    }
    const BiasResult b =
        PopularityOpportunityBias(RankItems(ds, 20, TableScores(s)), ds);
    EXPECT_LT(std::abs(b.value), 0.2) << "seed " << seed;
    mean += b.value / 10;
  }
  EXPECT_LT(std::abs(mean), 0.1);
}

TEST(BiasTest, InvariantUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  const auto ds = oracle::RandomDataset(10, 14, 0.3, 0.3, rng);
  oracle::Dense s(10, std::vector<double>(14)), t = s;
  for (int u = 0; u < 10; ++u) {
    for (int i = 0; i < 14; ++i) {
      s[u][i] = g(rng);
      t[u][i] = std::exp(3 * s[u][i]) + 7;
    }
  }
  const auto a = ComputeMetrics(RankItems(ds, 5, TableScores(s)), ds,
                                Correlation::kSpearman);
  const auto b = ComputeMetrics(RankItems(ds, 5, TableScores(t)), ds,
                                Correlation::kSpearman);
  EXPECT_EQ(a.bias.value, b.bias.value);
  EXPECT_EQ(a.quality.recall, b.quality.recall);
  EXPECT_EQ(a.quality.ndcg, b.quality.ndcg);
}

TEST(MetricsOracle, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(2, 8);
  std::uniform_int_distribution<int> level(0, 3);
  int compared_bias = 0;
  for (int rep = 0; rep < 300; ++rep) {
    const int n = size(rng), m = size(rng);
    const auto ds = oracle::RandomDataset(n, m, 0.35, 0.35, rng);
    // Coarse score levels force ties.
    oracle::Dense s(n, std::vector<double>(m));
    for (auto& row : s) {
      for (double& v : row) v = level(rng) * 0.25;
    }
    const int k = 1 + rep % 5;
    const RankingResult rr = RankItems(ds, k, TableScores(s));
    const MetricRow got = ComputeMetrics(rr, ds, Correlation::kPearson);
    const oracle::Metrics want = oracle::BruteForce(ds, s, k);
    ASSERT_EQ(got.quality.users, want.users);
    EXPECT_NEAR(got.quality.recall, want.recall, 1e-12);
    EXPECT_NEAR(got.quality.precision, want.precision, 1e-12);
    EXPECT_NEAR(got.quality.ndcg, want.ndcg, 1e-12);
    ASSERT_EQ(got.bias.degenerate, !want.bias.has_value()) << "rep " << rep;
    if (want.bias) {
      EXPECT_NEAR(got.bias.value, *want.bias, 1e-12);
      ++compared_bias;
    }
  }
  EXPECT_GT(compared_bias, 50);
}

TEST(DisaggregateTest, SingleQuadrantEqualsOverall) {
  // Identical users all fall in LightMainstream.
  const InteractionDataset ds(3, 6, {{0, 0}, {1, 1}, {2, 2}},
                              {{0, 3}, {1, 4}, {2, 5}});
  oracle::Dense s(3, std::vector<double>(6));
  for (int u = 0; u < 3; ++u) {
    for (int i = 0; i < 6; ++i) s[u][i] = (u * 7 + i * 3) % 5;
  }
  const RankingResult rr = RankItems(ds, 2, TableScores(s));
  const EvalReport r = Evaluate(rr, ds, AssignQuadrants(ds));
  const auto& lm = r.quadrants[static_cast<int>(Quadrant::kLightMainstream)];
  ASSERT_TRUE(lm.metrics.has_value());
  EXPECT_EQ(lm.users, 3);
  EXPECT_EQ(lm.metrics->quality.recall, r.overall.quality.recall);
  EXPECT_EQ(lm.metrics->bias.value, r.overall.bias.value);
  for (Quadrant q : {Quadrant::kPowerMainstream, Quadrant::kPowerNiche,
                     Quadrant::kLightNiche}) {
    EXPECT_FALSE(r.quadrants[static_cast<int>(q)].metrics.has_value());
  }
}

TEST(DisaggregateTest, UserWeightedMeanRecoversOverall) {
  SyntheticConfig cfg;
  cfg.num_users = 300;
  cfg.num_items = 200;
  cfg.seed = 8;
  const auto ds = GenerateSynthetic(cfg).dataset;
  auto model = EmbeddingModel::Create(ModelKind::kMF, ds.num_users(),
                                      ds.num_items(), 8);
  model.InitGaussian(0.5, 3);
  const RankingResult rr = RankItems(ds, 20, Scorer::FromModel(model));
  const EvalReport r = Evaluate(rr, ds, AssignQuadrants(ds));
  double recall = 0, ndcg = 0;
  int users = 0;
  for (const auto& row : r.quadrants) {
    if (!row.metrics) continue;
    recall += row.metrics->quality.recall * row.users;
    ndcg += row.metrics->quality.ndcg * row.users;
    users += row.users;
  }
  EXPECT_EQ(users, r.evaluated_users);
  EXPECT_NEAR(recall / users, r.overall.quality.recall, 1e-12);
  EXPECT_NEAR(ndcg / users, r.overall.quality.ndcg, 1e-12);
}

TEST(EvalReportJson, RoundTrip) {
  SyntheticConfig cfg;
  cfg.num_users = 120;
  cfg.num_items = 90;
  const auto ds = GenerateSynthetic(cfg).dataset;
  auto model = EmbeddingModel::Create(ModelKind::kMF, ds.num_users(),
                                      ds.num_items(), 4);
  model.InitGaussian(0.5, 1);
  const EvalReport r = Evaluate(RankItems(ds, 10, Scorer::FromModel(model)),
                                ds, AssignQuadrants(ds), Correlation::kSpearman);
  const EvalReport back = EvalReportFromJson(ToJson(r));
  EXPECT_EQ(ToJson(back).dump(), ToJson(r).dump());
  EXPECT_EQ(back.correlation, Correlation::kSpearman);
}

TEST(RankItemsTest, ThreadCountDoesNotChangeResult) {
  SyntheticConfig cfg;
  cfg.num_users = 200;
  cfg.num_items = 150;
  const auto ds = GenerateSynthetic(cfg).dataset;
  auto model = EmbeddingModel::Create(ModelKind::kMF, ds.num_users(),
                                      ds.num_items(), 4);
  model.InitGaussian(0.5, 2);
  const Scorer s = Scorer::FromModel(model);
  const auto a = ToJson(Evaluate(RankItems(ds, 20, s, 1), ds, AssignQuadrants(ds)));
  const auto b = ToJson(Evaluate(RankItems(ds, 20, s, 4), ds, AssignQuadrants(ds)));
  EXPECT_EQ(a.dump(), b.dump());
}

}  // namespace
}  // namespace pnrec
