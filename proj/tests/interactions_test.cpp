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

#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pnrec/interactions.hpp"
#include "pnrec/synthetic.hpp"

namespace pnrec {
namespace {

LoadResult FromText(const std::string& train, const std::string& test,
                    IdMode mode = IdMode::kDense) {
  std::istringstream tr(train), te(test);
  return BuildDataset(ParseAdjacency(tr, "train"), ParseAdjacency(te, "test"),
                      mode);
}

// Users 0..3, items A=0, B=1, C=2.
InteractionDataset ToyDataset() {
  return InteractionDataset(4, 3, {{0, 0}, {0, 1}, {1, 0}, {2, 0}, {3, 2}},
                            {});
}

TEST(LoadDataset, DenseReindexingOverBothFiles) {
  const LoadResult r = FromText("0 1 2\n1 2\n", "0 5\n");
  const auto& ds = r.dataset;
  EXPECT_EQ(ds.num_users(), 2);
  EXPECT_EQ(ds.num_items(), 3);  // items {1, 2, 5}
  EXPECT_EQ(ds.user_degree(0), 2);
  EXPECT_EQ(ds.user_degree(1), 1);
  EXPECT_EQ(r.ids.item_external, (std::vector<std::int64_t>{1, 2, 5}));
  ASSERT_EQ(ds.test_items(0).size(), 1u);
  EXPECT_EQ(ds.test_items(0)[0], 2);
}

TEST(LoadDataset, DenseTrainOnlyItemsGiveTwoItems) {
  const LoadResult r = FromText("0 1 2\n1 2\n", "1 1\n");
  EXPECT_EQ(r.dataset.num_items(), 2);
  EXPECT_EQ(r.dataset.user_degrees(), (std::vector<int>{2, 1}));
}

TEST(LoadDataset, RawIdsKeepIndexSpace) {
  const LoadResult r = FromText("0 1 2\n1 2\n", "1 1\n", IdMode::kRaw);
  EXPECT_EQ(r.dataset.num_users(), 2);
  EXPECT_EQ(r.dataset.num_items(), 3);
  EXPECT_EQ(r.dataset.item_degree(0), 0);
  EXPECT_EQ(r.dataset.user_degrees(), (std::vector<int>{2, 1}));
}

TEST(LoadDataset, DuplicateLinesCollapse) {
  const LoadResult r = FromText("0 1\n0 1\n", "0 2\n");
  EXPECT_EQ(r.dataset.num_train(), 1);
  EXPECT_EQ(r.dataset.user_degree(0), 1);
}

TEST(LoadDataset, MalformedTokenReportsLine) {
  std::istringstream in("0 1\n1 x2\n");
  try {
    ParseAdjacency(in, "f.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_NE(std::string(e.what()).find("f.txt:2"), std::string::npos);
  }
}

TEST(LoadDataset, NegativeIdIsParseError) {
  std::istringstream in("0 -1\n");
  EXPECT_THROW(ParseAdjacency(in, "f"), ParseError);
}

TEST(LoadDataset, EmptyFileIsError) {
  std::istringstream in("\n\n");
  EXPECT_THROW(ParseAdjacency(in, "f"), InputError);
}

TEST(LoadDataset, OrphanTestUserWarnsAndKeepsEdge) {
  const LoadResult r = FromText("0 1\n", "7 1\n");
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.dataset.test_edges().size(), 1u);
}

TEST(LoadDataset, TestEdgeDuplicatingTrainIsDropped) {
  const LoadResult r = FromText("0 1 2\n", "0 1 3\n");
  EXPECT_EQ(r.dataset.test_edges().size(), 1u);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(InteractionDatasetTest, RejectsOutOfRangeAndOverlap) {
  EXPECT_THROW(InteractionDataset(1, 1, {{0, 1}}, {}), InputError);
  EXPECT_THROW(InteractionDataset(1, 2, {{0, 1}}, {{0, 1}}), InputError);
}

TEST(InteractionDatasetTest, DegreeSumsAgreeOnRandomData) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const auto ds = oracle::RandomDataset(1 + rep % 9, 1 + rep % 7, 0.4, 0.3,
                                          rng);
    const auto& du = ds.user_degrees();
    const auto& di = ds.item_degrees();
    EXPECT_EQ(std::accumulate(du.begin(), du.end(), std::int64_t{0}),
              ds.num_train());
    EXPECT_EQ(std::accumulate(di.begin(), di.end(), std::int64_t{0}),
              ds.num_train());
    for (int u = 0; u < ds.num_users(); ++u) {
      EXPECT_EQ(static_cast<int>(ds.neighbors(u).size()), du[u]);
      EXPECT_TRUE(std::is_sorted(ds.neighbors(u).begin(),
                                 ds.neighbors(u).end()));
    }
  }
}

TEST(PopPreferenceTest, MeanOfItemDegrees) {
  // N_0 = {a, b} with d_a = 10, d_b = 2.
  std::vector<Edge> train = {{0, 0}, {0, 1}, {1, 1}};
  for (int u = 1; u < 10; ++u) train.push_back({u, 0});
  const InteractionDataset ds(10, 2, train, {});
  EXPECT_DOUBLE_EQ(PopPreference(ds, 0), 6.0);
  const InteractionDataset single(7, 1,
                                  {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0},
                                   {5, 0}, {6, 0}},
                                  {});
  EXPECT_DOUBLE_EQ(PopPreference(single, 0), 7.0);
}

TEST(PopPreferenceTest, ToyDatasetAndZeroDegree) {
  const auto ds = ToyDataset();
  EXPECT_DOUBLE_EQ(PopPreference(ds, 0), 2.0);
  const InteractionDataset with_idle(2, 1, {{0, 0}}, {});
  EXPECT_THROW(PopPreference(with_idle, 1), std::domain_error);
}

TEST(PopPreferenceTest, InvariantUnderItemRelabeling) {
  std::mt19937_64 rng(11);
  const auto ds = oracle::RandomDataset(6, 7, 0.5, 0.0, rng);
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Edge> relabeled;
  for (const Edge& e : ds.train_edges()) relabeled.push_back({e.user, perm[e.item]});
  const InteractionDataset other(6, 7, relabeled, {});
  for (int u = 0; u < 6; ++u) {
    if (ds.user_degree(u) == 0) continue;
    EXPECT_DOUBLE_EQ(PopPreference(ds, u), PopPreference(other, u));
  }
}

TEST(AssignQuadrantsTest, ToyDatasetByHand) {
  // d = [2,1,1,1], mean 1.25; p = [2,3,3,1], mean 2.25.
  const QuadrantAssignment qa = AssignQuadrants(ToyDataset());
  ASSERT_EQ(qa.profiles.size(), 4u);
  EXPECT_DOUBLE_EQ(qa.mean_activity, 1.25);
  EXPECT_DOUBLE_EQ(qa.mean_preference, 2.25);
  EXPECT_EQ(qa.profiles[0].quadrant, Quadrant::kPowerNiche);
  EXPECT_EQ(qa.profiles[1].quadrant, Quadrant::kLightMainstream);
  EXPECT_EQ(qa.profiles[2].quadrant, Quadrant::kLightMainstream);
  EXPECT_EQ(qa.profiles[3].quadrant, Quadrant::kLightNiche);
}

TEST(AssignQuadrantsTest, IdenticalUsersAreLightMainstream) {
  const InteractionDataset ds(3, 3, {{0, 0}, {1, 1}, {2, 2}}, {});
  for (const auto& p : AssignQuadrants(ds).profiles) {
    EXPECT_EQ(p.quadrant, Quadrant::kLightMainstream);
  }
}

TEST(AssignQuadrantsTest, PartitionExcludesIdleUsers) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const auto ds = oracle::RandomDataset(9, 8, 0.3, 0.0, rng);
    if (ds.num_train() == 0) continue;
    const QuadrantAssignment qa = AssignQuadrants(ds);
    const auto counts = qa.Counts();
    int active = 0;
    for (int u = 0; u < ds.num_users(); ++u) active += ds.user_degree(u) > 0;
    EXPECT_EQ(counts[0] + counts[1] + counts[2] + counts[3], active);
    EXPECT_EQ(static_cast<int>(qa.excluded_users.size()),
              ds.num_users() - active);
  }
}

TEST(ActivityCcdfTest, DirectCount) {
  // degrees [1,2,2,5]
  std::vector<Edge> train = {{0, 0}, {1, 0}, {1, 1}, {2, 0}, {2, 1}};
  for (int i = 0; i < 5; ++i) train.push_back({3, i});
  const InteractionDataset ds(4, 5, train, {});
  const std::vector<int> group = {0, 1, 2, 3};
  const auto c = ActivityCcdf(ds, group);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].x, 1);
  EXPECT_DOUBLE_EQ(c[0].frac, 1.0);
  EXPECT_EQ(c[1].x, 2);
  EXPECT_DOUBLE_EQ(c[1].frac, 0.75);
  EXPECT_EQ(c[2].x, 5);
  EXPECT_DOUBLE_EQ(c[2].frac, 0.25);

  const std::vector<int> one = {3};
  const auto single = ActivityCcdf(ds, one);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].x, 5);
  EXPECT_DOUBLE_EQ(single[0].frac, 1.0);
  EXPECT_THROW(ActivityCcdf(ds, std::vector<int>{}), std::invalid_argument);
}

TEST(ActivityCcdfTest, NonIncreasingAndBounded) {
  SyntheticConfig cfg;
  cfg.num_users = 300;
  cfg.num_items = 200;
  const auto data = GenerateSynthetic(cfg);
  const auto qa = AssignQuadrants(data.dataset);
  for (const auto& series : NicheMainstreamCcdfs(data.dataset, qa)) {
    ASSERT_FALSE(series.points.empty());
    EXPECT_DOUBLE_EQ(series.points.front().frac, 1.0);
    for (std::size_t k = 1; k < series.points.size(); ++k) {
      EXPECT_LT(series.points[k - 1].x, series.points[k].x);
      EXPECT_LE(series.points[k].frac, series.points[k - 1].frac);
      EXPECT_GT(series.points[k].frac, 0.0);
    }
  }
}

TEST(ActivityCcdfTest, PlantedPowerNicheUserLiftsNicheTail) {
  // User 0 is the most active and consumes only single-use items.
  std::vector<Edge> train;
  for (int i = 0; i < 6; ++i) train.push_back({0, 10 + i});
  for (int u = 1; u < 6; ++u) {
    train.push_back({u, 0});
    train.push_back({u, 1});
  }
  const InteractionDataset ds(6, 16, train, {});
  const auto qa = AssignQuadrants(ds);
  EXPECT_EQ(qa.profiles[0].quadrant, Quadrant::kPowerNiche);
  const auto series = NicheMainstreamCcdfs(ds, qa);
  ASSERT_EQ(series.size(), 3u);
  const auto& niche = series[1].points;
  const auto& mainstream = series[2].points;
  EXPECT_GE(niche.back().x, mainstream.back().x);
}

TEST(ProfilesCsv, HeaderAndExternalIds) {
  const LoadResult r = FromText("10 5 6\n20 6\n", "10 7\n");
  std::ostringstream out;
  WriteProfilesCsv(out, AssignQuadrants(r.dataset).profiles, r.ids);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "user_id,d_u,p_u,quadrant");
  EXPECT_NE(out.str().find("\n10,2,1.5,"), std::string::npos);
  EXPECT_NE(out.str().find("\n20,1,2,"), std::string::npos);
}

}  // namespace
}  // namespace pnrec
