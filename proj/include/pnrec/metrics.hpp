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
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pnrec/common.hpp"
#include "pnrec/interactions.hpp"
#include "pnrec/nullmodel.hpp"
#include "pnrec/recmodels.hpp"

namespace pnrec {

struct UserRanking {
  int user = 0;
  int rankable = 0;           // M_u: items not in the user's train set
  std::vector<int> top_k;     // best first
  // (test item, 1-based position among rankable items)
  std::vector<std::pair<int, int>> test_positions;
};

struct RankingResult {
  int k = 20;
  std::vector<UserRanking> users;  // ascending user index
  int excluded_no_test = 0;
  int excluded_no_train = 0;
};

// Ranks all non-train items for every user with at least one test item and
// one train item. score_row(u, span<double>) fills the scores of all items.
// Order: score descending, then item index ascending.
template <class ScoreRowFn>
  requires std::invocable<ScoreRowFn&, int, std::span<double>>
RankingResult RankItems(const InteractionDataset& ds, int k,
                        ScoreRowFn&& score_row, int threads = 1) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  RankingResult rr;
  rr.k = k;
  std::vector<int> users;
  for (int u = 0; u < ds.num_users(); ++u) {
    if (ds.test_items(u).empty()) {
      ++rr.excluded_no_test;
    } else if (ds.user_degree(u) == 0) {
      ++rr.excluded_no_train;
    } else {
      users.push_back(u);
    }
  }
  rr.users.resize(users.size());
  const int m = ds.num_items();
  internal::ParallelFor(
      static_cast<int>(users.size()), threads, [&](int slot) {
        const int u = users[slot];
        std::vector<double> scores(m);
        score_row(u, std::span<double>(scores));
        const auto train = ds.neighbors(u);
        std::vector<int> candidates;
        candidates.reserve(m - train.size());
        for (int i = 0, t = 0; i < m; ++i) {
          if (t < static_cast<int>(train.size()) && train[t] == i) {
            ++t;
            continue;
          }
          candidates.push_back(i);
        }
        auto better = [&](int a, int b) {
          return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
        };
        UserRanking& out = rr.users[slot];
        out.user = u;
        out.rankable = static_cast<int>(candidates.size());
        for (int item : ds.test_items(u)) {
          int ahead = 0;
          for (int j : candidates) ahead += better(j, item) ? 1 : 0;
          out.test_positions.emplace_back(item, ahead + 1);
        }
        const auto top =
            std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(k));
        std::partial_sort(candidates.begin(), candidates.begin() + top,
                          candidates.end(), better);
        out.top_k.assign(candidates.begin(), candidates.begin() + top);
      });
  return rr;
}

inline RankingResult RankItems(const InteractionDataset& ds, int k,
                               const Scorer& scorer, int threads = 1) {
  return RankItems(
      ds, k,
      [&scorer](int u, std::span<double> out) { scorer.ScoreRow(u, out); },
      threads);
}

template <class Pred>
RankingResult FilterUsers(const RankingResult& rr, Pred&& keep) {
  RankingResult out;
  out.k = rr.k;
  for (const auto& ur : rr.users) {
    if (keep(ur.user)) out.users.push_back(ur);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accuracy

struct RankingQuality {
  double recall = 0;
  double precision = 0;
  double ndcg = 0;
  int users = 0;
};

// Means over ranked users of |hits|/|test|, |hits|/k and DCG@k / IDCG@k with
// binary gains and 1/log2(pos + 1) discounts.
inline RankingQuality RecallPrecisionNdcg(const RankingResult& rr) {
  RankingQuality q;
  double recall = 0, precision = 0, ndcg = 0;
  for (const auto& ur : rr.users) {
    if (ur.test_positions.empty()) continue;
    int hits = 0;
    double dcg = 0;
    for (const auto& [item, pos] : ur.test_positions) {
      if (pos <= rr.k) {
        ++hits;
        dcg += 1.0 / std::log2(pos + 1.0);
      }
    }
    const int ideal = std::min<int>(rr.k, ur.test_positions.size());
    double idcg = 0;
    for (int p = 1; p <= ideal; ++p) idcg += 1.0 / std::log2(p + 1.0);
    recall += static_cast<double>(hits) / ur.test_positions.size();
    precision += static_cast<double>(hits) / rr.k;
    ndcg += dcg / idcg;
    ++q.users;
  }
  if (q.users > 0) {
    q.recall = recall / q.users;
    q.precision = precision / q.users;
    q.ndcg = ndcg / q.users;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Popularity-opportunity bias

enum class Correlation { kPearson, kSpearman };

inline const char* CorrelationName(Correlation c) {
  return c == Correlation::kPearson ? "pearson" : "spearman";
}

inline Correlation ParseCorrelation(const std::string& s) {
  if (s == "pearson") return Correlation::kPearson;
  if (s == "spearman") return Correlation::kSpearman;
  throw InputError("unknown correlation '" + s + "'");
}

struct BiasResult {
  double value = 0;
  bool degenerate = false;
  int items = 0;  // items with at least one ranked test interaction
};

namespace internal {

// Pearson correlation; nullopt when either coordinate has zero variance.
inline std::optional<double> Pearson(std::span<const double> x,
                                     std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// 1-based ranks, ties get their average rank.
inline std::vector<double> AverageRanks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi + 1 < order.size() && v[order[hi + 1]] == v[order[lo]]) ++hi;
    const double avg = 0.5 * static_cast<double>(lo + hi) + 1.0;
    for (std::size_t k = lo; k <= hi; ++k) ranks[order[k]] = avg;
    lo = hi + 1;
  }
  return ranks;
}

// Values within tol of the smallest member of their run (in sorted order)
// are set to that member, so rounding noise cannot split exact ties.
inline void MergeNearTies(std::vector<double>& v, double tol) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  for (std::size_t lo = 0; lo < order.size();) {
    const double anchor = v[order[lo]];
    std::size_t hi = lo + 1;
    while (hi < order.size() && v[order[hi]] - anchor <= tol) {
      v[order[hi]] = anchor;
      ++hi;
    }
    lo = hi;
  }
}

}  // namespace internal

// Mean qualities closer than this are treated as equal.
inline constexpr double kQualityTieTolerance = 1e-12;

// Correlation between an item's train popularity d_i and how well it is
// placed for its test users: q_i = mean over test users of
// 1 - (pos - 1) / (M_u - 1). Positive means popular items are ranked higher.
inline BiasResult PopularityOpportunityBias(
    const RankingResult& rr, const InteractionDataset& ds,
    Correlation corr = Correlation::kPearson) {
  std::vector<double> quality_sum(ds.num_items(), 0.0);
  std::vector<int> quality_count(ds.num_items(), 0);
  for (const auto& ur : rr.users) {
    for (const auto& [item, pos] : ur.test_positions) {
      const double q =
          ur.rankable > 1
              ? 1.0 - static_cast<double>(pos - 1) / (ur.rankable - 1)
              : 1.0;
      quality_sum[item] += q;
      ++quality_count[item];
    }
  }
  std::vector<double> popularity, quality;
  for (int i = 0; i < ds.num_items(); ++i) {
    if (quality_count[i] == 0) continue;
    popularity.push_back(ds.item_degree(i));
    quality.push_back(quality_sum[i] / quality_count[i]);
  }
  internal::MergeNearTies(quality, kQualityTieTolerance);
  BiasResult out;
  out.items = static_cast<int>(popularity.size());
  std::optional<double> r;
  if (corr == Correlation::kPearson) {
    r = internal::Pearson(popularity, quality);
  } else {
    const auto rp = internal::AverageRanks(popularity);
    const auto rq = internal::AverageRanks(quality);
    r = internal::Pearson(rp, rq);
  }
  if (r) {
    out.value = *r;
  } else {
    out.degenerate = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
  RankingQuality quality;
  BiasResult bias;
};

struct QuadrantRow {
  Quadrant quadrant = Quadrant::kPowerMainstream;
  int users = 0;
  std::optional<MetricRow> metrics;  // empty quadrant -> nullopt
};

struct EvalReport {
  int k = 20;
  Correlation correlation = Correlation::kPearson;
  MetricRow overall;
  std::array<QuadrantRow, 4> quadrants;
  int evaluated_users = 0;
  int excluded_users = 0;
};

inline MetricRow ComputeMetrics(const RankingResult& rr,
                                const InteractionDataset& ds,
                                Correlation corr) {
  return {RecallPrecisionNdcg(rr), PopularityOpportunityBias(rr, ds, corr)};
}

// Every metric recomputed on the users of one quadrant (bias uses only that
// quadrant's test interactions).
inline std::array<QuadrantRow, 4> Disaggregate(const RankingResult& rr,
                                               const InteractionDataset& ds,
                                               const QuadrantAssignment& qa,
                                               Correlation corr) {
  const std::vector<int> by_user = QuadrantIndexByUser(ds, qa);
  for (const auto& ur : rr.users) {
    if (by_user[ur.user] < 0) {
      throw std::invalid_argument("ranked user without a quadrant profile");
    }
  }
  std::array<QuadrantRow, 4> rows;
  for (Quadrant q : kAllQuadrants) {
    const int qi = static_cast<int>(q);
    const RankingResult part =
        FilterUsers(rr, [&](int u) { return by_user[u] == qi; });
    rows[qi].quadrant = q;
    rows[qi].users = static_cast<int>(part.users.size());
    if (!part.users.empty()) rows[qi].metrics = ComputeMetrics(part, ds, corr);
  }
  return rows;
}

inline EvalReport Evaluate(const RankingResult& rr,
                           const InteractionDataset& ds,
                           const QuadrantAssignment& qa,
                           Correlation corr = Correlation::kPearson) {
  EvalReport report;
  report.k = rr.k;
  report.correlation = corr;
  report.overall = ComputeMetrics(rr, ds, corr);
  report.quadrants = Disaggregate(rr, ds, qa, corr);
  report.evaluated_users = static_cast<int>(rr.users.size());
  report.excluded_users = rr.excluded_no_test + rr.excluded_no_train;
  return report;
}

inline nlohmann::json ToJson(const MetricRow& row) {
  return {{"recall", row.quality.recall},
          {"precision", row.quality.precision},
          {"ndcg", row.quality.ndcg},
          {"bias", row.bias.value},
          {"bias_degenerate", row.bias.degenerate},
          {"bias_items", row.bias.items},
          {"users", row.quality.users}};
}

inline MetricRow MetricRowFromJson(const nlohmann::json& j) {
  MetricRow row;
  row.quality.recall = j.at("recall").get<double>();
  row.quality.precision = j.at("precision").get<double>();
  row.quality.ndcg = j.at("ndcg").get<double>();
  row.quality.users = j.at("users").get<int>();
  row.bias.value = j.at("bias").get<double>();
  row.bias.degenerate = j.at("bias_degenerate").get<bool>();
  row.bias.items = j.at("bias_items").get<int>();
  return row;
}

inline nlohmann::json ToJson(const EvalReport& r) {
  nlohmann::json quadrants = nlohmann::json::object();
  for (const auto& row : r.quadrants) {
    quadrants[QuadrantName(row.quadrant)] =
        row.metrics ? ToJson(*row.metrics) : nlohmann::json(nullptr);
  }
  return {{"k", r.k},
          {"correlation", CorrelationName(r.correlation)},
          {"overall", ToJson(r.overall)},
          {"quadrants", quadrants},
          {"evaluated_users", r.evaluated_users},
          {"excluded_users", r.excluded_users}};
}

inline EvalReport EvalReportFromJson(const nlohmann::json& j) {
  EvalReport r;
  r.k = j.at("k").get<int>();
  r.correlation = ParseCorrelation(j.at("correlation").get<std::string>());
  r.overall = MetricRowFromJson(j.at("overall"));
  for (Quadrant q : kAllQuadrants) {
    auto& row = r.quadrants[static_cast<int>(q)];
    row.quadrant = q;
    const auto& entry = j.at("quadrants").at(QuadrantName(q));
    if (!entry.is_null()) {
      row.metrics = MetricRowFromJson(entry);
      row.users = row.metrics->quality.users;
    }
  }
  r.evaluated_users = j.at("evaluated_users").get<int>();
  r.excluded_users = j.at("excluded_users").get<int>();
  return r;
}

}  // namespace pnrec
