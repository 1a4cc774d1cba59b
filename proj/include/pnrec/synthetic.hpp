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
//
// Popularity-skewed synthetic implicit-feedback data with a planted cohort
// of high-activity users who mostly consume unpopular items.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "pnrec/common.hpp"
#include "pnrec/interactions.hpp"

namespace pnrec {

struct SyntheticConfig {
  int num_users = 2000;
  int num_items = 1000;
  double zipf_exponent = 1.0;   // item weight ~ rank^-s
  int topics = 10;              // items and users each get one topic
  double topic_affinity = 0.5;  // P(draw from own topic) for regular users
  double uniform_mix = 0.0;     // P(draw uniformly over all items)
  double activity_mu = 2.7;     // log-normal activity of regular users
  double activity_sigma = 0.5;
  int min_activity = 4;
  double cohort_fraction = 0.1;
  double cohort_activity_factor = 3.0;
  double cohort_niche_prob = 0.8;  // P(draw from bottom-quartile items)
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  InteractionDataset dataset;
  std::vector<int> cohort;       // planted users, ascending
  std::vector<double> weight;    // item sampling weight
  std::vector<int> niche_items;  // bottom quartile by weight
};

inline SyntheticData GenerateSynthetic(const SyntheticConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const int n = cfg.num_users, m = cfg.num_items;
  SyntheticData out;

  std::vector<int> rank(m);
  std::iota(rank.begin(), rank.end(), 1);
  std::shuffle(rank.begin(), rank.end(), rng);
  out.weight.resize(m);
  for (int i = 0; i < m; ++i) {
    out.weight[i] = std::pow(static_cast<double>(rank[i]), -cfg.zipf_exponent);
  }
  const int topics = std::max(1, cfg.topics);
  std::uniform_int_distribution<int> any_topic(0, topics - 1);
  std::vector<int> item_topic(m);
  std::vector<std::vector<int>> topic_items(topics), topic_niche(topics);
  const int quartile_rank = m - m / 4;
  for (int i = 0; i < m; ++i) {
    item_topic[i] = any_topic(rng);
    topic_items[item_topic[i]].push_back(i);
    if (rank[i] > quartile_rank) {
      out.niche_items.push_back(i);
      topic_niche[item_topic[i]].push_back(i);
    }
  }
  auto weighted = [&](const std::vector<int>& items) {
    std::vector<double> w;
    for (int i : items) w.push_back(out.weight[i]);
    return std::discrete_distribution<int>(w.begin(), w.end());
  };
  auto all_items = [&] {
    std::vector<int> v(m);
    std::iota(v.begin(), v.end(), 0);
    return v;
  }();
  auto popular_any = weighted(all_items);
  std::vector<std::discrete_distribution<int>> popular_in_topic;
  for (int t = 0; t < topics; ++t) {
    popular_in_topic.push_back(weighted(topic_items[t]));
  }

  std::vector<char> in_cohort(n, 0);
  {
    std::vector<int> users(n);
    std::iota(users.begin(), users.end(), 0);
    std::shuffle(users.begin(), users.end(), rng);
    const int cohort_size =
        static_cast<int>(std::lround(cfg.cohort_fraction * n));
    for (int k = 0; k < cohort_size; ++k) in_cohort[users[k]] = 1;
    for (int u = 0; u < n; ++u) {
      if (in_cohort[u]) out.cohort.push_back(u);
    }
  }

  std::lognormal_distribution<double> activity(cfg.activity_mu,
                                               cfg.activity_sigma);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_any(0, m - 1);
  std::vector<Edge> train, test;
  std::vector<char> taken(m, 0);
  for (int u = 0; u < n; ++u) {
    double a = activity(rng);
    if (in_cohort[u]) a *= cfg.cohort_activity_factor;
    const int degree = std::clamp(static_cast<int>(std::lround(a)),
                                  cfg.min_activity, m / 2);
    const int topic = any_topic(rng);
    const auto& niche_pool =
        topic_niche[topic].empty() ? out.niche_items : topic_niche[topic];
    std::uniform_int_distribution<std::size_t> pick_niche(
        0, niche_pool.size() - 1);
    std::vector<int> items;
    std::int64_t attempts = 0;
    while (static_cast<int>(items.size()) < degree && attempts < 100LL * m) {
      ++attempts;
      int i = 0;
      if (unit(rng) < cfg.uniform_mix) {
        i = pick_any(rng);
      } else if (in_cohort[u] && unit(rng) < cfg.cohort_niche_prob) {
        i = niche_pool[pick_niche(rng)];
      } else if (unit(rng) < cfg.topic_affinity) {
        i = topic_items[topic][popular_in_topic[topic](rng)];
      } else {
        i = popular_any(rng);
      }
      if (taken[i]) continue;
      taken[i] = 1;
      items.push_back(i);
    }
    for (int i : items) taken[i] = 0;
    std::shuffle(items.begin(), items.end(), rng);
    int held = static_cast<int>(std::lround(cfg.test_fraction * items.size()));
    held = std::min<int>(held, static_cast<int>(items.size()) - 1);
    for (int k = 0; k < static_cast<int>(items.size()); ++k) {
      (k < held ? test : train).push_back({u, items[k]});
    }
  }
  out.dataset = InteractionDataset(n, m, std::move(train), std::move(test));
  return out;
}

// Writes one split in the "user item item ..." adjacency layout. Users
// without interactions in the split are omitted.
inline void WriteAdjacency(std::ostream& out, const InteractionDataset& ds,
                           bool test_split) {
  for (int u = 0; u < ds.num_users(); ++u) {
    const auto items = test_split ? ds.test_items(u) : ds.neighbors(u);
    if (items.empty()) continue;
    out << u;
    for (int i : items) out << ' ' << i;
    out << '\n';
  }
}

}  // namespace pnrec
