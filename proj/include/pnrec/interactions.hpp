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
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "pnrec/common.hpp"

namespace pnrec {

// Bipartite binary interaction data with a fixed train/test split.
// Immutable after construction; neighbor lists are sorted by item index.
class InteractionDataset {
 public:
  InteractionDataset() = default;

  // Duplicate edges within a split are collapsed. Throws InputError when an
  // edge is out of range or an edge appears in both splits.
  InteractionDataset(int num_users, int num_items, std::vector<Edge> train,
                     std::vector<Edge> test)
      : num_users_(num_users), num_items_(num_items) {
    if (num_users < 0 || num_items < 0) {
      throw InputError("negative dataset dimensions");
    }
    Normalize(train, "train");
    Normalize(test, "test");
    {
      std::vector<Edge> common;
      std::set_intersection(train.begin(), train.end(), test.begin(),
                            test.end(), std::back_inserter(common));
      if (!common.empty()) {
        throw InputError(fmt::format(
            "{} edges appear in both train and test (first: user {} item {})",
            common.size(), common.front().user, common.front().item));
      }
    }
    BuildCsr(train, train_offsets_, train_items_);
    BuildCsr(test, test_offsets_, test_items_);
    user_degree_.assign(num_users_, 0);
    item_degree_.assign(num_items_, 0);
    for (const Edge& e : train) {
      ++user_degree_[e.user];
      ++item_degree_[e.item];
    }
    train_edges_ = std::move(train);
    test_edges_ = std::move(test);
  }

  int num_users() const { return num_users_; }
  int num_items() const { return num_items_; }
  std::int64_t num_train() const {
    return static_cast<std::int64_t>(train_edges_.size());
  }

  const std::vector<Edge>& train_edges() const { return train_edges_; }
  const std::vector<Edge>& test_edges() const { return test_edges_; }

  // N_u, sorted ascending.
  std::span<const int> neighbors(int user) const {
    return {train_items_.data() + train_offsets_[user],
            train_items_.data() + train_offsets_[user + 1]};
  }
  std::span<const int> test_items(int user) const {
    return {test_items_.data() + test_offsets_[user],
            test_items_.data() + test_offsets_[user + 1]};
  }

  bool HasTrainEdge(int user, int item) const {
    const auto n = neighbors(user);
    return std::binary_search(n.begin(), n.end(), item);
  }

  int user_degree(int user) const { return user_degree_[user]; }
  int item_degree(int item) const { return item_degree_[item]; }
  const std::vector<int>& user_degrees() const { return user_degree_; }
  const std::vector<int>& item_degrees() const { return item_degree_; }

 private:
  void Normalize(std::vector<Edge>& edges, const char* split) const {
    for (const Edge& e : edges) {
      if (e.user < 0 || e.user >= num_users_ || e.item < 0 ||
          e.item >= num_items_) {
        throw InputError(fmt::format(
            "{} edge (user {}, item {}) outside {} users x {} items", split,
            e.user, e.item, num_users_, num_items_));
      }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }

  void BuildCsr(const std::vector<Edge>& sorted_edges,
                std::vector<std::int64_t>& offsets,
                std::vector<int>& items) const {
    offsets.assign(num_users_ + 1, 0);
    for (const Edge& e : sorted_edges) ++offsets[e.user + 1];
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    items.resize(sorted_edges.size());
    for (std::size_t k = 0; k < sorted_edges.size(); ++k) {
      items[k] = sorted_edges[k].item;
    }
  }

  int num_users_ = 0;
  int num_items_ = 0;
  std::vector<Edge> train_edges_;
  std::vector<Edge> test_edges_;
  std::vector<std::int64_t> train_offsets_{0};
  std::vector<int> train_items_;
  std::vector<std::int64_t> test_offsets_{0};
  std::vector<int> test_items_;
  std::vector<int> user_degree_;
  std::vector<int> item_degree_;
};

// ---------------------------------------------------------------------------
// Loading

enum class IdMode {
  kDense,  // external ids remapped to 0..n-1 in ascending external order
  kRaw,    // external id used as index; n = max id + 1
};

struct IdMap {
  std::vector<std::int64_t> user_external;
  std::vector<std::int64_t> item_external;
};

struct AdjacencyLine {
  std::int64_t user = 0;
  std::vector<std::int64_t> items;
};

struct LoadResult {
  InteractionDataset dataset;
  IdMap ids;
  std::vector<std::string> warnings;
};

// Parses "user item item ..." lines. Blank lines are skipped.
inline std::vector<AdjacencyLine> ParseAdjacency(std::istream& in,
                                                 const std::string& source) {
  std::vector<AdjacencyLine> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    AdjacencyLine parsed;
    bool first = true;
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) {
        ++pos;
      }
      if (pos >= line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && line[end] != ' ' && line[end] != '\t') {
        ++end;
      }
      const std::string_view token(line.data() + pos, end - pos);
      std::uint64_t value = 0;
      const auto [ptr, ec] =
          std::from_chars(token.data(), token.data() + token.size(), value);
      if (ec != std::errc() || ptr != token.data() + token.size() ||
          value > static_cast<std::uint64_t>(INT32_MAX)) {
        throw ParseError(source, line_no,
                         fmt::format("expected a nonnegative integer id, got "
                                     "'{}'",
                                     token));
      }
      if (first) {
        parsed.user = static_cast<std::int64_t>(value);
        first = false;
      } else {
        parsed.items.push_back(static_cast<std::int64_t>(value));
      }
      pos = end;
    }
    if (!first) lines.push_back(std::move(parsed));
  }
  if (lines.empty()) throw InputError(source + ": file is empty");
  return lines;
}

namespace internal {

inline std::vector<std::int64_t> SortedUnique(std::vector<std::int64_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline int LookupDense(const std::vector<std::int64_t>& table,
                       std::int64_t id) {
  return static_cast<int>(std::lower_bound(table.begin(), table.end(), id) -
                          table.begin());
}

}  // namespace internal

// Builds a dataset from already-parsed adjacency lines of both splits.
inline LoadResult BuildDataset(const std::vector<AdjacencyLine>& train_lines,
                               const std::vector<AdjacencyLine>& test_lines,
                               IdMode mode = IdMode::kDense) {
  LoadResult result;
  std::vector<std::int64_t> users, items;
  for (const auto* lines : {&train_lines, &test_lines}) {
    for (const auto& l : *lines) {
      users.push_back(l.user);
      items.insert(items.end(), l.items.begin(), l.items.end());
    }
  }
  users = internal::SortedUnique(std::move(users));
  items = internal::SortedUnique(std::move(items));

  int n = 0, m = 0;
  if (mode == IdMode::kDense) {
    n = static_cast<int>(users.size());
    m = static_cast<int>(items.size());
    result.ids.user_external = users;
    result.ids.item_external = items;
  } else {
    n = users.empty() ? 0 : static_cast<int>(users.back() + 1);
    m = items.empty() ? 0 : static_cast<int>(items.back() + 1);
    result.ids.user_external.resize(n);
    result.ids.item_external.resize(m);
    std::iota(result.ids.user_external.begin(), result.ids.user_external.end(),
              0);
    std::iota(result.ids.item_external.begin(), result.ids.item_external.end(),
              0);
  }
  auto user_index = [&](std::int64_t id) {
    return mode == IdMode::kDense ? internal::LookupDense(users, id)
                                  : static_cast<int>(id);
  };
  auto item_index = [&](std::int64_t id) {
    return mode == IdMode::kDense ? internal::LookupDense(items, id)
                                  : static_cast<int>(id);
  };

  std::vector<Edge> train, test;
  std::vector<char> in_train(n, 0);
  for (const auto& l : train_lines) {
    const int u = user_index(l.user);
    for (auto i : l.items) {
      train.push_back({u, item_index(i)});
      in_train[u] = 1;
    }
  }
  std::sort(train.begin(), train.end());
  train.erase(std::unique(train.begin(), train.end()), train.end());

  std::int64_t orphan_edges = 0, overlap_edges = 0;
  for (const auto& l : test_lines) {
    const int u = user_index(l.user);
    for (auto i : l.items) {
      const Edge e{u, item_index(i)};
      if (std::binary_search(train.begin(), train.end(), e)) {
        ++overlap_edges;
        continue;
      }
      if (!in_train[u]) ++orphan_edges;
      test.push_back(e);
    }
  }
  if (orphan_edges > 0) {
    result.warnings.push_back(fmt::format(
        "{} test edges belong to users with no train interactions (kept)",
        orphan_edges));
  }
  if (overlap_edges > 0) {
    result.warnings.push_back(fmt::format(
        "{} test edges duplicate train edges (dropped from test)",
        overlap_edges));
  }
  result.dataset =
      InteractionDataset(n, m, std::move(train), std::move(test));
  return result;
}

inline LoadResult LoadDataset(const std::string& train_path,
                              const std::string& test_path,
                              IdMode mode = IdMode::kDense) {
  auto parse_file = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    return ParseAdjacency(in, path);
  };
  return BuildDataset(parse_file(train_path), parse_file(test_path), mode);
}

inline void WriteIdMap(std::ostream& out,
                       const std::vector<std::int64_t>& external) {
  out << "index,external_id\n";
  for (std::size_t k = 0; k < external.size(); ++k) {
    out << k << ',' << external[k] << '\n';
  }
}

// ---------------------------------------------------------------------------
// User profiles

enum class Quadrant {
  kPowerMainstream = 0,
  kPowerNiche = 1,
  kLightMainstream = 2,
  kLightNiche = 3,
};

inline constexpr std::array<Quadrant, 4> kAllQuadrants = {
    Quadrant::kPowerMainstream, Quadrant::kPowerNiche,
    Quadrant::kLightMainstream, Quadrant::kLightNiche};

inline const char* QuadrantName(Quadrant q) {
  switch (q) {
    case Quadrant::kPowerMainstream: return "power_mainstream";
    case Quadrant::kPowerNiche: return "power_niche";
    case Quadrant::kLightMainstream: return "light_mainstream";
    case Quadrant::kLightNiche: return "light_niche";
  }
  return "unknown";
}

inline bool IsPower(Quadrant q) {
  return q == Quadrant::kPowerMainstream || q == Quadrant::kPowerNiche;
}
inline bool IsNiche(Quadrant q) {
  return q == Quadrant::kPowerNiche || q == Quadrant::kLightNiche;
}

struct UserProfile {
  int user = 0;
  int activity = 0;            // d_u
  double pop_preference = 0;   // p_u
  Quadrant quadrant = Quadrant::kLightMainstream;
};

// Mean train degree of the items in N_u. Throws std::domain_error if the
// user has no train interactions.
inline double PopPreference(const InteractionDataset& ds, int user) {
  const auto items = ds.neighbors(user);
  if (items.empty()) {
    throw std::domain_error(
        fmt::format("user {} has no train interactions; item-popularity "
                    "preference undefined",
                    user));
  }
  std::int64_t sum = 0;
  for (int i : items) sum += ds.item_degree(i);
  return static_cast<double>(sum) / static_cast<double>(items.size());
}

inline Quadrant ClassifyUser(double activity, double preference,
                             double mean_activity, double mean_preference) {
  // Equality with the mean is neither above (power) nor below (niche).
  const bool power = activity > mean_activity;
  const bool niche = preference < mean_preference;
  if (power) return niche ? Quadrant::kPowerNiche : Quadrant::kPowerMainstream;
  return niche ? Quadrant::kLightNiche : Quadrant::kLightMainstream;
}

struct QuadrantAssignment {
  std::vector<UserProfile> profiles;  // users with d_u >= 1, ascending index
  std::vector<int> excluded_users;    // d_u == 0
  double mean_activity = 0;
  double mean_preference = 0;

  std::array<int, 4> Counts() const {
    std::array<int, 4> counts{};
    for (const auto& p : profiles) ++counts[static_cast<int>(p.quadrant)];
    return counts;
  }
};

// Splits users at the mean activity and mean preference. Means are taken
// over users with at least one train interaction.
inline QuadrantAssignment AssignQuadrants(const InteractionDataset& ds) {
  QuadrantAssignment out;
  for (int u = 0; u < ds.num_users(); ++u) {
    if (ds.user_degree(u) == 0) {
      out.excluded_users.push_back(u);
      continue;
    }
    out.profiles.push_back(
        {u, ds.user_degree(u), PopPreference(ds, u), Quadrant{}});
  }
  if (out.profiles.empty()) {
    throw InputError("no user has a train interaction");
  }
  double sum_activity = 0, sum_preference = 0;
  for (const auto& p : out.profiles) {
    sum_activity += p.activity;
    sum_preference += p.pop_preference;
  }
  const double count = static_cast<double>(out.profiles.size());
  out.mean_activity = sum_activity / count;
  out.mean_preference = sum_preference / count;
  for (auto& p : out.profiles) {
    p.quadrant = ClassifyUser(p.activity, p.pop_preference, out.mean_activity,
                              out.mean_preference);
  }
  return out;
}

// Per-user quadrant lookup; users without a profile map to -1.
inline std::vector<int> QuadrantIndexByUser(const InteractionDataset& ds,
                                            const QuadrantAssignment& qa) {
  std::vector<int> by_user(ds.num_users(), -1);
  for (const auto& p : qa.profiles) {
    by_user[p.user] = static_cast<int>(p.quadrant);
  }
  return by_user;
}

struct CcdfPoint {
  int x = 0;
  double frac = 0;
};

// P(d_u >= x) over the group, at every distinct activity value.
inline std::vector<CcdfPoint> ActivityCcdf(const InteractionDataset& ds,
                                           std::span<const int> group) {
  if (group.empty()) throw std::invalid_argument("CCDF of an empty group");
  std::vector<int> degrees;
  degrees.reserve(group.size());
  for (int u : group) degrees.push_back(ds.user_degree(u));
  std::sort(degrees.begin(), degrees.end());
  std::vector<CcdfPoint> points;
  const double total = static_cast<double>(degrees.size());
  for (std::size_t k = 0; k < degrees.size(); ++k) {
    if (k > 0 && degrees[k] == degrees[k - 1]) continue;
    points.push_back(
        {degrees[k], static_cast<double>(degrees.size() - k) / total});
  }
  return points;
}

inline void WriteProfilesCsv(std::ostream& out,
                             const std::vector<UserProfile>& profiles,
                             const IdMap& ids) {
  out << "user_id,d_u,p_u,quadrant\n";
  for (const auto& p : profiles) {
    out << fmt::format("{},{},{:.10g},{}\n", ids.user_external[p.user],
                       p.activity, p.pop_preference, QuadrantName(p.quadrant));
  }
}

struct CcdfSeries {
  std::string group;
  std::vector<CcdfPoint> points;
};

// Activity CCDFs for all profiled users and the niche / mainstream split.
inline std::vector<CcdfSeries> NicheMainstreamCcdfs(
    const InteractionDataset& ds, const QuadrantAssignment& qa) {
  std::vector<int> all, niche, mainstream;
  for (const auto& p : qa.profiles) {
    all.push_back(p.user);
    (IsNiche(p.quadrant) ? niche : mainstream).push_back(p.user);
  }
  std::vector<CcdfSeries> series;
  series.push_back({"all", ActivityCcdf(ds, all)});
  if (!niche.empty()) series.push_back({"niche", ActivityCcdf(ds, niche)});
  if (!mainstream.empty()) {
    series.push_back({"mainstream", ActivityCcdf(ds, mainstream)});
  }
  return series;
}

inline void WriteCcdfCsv(std::ostream& out,
                         const std::vector<CcdfSeries>& series) {
  out << "group,x,frac\n";
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      out << fmt::format("{},{},{:.10g}\n", s.group, p.x, p.frac);
    }
  }
}

}  // namespace pnrec
