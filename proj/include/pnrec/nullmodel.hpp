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
// Bipartite configuration-model null ensemble sampled by degree-preserving
// double-edge swaps, and per-cell comparison of observed user counts against
// the ensemble.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <fmt/format.h>

#include "pnrec/common.hpp"
#include "pnrec/interactions.hpp"

namespace pnrec {

struct RewiredEdgeSet {
  std::vector<Edge> edges;  // sorted
  std::int64_t swap_attempts = 0;
  std::int64_t swap_accepts = 0;
};

namespace internal {

// Membership structure for the current edge set. Dense bitmap for small
// graphs, hash set otherwise.
class EdgeIndex {
 public:
  static constexpr std::int64_t kMaxDenseBits = std::int64_t{1} << 28;

  EdgeIndex(int num_users, int num_items, std::span<const Edge> edges)
      : num_items_(num_items) {
    const std::int64_t cells =
        static_cast<std::int64_t>(num_users) * num_items;
    dense_ = cells <= kMaxDenseBits;
    if (dense_) {
      bits_.assign(static_cast<std::size_t>((cells + 63) / 64), 0);
    } else {
      set_.reserve(edges.size() * 2);
    }
    for (const Edge& e : edges) Insert(e);
  }

  bool Contains(int user, int item) const {
    const std::uint64_t k = Key(user, item);
    if (dense_) return (bits_[k >> 6] >> (k & 63)) & 1ULL;
    return set_.count(k) != 0;
  }
  void Insert(const Edge& e) {
    const std::uint64_t k = Key(e.user, e.item);
    if (dense_) {
      bits_[k >> 6] |= (1ULL << (k & 63));
    } else {
      set_.insert(k);
    }
  }
  void Erase(const Edge& e) {
    const std::uint64_t k = Key(e.user, e.item);
    if (dense_) {
      bits_[k >> 6] &= ~(1ULL << (k & 63));
    } else {
      set_.erase(k);
    }
  }

 private:
  std::uint64_t Key(int user, int item) const {
    return static_cast<std::uint64_t>(user) * num_items_ + item;
  }

  int num_items_;
  bool dense_;
  std::vector<std::uint64_t> bits_;
  std::unordered_set<std::uint64_t> set_;
};

}  // namespace internal

// Performs up to `swaps` accepted double-edge swaps on a copy of `edges`:
// (u1,v1),(u2,v2) -> (u1,v2),(u2,v1). Proposals that are no-ops or would
// duplicate an existing edge are rejected. Stops early after `max_attempts`
// proposals (default 100 * swaps + 1000) so graphs without admissible swaps
// terminate; compare swap_accepts with `swaps` to detect this.
inline RewiredEdgeSet Rewire(int num_users, int num_items,
                             std::span<const Edge> edges, std::int64_t swaps,
                             std::uint64_t seed,
                             std::int64_t max_attempts = -1) {
  RewiredEdgeSet out;
  out.edges.assign(edges.begin(), edges.end());
  if (max_attempts < 0) max_attempts = 100 * swaps + 1000;
  const std::size_t count = out.edges.size();
  if (count >= 2 && swaps > 0) {
    internal::EdgeIndex index(num_users, num_items, out.edges);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    auto& e = out.edges;
    while (out.swap_accepts < swaps && out.swap_attempts < max_attempts) {
      ++out.swap_attempts;
      const std::size_t a = pick(rng);
      const std::size_t b = pick(rng);
      if (a == b) continue;
      const Edge e1 = e[a], e2 = e[b];
      if (e1.user == e2.user || e1.item == e2.item) continue;
      if (index.Contains(e1.user, e2.item) ||
          index.Contains(e2.user, e1.item)) {
        continue;
      }
      index.Erase(e1);
      index.Erase(e2);
      e[a] = {e1.user, e2.item};
      e[b] = {e2.user, e1.item};
      index.Insert(e[a]);
      index.Insert(e[b]);
      ++out.swap_accepts;
    }
  }
  std::sort(out.edges.begin(), out.edges.end());
  return out;
}

inline RewiredEdgeSet Rewire(const InteractionDataset& ds, std::int64_t swaps,
                             std::uint64_t seed,
                             std::int64_t max_attempts = -1) {
  return Rewire(ds.num_users(), ds.num_items(), ds.train_edges(), swaps, seed,
                max_attempts);
}

// Independent null samples, each with swap_multiplier * E accepted swaps
// applied to a fresh copy of the train edges. Sample s uses sub-seed
// DeriveSeed(seed, s), so output does not depend on `threads`.
inline std::vector<RewiredEdgeSet> SampleNull(const InteractionDataset& ds,
                                              int samples, std::uint64_t seed,
                                              int swap_multiplier = 10,
                                              int threads = 1) {
  if (samples < 1) throw std::invalid_argument("samples must be >= 1");
  std::vector<RewiredEdgeSet> out(samples);
  const std::int64_t swaps = swap_multiplier * ds.num_train();
  internal::ParallelFor(samples, threads, [&](int s) {
    out[s] = Rewire(ds, swaps, DeriveSeed(seed, static_cast<std::uint64_t>(s)));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Binning

enum class BoundaryMode {
  kQuantile,  // q-quantiles of the observed users
  kMean,      // single split at the mean (q must be 2); matches quadrants
};

// Interior bin edges per axis. An activity value equal to an edge falls in
// the lower bin; a preference value equal to an edge falls in the upper bin,
// so q = 2 with mean edges reproduces the quadrant tie convention.
struct BinBoundaries {
  int requested_bins = 0;
  std::vector<double> activity;
  std::vector<double> preference;

  int rows() const { return static_cast<int>(activity.size()) + 1; }
  int cols() const { return static_cast<int>(preference.size()) + 1; }
  bool activity_merged() const { return rows() < requested_bins; }
  bool preference_merged() const { return cols() < requested_bins; }

  int ActivityBin(double activity_value) const {
    return static_cast<int>(
        std::lower_bound(activity.begin(), activity.end(), activity_value) -
        activity.begin());
  }
  int PreferenceBin(double preference_value) const {
    return static_cast<int>(std::upper_bound(preference.begin(),
                                             preference.end(),
                                             preference_value) -
                            preference.begin());
  }
};

namespace internal {

// Linear-interpolation quantile of sorted values at probability p.
inline double Quantile(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) *
                          (sorted[lo + 1] - sorted[lo]);
}

// Deduplicated interior q-quantile edges. An edge that would leave its
// outer bin empty under the axis tie rule is dropped.
inline std::vector<double> QuantileEdges(std::vector<double> values, int q,
                                         bool ties_go_low) {
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  for (int k = 1; k < q; ++k) {
    const double v = Quantile(values, static_cast<double>(k) / q);
    if (ties_go_low ? v >= values.back() : v <= values.front()) continue;
    if (edges.empty() || v > edges.back()) edges.push_back(v);
  }
  return edges;
}

}  // namespace internal

// Bin edges derived once from the observed dataset and reused for every
// null sample.
inline BinBoundaries ComputeBoundaries(const InteractionDataset& ds, int q,
                                       BoundaryMode mode =
                                           BoundaryMode::kQuantile) {
  if (q < 2) throw std::invalid_argument("bins per axis must be >= 2");
  const QuadrantAssignment qa = AssignQuadrants(ds);
  BinBoundaries b;
  b.requested_bins = q;
  if (mode == BoundaryMode::kMean) {
    if (q != 2) throw std::invalid_argument("mean boundaries require q = 2");
    b.activity = {qa.mean_activity};
    b.preference = {qa.mean_preference};
    return b;
  }
  std::vector<double> activity, preference;
  for (const auto& p : qa.profiles) {
    activity.push_back(p.activity);
    preference.push_back(p.pop_preference);
  }
  b.activity = internal::QuantileEdges(std::move(activity), q, true);
  b.preference = internal::QuantileEdges(std::move(preference), q, false);
  return b;
}

struct CountGrid {
  int rows = 0;  // activity bins
  int cols = 0;  // preference bins
  std::vector<std::int64_t> counts;

  CountGrid() = default;
  CountGrid(int r, int c) : rows(r), cols(c), counts(std::size_t(r) * c, 0) {}
  std::int64_t& at(int r, int c) { return counts[std::size_t(r) * cols + c]; }
  std::int64_t at(int r, int c) const {
    return counts[std::size_t(r) * cols + c];
  }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

// Bins every user with at least one edge. p_u is recomputed from `edges`
// using the given (degree-preserved) item degrees.
inline CountGrid BinUsers(int num_users, std::span<const Edge> edges,
                          std::span<const int> item_degrees,
                          const BinBoundaries& bounds) {
  std::vector<int> degree(num_users, 0);
  std::vector<std::int64_t> popularity_sum(num_users, 0);
  for (const Edge& e : edges) {
    ++degree[e.user];
    popularity_sum[e.user] += item_degrees[e.item];
  }
  CountGrid grid(bounds.rows(), bounds.cols());
  for (int u = 0; u < num_users; ++u) {
    if (degree[u] == 0) continue;
    const double pref = static_cast<double>(popularity_sum[u]) / degree[u];
    ++grid.at(bounds.ActivityBin(degree[u]), bounds.PreferenceBin(pref));
  }
  return grid;
}

inline CountGrid BinUsers(const InteractionDataset& ds,
                          const BinBoundaries& bounds) {
  return BinUsers(ds.num_users(), ds.train_edges(), ds.item_degrees(),
                  bounds);
}

// ---------------------------------------------------------------------------
// Significance

struct SignificanceCell {
  std::int64_t observed = 0;
  double null_mean = 0;
  double null_std = 0;
  double z = std::numeric_limits<double>::quiet_NaN();
  bool z_defined = false;
  double norm_dev = 0;  // (observed - null_mean) / total users
  bool significant = false;
};

struct SignificanceGrid {
  int rows = 0;
  int cols = 0;
  std::int64_t total_users = 0;
  std::vector<SignificanceCell> cells;

  const SignificanceCell& at(int r, int c) const {
    return cells[std::size_t(r) * cols + c];
  }
};

// Per-cell z-scores of the observed grid against null sample grids. The
// sample std uses denominator (samples - 1); cells with zero null variance
// have an undefined z and are never significant.
inline SignificanceGrid ComputeSignificance(const CountGrid& observed,
                                            std::span<const CountGrid> nulls,
                                            double z_threshold = 2.0) {
  if (nulls.size() < 2) {
    throw std::invalid_argument("significance needs at least 2 null samples");
  }
  for (const auto& g : nulls) {
    if (g.rows != observed.rows || g.cols != observed.cols) {
      throw std::invalid_argument("null grid shape differs from observed");
    }
  }
  SignificanceGrid out;
  out.rows = observed.rows;
  out.cols = observed.cols;
  out.total_users = observed.total();
  out.cells.resize(observed.counts.size());
  const auto s = static_cast<std::int64_t>(nulls.size());
  for (std::size_t c = 0; c < observed.counts.size(); ++c) {
    // Exact integer moments keep the result independent of sample order.
    std::int64_t sum = 0, sum_sq = 0;
    for (const auto& g : nulls) {
      sum += g.counts[c];
      sum_sq += g.counts[c] * g.counts[c];
    }
    SignificanceCell& cell = out.cells[c];
    cell.observed = observed.counts[c];
    cell.null_mean = static_cast<double>(sum) / static_cast<double>(s);
    const std::int64_t spread = s * sum_sq - sum * sum;
    cell.null_std =
        std::sqrt(static_cast<double>(spread) / static_cast<double>(s * (s - 1)));
    const double dev = static_cast<double>(cell.observed) - cell.null_mean;
    cell.norm_dev =
        out.total_users > 0 ? dev / static_cast<double>(out.total_users) : 0.0;
    if (spread > 0) {
      cell.z = dev / cell.null_std;
      cell.z_defined = true;
      cell.significant = std::abs(cell.z) >= z_threshold;
    }
  }
  return out;
}

inline void WriteSignificanceCsv(std::ostream& out,
                                 const SignificanceGrid& grid) {
  out << "bin_activity,bin_pref,observed,null_mean,null_std,z,norm_dev,"
         "significant\n";
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const auto& cell = grid.at(r, c);
      out << fmt::format("{},{},{},{:.10g},{:.10g},{},{:.10g},{}\n", r, c,
                         cell.observed, cell.null_mean, cell.null_std,
                         cell.z_defined ? fmt::format("{:.10g}", cell.z)
                                        : std::string("nan"),
                         cell.norm_dev, cell.significant ? 1 : 0);
    }
  }
}

// ---------------------------------------------------------------------------
// End-to-end null analysis

struct NullAnalysisOptions {
  int bins = 20;
  int samples = 100;
  std::uint64_t seed = 0;
  int swap_multiplier = 10;
  int threads = 1;
  BoundaryMode boundary_mode = BoundaryMode::kQuantile;
};

struct NullAnalysis {
  BinBoundaries boundaries;
  CountGrid observed;
  SignificanceGrid significance;
  std::int64_t min_swap_accepts = 0;  // over samples
  std::int64_t total_swap_attempts = 0;
};

// Samples are binned as they are produced; edge sets are not retained.
inline NullAnalysis RunNullAnalysis(const InteractionDataset& ds,
                                    const NullAnalysisOptions& opt) {
  if (ds.num_train() < 2) {
    throw InputError("null model needs at least 2 train edges");
  }
  NullAnalysis out;
  out.boundaries = ComputeBoundaries(ds, opt.bins, opt.boundary_mode);
  out.observed = BinUsers(ds, out.boundaries);
  std::vector<CountGrid> grids(opt.samples);
  std::vector<std::int64_t> accepts(opt.samples), attempts(opt.samples);
  const std::int64_t swaps = opt.swap_multiplier * ds.num_train();
  internal::ParallelFor(opt.samples, opt.threads, [&](int s) {
    const RewiredEdgeSet sample =
        Rewire(ds, swaps, DeriveSeed(opt.seed, static_cast<std::uint64_t>(s)));
    grids[s] = BinUsers(ds.num_users(), sample.edges, ds.item_degrees(),
                        out.boundaries);
    accepts[s] = sample.swap_accepts;
    attempts[s] = sample.swap_attempts;
  });
  out.significance = ComputeSignificance(out.observed, grids);
  out.min_swap_accepts = *std::min_element(accepts.begin(), accepts.end());
  for (auto a : attempts) out.total_swap_attempts += a;
  return out;
}

}  // namespace pnrec
