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
// Reweighted BPR training. A user's share of each epoch is the sampling
// budget S_u ~ d_u^alpha; each sampled triple (u, i, j) is weighted by
// d_i^beta (or d_u^-1 for the user-normalized variant).
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "pnrec/common.hpp"
#include "pnrec/interactions.hpp"
#include "pnrec/recmodels.hpp"

namespace pnrec {

enum class Variant {
  kVanilla,   // alpha = 0, beta = 0
  kUI,        // user and item reweighting at (alpha, beta)
  kOnlyItem,  // alpha = 0, beta = -1/2 (popularity-heuristic IPW)
  kOnlyUser,  // per-pair BPR with weight d_u^-1
};

inline const char* VariantName(Variant v) {
  switch (v) {
    case Variant::kVanilla: return "vanilla";
    case Variant::kUI: return "ui";
    case Variant::kOnlyItem: return "only_item";
    case Variant::kOnlyUser: return "only_user";
  }
  return "unknown";
}

inline Variant ParseVariant(const std::string& s) {
  if (s == "vanilla" || s == "Vanilla") return Variant::kVanilla;
  if (s == "ui" || s == "UI") return Variant::kUI;
  if (s == "only_item" || s == "OnlyItem") return Variant::kOnlyItem;
  if (s == "only_user" || s == "OnlyUser") return Variant::kOnlyUser;
  throw InputError("unknown variant '" + s +
                   "' (expected vanilla, ui, only_item or only_user)");
}

struct ReweightConfig {
  Variant variant = Variant::kVanilla;
  double alpha = 0;  // exponent of d_u in the sampling budget
  double beta = 0;   // exponent of d_i in the triplet weight
  int epochs = 400;
  std::uint64_t seed = 0;

  // Canonical (alpha, beta) for a variant. For kUI the given pair is kept.
  // kOnlyUser samples edge-uniformly (alpha = 1) so that the per-user
  // weight d_u^-1 applies to the plain per-pair BPR sum.
  static ReweightConfig ForVariant(Variant v, double alpha = 0,
                                   double beta = 0) {
    ReweightConfig c;
    c.variant = v;
    switch (v) {
      case Variant::kVanilla: c.alpha = 0; c.beta = 0; break;
      case Variant::kOnlyItem: c.alpha = 0; c.beta = -0.5; break;
      case Variant::kOnlyUser: c.alpha = 1; c.beta = 0; break;
      case Variant::kUI: c.alpha = alpha; c.beta = beta; break;
    }
    return c;
  }

  void Validate() const {
    if (!(alpha >= 0 && alpha <= 1)) {
      throw InputError(fmt::format("alpha must lie in [0, 1], got {}", alpha));
    }
    if (!(beta <= 0)) {
      throw InputError(fmt::format("beta must be <= 0, got {}", beta));
    }
    if (epochs < 0) throw InputError("epochs must be >= 0");
    const ReweightConfig canon = ForVariant(variant, alpha, beta);
    if (canon.alpha != alpha || canon.beta != beta) {
      throw InputError(fmt::format(
          "variant {} requires (alpha, beta) = ({}, {}), got ({}, {})",
          VariantName(variant), canon.alpha, canon.beta, alpha, beta));
    }
  }
};

// ---------------------------------------------------------------------------
// Sampling budgets

struct SamplingPlan {
  std::vector<std::int64_t> budget;  // S_u
  std::int64_t total = 0;
  int zero_budget_users = 0;  // users with d_u >= 1 but S_u == 0
};

// S_u = round(d_u^alpha / sum d^alpha * sum d), ties away from zero.
// Zero-degree users get S_u = 0.
inline SamplingPlan SamplesPerUser(std::span<const int> degrees,
                                   double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) {
    throw InputError(fmt::format("alpha must lie in [0, 1], got {}", alpha));
  }
  std::vector<double> weight(degrees.size(), 0.0);
  double weight_sum = 0;
  std::int64_t interactions = 0;
  for (std::size_t u = 0; u < degrees.size(); ++u) {
    if (degrees[u] <= 0) continue;
    weight[u] = std::pow(static_cast<double>(degrees[u]), alpha);
    weight_sum += weight[u];
    interactions += degrees[u];
  }
  if (interactions == 0) {
    throw InputError("every user has zero train interactions");
  }
  SamplingPlan plan;
  plan.budget.assign(degrees.size(), 0);
  const double total = static_cast<double>(interactions);
  for (std::size_t u = 0; u < degrees.size(); ++u) {
    if (degrees[u] <= 0) continue;
    // (w * total) / sum keeps alpha = 1 exact: d_u * D / D == d_u.
    plan.budget[u] =
        static_cast<std::int64_t>(std::round(weight[u] * total / weight_sum));
    plan.total += plan.budget[u];
    if (plan.budget[u] == 0) ++plan.zero_budget_users;
  }
  return plan;
}

inline SamplingPlan SamplesPerUser(const InteractionDataset& ds,
                                   double alpha) {
  return SamplesPerUser(ds.user_degrees(), alpha);
}

struct EpochSample {
  std::vector<Triplet> triplets;  // grouped by user, ascending
  int skipped_users = 0;          // N_u == all items, no negative exists
};

// S_u triples per user: positive uniform with replacement from N_u, negative
// uniform over items not in N_u (rejection sampling).
template <class Rng>
EpochSample SampleEpochTriplets(const InteractionDataset& ds,
                                const SamplingPlan& plan, Rng& rng) {
  EpochSample out;
  out.triplets.reserve(static_cast<std::size_t>(plan.total));
  std::uniform_int_distribution<int> any_item(0, std::max(0, ds.num_items() - 1));
  for (int u = 0; u < ds.num_users(); ++u) {
    const std::int64_t count = plan.budget[u];
    if (count == 0) continue;
    const auto items = ds.neighbors(u);
    if (static_cast<int>(items.size()) >= ds.num_items()) {
      ++out.skipped_users;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick_pos(0, items.size() - 1);
    for (std::int64_t k = 0; k < count; ++k) {
      const int pos = items[pick_pos(rng)];
      int neg = any_item(rng);
      while (std::binary_search(items.begin(), items.end(), neg)) {
        neg = any_item(rng);
      }
      out.triplets.push_back({u, pos, neg});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

// w = d_i^beta (UI, OnlyItem), d_u^-1 (OnlyUser), 1 (Vanilla).
inline double TripletWeight(const ReweightConfig& cfg,
                            const InteractionDataset& ds, const Triplet& t) {
  switch (cfg.variant) {
    case Variant::kVanilla:
      return 1.0;
    case Variant::kOnlyUser:
      return 1.0 / static_cast<double>(ds.user_degree(t.user));
    case Variant::kUI:
    case Variant::kOnlyItem:
      if (cfg.beta == 0) return 1.0;
      return std::pow(static_cast<double>(ds.item_degree(t.pos)), cfg.beta);
  }
  return 1.0;
}

inline double TripletLoss(const ReweightConfig& cfg,
                          const InteractionDataset& ds, double score_pos,
                          double score_neg, const Triplet& t) {
  return -TripletWeight(cfg, ds, t) * LogSigmoid(score_pos - score_neg);
}

inline double TripletLoss(const ReweightConfig& cfg,
                          const InteractionDataset& ds, const Scorer& scores,
                          const Triplet& t) {
  return TripletLoss(cfg, ds, scores.Score(t.user, t.pos),
                     scores.Score(t.user, t.neg), t);
}

struct LossEstimate {
  double mean_loss = 0;   // mean weighted BPR term
  double reg_loss = 0;    // mean per-triplet L2 penalty
  double std_error = 0;   // of mean_loss
  std::int64_t count = 0;
};

// Monte-Carlo estimate of the per-triplet objective for a frozen model over
// `epochs` independently sampled epochs.
inline LossEstimate EpochLossEstimate(const ReweightConfig& cfg,
                                      const InteractionDataset& ds,
                                      const EmbeddingModel& model,
                                      const Scorer& scores,
                                      std::uint64_t seed, int epochs = 1) {
  const SamplingPlan plan = SamplesPerUser(ds, cfg.alpha);
  std::mt19937_64 rng(seed);
  LossEstimate est;
  double sum = 0, sum_sq = 0, reg = 0;
  for (int e = 0; e < epochs; ++e) {
    const EpochSample sample = SampleEpochTriplets(ds, plan, rng);
    for (const Triplet& t : sample.triplets) {
      const double l = TripletLoss(cfg, ds, scores, t);
      sum += l;
      sum_sq += l * l;
      const int users[] = {t.user};
      const int items[] = {t.pos, t.neg};
      reg += L2Penalty(model, users, items);
      ++est.count;
    }
  }
  if (est.count == 0) return est;
  const double n = static_cast<double>(est.count);
  est.mean_loss = sum / n;
  est.reg_loss = reg / n;
  if (est.count > 1) {
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1));
    est.std_error = std::sqrt(var / n);
  }
  return est;
}

// ---------------------------------------------------------------------------
// Optimization

enum class OptimizerKind { kAdam, kSgd };

struct ModelConfig {
  ModelKind kind = ModelKind::kMF;
  int dim = 64;
  int layers = 3;
  double lr = 1e-3;
  double reg_lambda = 1e-4;
  int batch_size = 2048;
  bool mf_sigmoid = true;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double init_std = 0.1;
};

inline EmbeddingModel MakeModel(const ModelConfig& mc,
                                const InteractionDataset& ds,
                                std::uint64_t seed) {
  EmbeddingModel model =
      EmbeddingModel::Create(mc.kind, ds.num_users(), ds.num_items(), mc.dim,
                             mc.layers, mc.reg_lambda, mc.mf_sigmoid);
  model.InitGaussian(mc.init_std, DeriveSeed(seed, 0x1417));
  return model;
}

class AdamOptimizer {
 public:
  AdamOptimizer(const EmbeddingModel& model, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_users_ = Matrix::Zero(model.user_emb.rows(), model.user_emb.cols());
    v_users_ = m_users_;
    m_items_ = Matrix::Zero(model.item_emb.rows(), model.item_emb.cols());
    v_items_ = m_items_;
  }

  void Step(EmbeddingModel& model, const BatchGradient& g) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, step_);
    const double c2 = 1.0 - std::pow(beta2_, step_);
    Update(model.user_emb, g.user_grad, m_users_, v_users_, c1, c2);
    Update(model.item_emb, g.item_grad, m_items_, v_items_, c1, c2);
  }

 private:
  void Update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
              double c1, double c2) const {
    m = beta1_ * m + (1.0 - beta1_) * grad;
    v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
    param.array() -= lr_ * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + eps_);
  }

  double lr_, beta1_, beta2_, eps_;
  int step_ = 0;
  Matrix m_users_, v_users_, m_items_, v_items_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double reg_loss = 0;
  double wallclock_s = 0;  // since training start
};

struct TrainHooks {
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::function<void(int epoch, const EmbeddingModel&)> on_checkpoint;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochStats> trace;
  SamplingPlan plan;
  int skipped_users = 0;  // per epoch; users without any negative item
};

// Mini-batch optimization of the reweighted objective. Single-threaded and
// deterministic given cfg.seed. Throws RuntimeAbort on a non-finite loss.
inline TrainResult Train(const ReweightConfig& cfg, const ModelConfig& mc,
                         const InteractionDataset& ds, EmbeddingModel& model,
                         const TrainHooks& hooks = {}) {
  cfg.Validate();
  if (mc.batch_size < 1) throw InputError("batch_size must be >= 1");
  if (!(mc.lr > 0)) throw InputError("learning rate must be > 0");
  TrainResult result;
  result.plan = SamplesPerUser(ds, cfg.alpha);
  if (cfg.epochs == 0) return result;

  std::optional<LgnPropagator> propagator;
  if (model.kind == ModelKind::kLGN) propagator.emplace(ds, model.layers);
  const LgnPropagator* prop = propagator ? &*propagator : nullptr;

  std::mt19937_64 rng(DeriveSeed(cfg.seed, 0x5a3e));
  AdamOptimizer adam(model, mc.lr);
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> weights;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochSample sample = SampleEpochTriplets(ds, result.plan, rng);
    result.skipped_users = sample.skipped_users;
    auto& triplets = sample.triplets;
    std::shuffle(triplets.begin(), triplets.end(), rng);

    double loss_sum = 0, reg_sum = 0;
    for (std::size_t begin = 0; begin < triplets.size();
         begin += static_cast<std::size_t>(mc.batch_size)) {
      const std::size_t end = std::min(
          triplets.size(), begin + static_cast<std::size_t>(mc.batch_size));
      const std::span<const Triplet> batch(triplets.data() + begin,
                                           end - begin);
      weights.resize(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        weights[k] = TripletWeight(cfg, ds, batch[k]);
      }
      const BatchGradient g =
          ComputeBatchGradient(model, prop, batch, weights);
      loss_sum += g.loss_sum;
      reg_sum += g.reg_sum;
      if (mc.optimizer == OptimizerKind::kAdam) {
        adam.Step(model, g);
      } else {
        model.user_emb -= mc.lr * g.user_grad;
        model.item_emb -= mc.lr * g.item_grad;
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    const double count = std::max<double>(1.0, triplets.size());
    stats.mean_loss = loss_sum / count;
    stats.reg_loss = reg_sum / count;
    stats.wallclock_s = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    if (!std::isfinite(stats.mean_loss) || !std::isfinite(stats.reg_loss) ||
        !model.AllFinite()) {
      throw RuntimeAbort(fmt::format(
          "non-finite loss at epoch {} (lr = {}); lower the learning rate or "
          "increase reg_lambda",
          epoch, mc.lr));
    }
    result.trace.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);
    if (hooks.checkpoint_every > 0 && hooks.on_checkpoint &&
        epoch % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(epoch, model);
    }
  }
  return result;
}

inline void WriteLossCsv(std::ostream& out,
                         const std::vector<EpochStats>& trace) {
  out << "epoch,mean_loss,reg_loss,wallclock_s\n";
  for (const auto& s : trace) {
    out << fmt::format("{},{:.10g},{:.10g},{:.3f}\n", s.epoch, s.mean_loss,
                       s.reg_loss, s.wallclock_s);
  }
}

}  // namespace pnrec
