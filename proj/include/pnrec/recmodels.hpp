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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <fmt/format.h>
#include <json.hpp>

#include "pnrec/common.hpp"
#include "pnrec/interactions.hpp"

namespace pnrec {

enum class ModelKind { kMF, kLGN };

inline const char* ModelKindName(ModelKind kind) {
  return kind == ModelKind::kMF ? "MF" : "LGN";
}

inline ModelKind ParseModelKind(const std::string& s) {
  if (s == "MF" || s == "mf") return ModelKind::kMF;
  if (s == "LGN" || s == "lgn" || s == "LightGCN") return ModelKind::kLGN;
  throw InputError("unknown model kind '" + s + "' (expected MF or LGN)");
}

// Layer-0 user and item embeddings plus the scorer configuration.
struct EmbeddingModel {
  ModelKind kind = ModelKind::kMF;
  int dim = 64;
  int layers = 3;  // LGN only
  double reg_lambda = 1e-4;
  // MF scores are sigma(u.v); false scores the raw inner product.
  bool mf_sigmoid = true;
  Matrix user_emb;
  Matrix item_emb;

  static EmbeddingModel Create(ModelKind kind, int num_users, int num_items,
                               int dim, int layers = 3,
                               double reg_lambda = 1e-4,
                               bool mf_sigmoid = true) {
    if (dim < 1) throw InputError("embedding dimension must be >= 1");
    if (kind == ModelKind::kLGN && layers < 1) {
      throw InputError("LGN needs at least one propagation layer");
    }
    if (reg_lambda < 0) throw InputError("reg_lambda must be >= 0");
    EmbeddingModel m;
    m.kind = kind;
    m.dim = dim;
    m.layers = layers;
    m.reg_lambda = reg_lambda;
    m.mf_sigmoid = mf_sigmoid;
    m.user_emb = Matrix::Zero(num_users, dim);
    m.item_emb = Matrix::Zero(num_items, dim);
    return m;
  }

  int num_users() const { return static_cast<int>(user_emb.rows()); }
  int num_items() const { return static_cast<int>(item_emb.rows()); }

  void InitGaussian(double stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index k = 0; k < user_emb.size(); ++k) {
      user_emb.data()[k] = normal(rng);
    }
    for (Eigen::Index k = 0; k < item_emb.size(); ++k) {
      item_emb.data()[k] = normal(rng);
    }
  }

  bool AllFinite() const {
    return user_emb.allFinite() && item_emb.allFinite();
  }
};

// sigma(u_u . v_i) (raw inner product when mf_sigmoid is off).
inline double MfScore(const EmbeddingModel& model, int user, int item) {
  const double dot = model.user_emb.row(user).dot(model.item_emb.row(item));
  return model.mf_sigmoid ? Sigmoid(dot) : dot;
}

// Light graph convolution over the train graph: symmetric normalized
// adjacency with weight 1/sqrt(d_u d_i) per edge, no transforms or
// nonlinearities, final embedding = mean of layers 0..L. Users and items are
// stacked as rows [0, n) and [n, n + m).
class LgnPropagator {
 public:
  LgnPropagator(const InteractionDataset& ds, int layers)
      : num_users_(ds.num_users()),
        num_items_(ds.num_items()),
        layers_(layers) {
    if (layers < 0) throw std::invalid_argument("layers must be >= 0");
    const int size = num_users_ + num_items_;
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(2 * ds.train_edges().size());
    for (const Edge& e : ds.train_edges()) {
      const double w = 1.0 / std::sqrt(static_cast<double>(
                                 ds.user_degree(e.user)) *
                             static_cast<double>(ds.item_degree(e.item)));
      entries.emplace_back(e.user, num_users_ + e.item, w);
      entries.emplace_back(num_users_ + e.item, e.user, w);
    }
    adjacency_.resize(size, size);
    adjacency_.setFromTriplets(entries.begin(), entries.end());
  }

  int layers() const { return layers_; }

  // Applies (1 / (L + 1)) * sum_{l=0..L} A^l to the stacked rows.
  Matrix Apply(const Matrix& stacked) const {
    Matrix acc = stacked;
    Matrix cur = stacked;
    for (int l = 0; l < layers_; ++l) {
      Matrix next = adjacency_ * cur;
      cur.swap(next);
      acc += cur;
    }
    acc /= static_cast<double>(layers_ + 1);
    return acc;
  }

  Matrix Stack(const Matrix& users, const Matrix& items) const {
    Matrix stacked(users.rows() + items.rows(), users.cols());
    stacked.topRows(users.rows()) = users;
    stacked.bottomRows(items.rows()) = items;
    return stacked;
  }

  // Final (propagated) embeddings, stacked.
  Matrix Propagate(const EmbeddingModel& model) const {
    return Apply(Stack(model.user_emb, model.item_emb));
  }

  // The propagation operator is symmetric, so the gradient with respect to
  // layer-0 rows is the same operator applied to the final-row gradient.
  Matrix Backprop(const Matrix& stacked_grad) const {
    return Apply(stacked_grad);
  }

  int num_users() const { return num_users_; }
  int num_items() const { return num_items_; }

 private:
  int num_users_;
  int num_items_;
  int layers_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> adjacency_;
};

// Immutable score snapshot. For LGN it holds post-propagation embeddings;
// for MF a copy of the layer-0 embeddings. Safe for concurrent reads.
class Scorer {
 public:
  static Scorer FromModel(const EmbeddingModel& model,
                          const LgnPropagator* propagator = nullptr) {
    Scorer s;
    if (model.kind == ModelKind::kLGN) {
      if (propagator == nullptr) {
        throw std::invalid_argument("LGN scoring requires a propagator");
      }
      const Matrix final_emb = propagator->Propagate(model);
      s.users_ = final_emb.topRows(model.num_users());
      s.items_ = final_emb.bottomRows(model.num_items());
      s.sigmoid_ = false;
    } else {
      s.users_ = model.user_emb;
      s.items_ = model.item_emb;
      s.sigmoid_ = model.mf_sigmoid;
    }
    return s;
  }

  int num_users() const { return static_cast<int>(users_.rows()); }
  int num_items() const { return static_cast<int>(items_.rows()); }

  double Score(int user, int item) const {
    const double dot = users_.row(user).dot(items_.row(item));
    return sigmoid_ ? Sigmoid(dot) : dot;
  }

  void ScoreRow(int user, std::span<double> out) const {
    Eigen::Map<Vector> scores(out.data(), static_cast<Eigen::Index>(out.size()));
    scores.noalias() = items_ * users_.row(user).transpose();
    if (sigmoid_) {
      for (double& v : out) v = Sigmoid(v);
    }
  }

  const Matrix& users() const { return users_; }
  const Matrix& items() const { return items_; }

 private:
  Matrix users_;
  Matrix items_;
  bool sigmoid_ = false;
};

// reg_lambda * 1/2 * sum of squared norms of the listed layer-0 rows.
// Ids are counted with multiplicity.
inline double L2Penalty(const EmbeddingModel& model,
                        std::span<const int> users,
                        std::span<const int> items) {
  double sq = 0;
  for (int u : users) sq += model.user_emb.row(u).squaredNorm();
  for (int i : items) sq += model.item_emb.row(i).squaredNorm();
  return model.reg_lambda * 0.5 * sq;
}

struct BatchGradient {
  double loss_sum = 0;  // sum of weighted -ln sigma(y_ui - y_uj)
  double reg_sum = 0;   // sum of per-triplet L2 penalties
  // Gradient of the batch-mean objective w.r.t. layer-0 embeddings.
  Matrix user_grad;
  Matrix item_grad;
};

// Objective for a batch B with weights w_t:
//   (1/|B|) sum_t [ -w_t ln sigma(y_ut,it - y_ut,jt)
//                   + lambda/2 (|e_u|^2 + |e_i|^2 + |e_j|^2) ]
// where e are layer-0 rows. LGN gradients flow through the propagation.
inline BatchGradient ComputeBatchGradient(
    const EmbeddingModel& model, const LgnPropagator* propagator,
    std::span<const Triplet> batch, std::span<const double> weights) {
  if (batch.size() != weights.size()) {
    throw std::invalid_argument("one weight per triplet required");
  }
  const int n = model.num_users();
  const int m = model.num_items();
  BatchGradient out;
  out.user_grad = Matrix::Zero(n, model.dim);
  out.item_grad = Matrix::Zero(m, model.dim);
  if (batch.empty()) return out;
  const double scale = 1.0 / static_cast<double>(batch.size());

  const bool lgn = model.kind == ModelKind::kLGN;
  Matrix final_emb;
  if (lgn) {
    if (propagator == nullptr) {
      throw std::invalid_argument("LGN gradient requires a propagator");
    }
    final_emb = propagator->Propagate(model);
  }
  // Gradient w.r.t. whatever rows produce the scores: layer-0 for MF, the
  // propagated rows for LGN (stacked users then items).
  Matrix score_grad;
  if (lgn) score_grad = Matrix::Zero(n + m, model.dim);
  const Matrix* user_rows = lgn ? &final_emb : &model.user_emb;
  const Matrix* item_rows = lgn ? &final_emb : &model.item_emb;
  const int item_offset = lgn ? n : 0;

  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Triplet& t = batch[k];
    const double w = weights[k];
    const auto eu = user_rows->row(t.user);
    const auto ei = item_rows->row(item_offset + t.pos);
    const auto ej = item_rows->row(item_offset + t.neg);
    const double si = eu.dot(ei);
    const double sj = eu.dot(ej);
    double yi = si, yj = sj, dyi = 1.0, dyj = 1.0;
    if (!lgn && model.mf_sigmoid) {
      yi = Sigmoid(si);
      yj = Sigmoid(sj);
      dyi = yi * (1.0 - yi);
      dyj = yj * (1.0 - yj);
    }
    const double x = yi - yj;
    out.loss_sum += -w * LogSigmoid(x);
    // d/dx of -w ln sigma(x) = -w sigma(-x)
    const double c = -w * Sigmoid(-x) * scale;
    if (lgn) {
      score_grad.row(t.user) += c * (dyi * ei - dyj * ej);
      score_grad.row(n + t.pos) += (c * dyi) * eu;
      score_grad.row(n + t.neg) -= (c * dyj) * eu;
    } else {
      out.user_grad.row(t.user) += c * (dyi * ei - dyj * ej);
      out.item_grad.row(t.pos) += (c * dyi) * eu;
      out.item_grad.row(t.neg) -= (c * dyj) * eu;
    }
  }
  if (lgn) {
    const Matrix g0 = propagator->Backprop(score_grad);
    out.user_grad += g0.topRows(n);
    out.item_grad += g0.bottomRows(m);
  }
  const double lambda = model.reg_lambda;
  for (const Triplet& t : batch) {
    const int users[] = {t.user};
    const int items[] = {t.pos, t.neg};
    out.reg_sum += L2Penalty(model, users, items);
    if (lambda > 0) {
      out.user_grad.row(t.user) += (lambda * scale) * model.user_emb.row(t.user);
      out.item_grad.row(t.pos) += (lambda * scale) * model.item_emb.row(t.pos);
      out.item_grad.row(t.neg) += (lambda * scale) * model.item_emb.row(t.neg);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: <prefix>.json header + <prefix>.bin with the user rows then
// the item rows as native-endian float64, row-major.

struct CheckpointHeader {
  ModelKind kind = ModelKind::kMF;
  int dim = 0;
  int layers = 0;
  int num_users = 0;
  int num_items = 0;
  double reg_lambda = 0;
  bool mf_sigmoid = true;
  std::uint64_t seed = 0;
  int epoch = 0;
};

inline void SaveCheckpoint(const std::string& prefix,
                           const EmbeddingModel& model, std::uint64_t seed,
                           int epoch) {
  nlohmann::json header = {
      {"kind", ModelKindName(model.kind)},
      {"d", model.dim},
      {"layers", model.layers},
      {"num_users", model.num_users()},
      {"num_items", model.num_items()},
      {"reg_lambda", model.reg_lambda},
      {"mf_sigmoid", model.mf_sigmoid},
      {"seed", seed},
      {"epoch", epoch},
      {"format", "float64-rowmajor"},
  };
  std::ofstream h(prefix + ".json");
  if (!h) throw RuntimeAbort("cannot write " + prefix + ".json");
  h << header.dump(2) << '\n';
  std::ofstream b(prefix + ".bin", std::ios::binary);
  if (!b) throw RuntimeAbort("cannot write " + prefix + ".bin");
  b.write(reinterpret_cast<const char*>(model.user_emb.data()),
          static_cast<std::streamsize>(model.user_emb.size() * sizeof(double)));
  b.write(reinterpret_cast<const char*>(model.item_emb.data()),
          static_cast<std::streamsize>(model.item_emb.size() * sizeof(double)));
}

inline EmbeddingModel LoadCheckpoint(const std::string& prefix,
                                     CheckpointHeader* header_out = nullptr) {
  std::ifstream h(prefix + ".json");
  if (!h) throw InputError("cannot open " + prefix + ".json");
  const nlohmann::json j = nlohmann::json::parse(h);
  CheckpointHeader hdr;
  hdr.kind = ParseModelKind(j.at("kind").get<std::string>());
  hdr.dim = j.at("d").get<int>();
  hdr.layers = j.at("layers").get<int>();
  hdr.num_users = j.at("num_users").get<int>();
  hdr.num_items = j.at("num_items").get<int>();
  hdr.reg_lambda = j.at("reg_lambda").get<double>();
  hdr.mf_sigmoid = j.at("mf_sigmoid").get<bool>();
  hdr.seed = j.at("seed").get<std::uint64_t>();
  hdr.epoch = j.at("epoch").get<int>();
  EmbeddingModel model =
      EmbeddingModel::Create(hdr.kind, hdr.num_users, hdr.num_items, hdr.dim,
                             hdr.layers, hdr.reg_lambda, hdr.mf_sigmoid);
  std::ifstream b(prefix + ".bin", std::ios::binary);
  if (!b) throw InputError("cannot open " + prefix + ".bin");
  b.read(reinterpret_cast<char*>(model.user_emb.data()),
         static_cast<std::streamsize>(model.user_emb.size() * sizeof(double)));
  b.read(reinterpret_cast<char*>(model.item_emb.data()),
         static_cast<std::streamsize>(model.item_emb.size() * sizeof(double)));
  if (!b) throw InputError(prefix + ".bin is truncated");
  if (header_out != nullptr) *header_out = hdr;
  return model;
}

}  // namespace pnrec
