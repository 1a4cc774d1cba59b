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
// Experiment plumbing behind the command-line tool: run configuration,
// content-addressed run directories, the (alpha, beta) grid search, report
// tables and the dataset analysis pipeline.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "pnrec/common.hpp"
#include "pnrec/interactions.hpp"
#include "pnrec/metrics.hpp"
#include "pnrec/nullmodel.hpp"
#include "pnrec/recmodels.hpp"
#include "pnrec/training.hpp"

namespace pnrec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small I/O helpers

inline std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json ReadJsonFile(const fs::path& path) {
  const std::string text = ReadFile(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
}

// Writes via a temporary sibling and a rename so readers never see a
// partially written file.
inline void WriteFileAtomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw RuntimeAbort("cannot write " + tmp.string());
    out << text;
    if (!out) throw RuntimeAbort("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <class WriteFn>
void WriteWith(const fs::path& path, WriteFn&& fn) {
  std::ostringstream ss;
  fn(ss);
  WriteFileAtomic(path, ss.str());
}

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void Update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const { return fmt::format("{:016x}", state_); }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline fs::path ResolvePath(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

// ---------------------------------------------------------------------------
// Datasets

struct DataSource {
  std::string train_path;
  std::string test_path;
  IdMode id_mode = IdMode::kDense;
};

struct LoadedData {
  LoadResult loaded;
  std::string content_hash;  // FNV-1a over both files and the id mode
};

inline LoadedData LoadData(const DataSource& src) {
  LoadedData out;
  const std::string train = ReadFile(src.train_path);
  const std::string test = ReadFile(src.test_path);
  Fnv1a h;
  h.Update(train);
  h.Update(std::string_view("\0", 1));
  h.Update(test);
  h.Update(src.id_mode == IdMode::kRaw ? "raw" : "dense");
  out.content_hash = h.hex();
  std::istringstream tr(train), te(test);
  out.loaded = BuildDataset(ParseAdjacency(tr, src.train_path),
                            ParseAdjacency(te, src.test_path), src.id_mode);
  return out;
}

// Holds out round(fraction * d_u) train items per user as a validation
// split; every user keeps at least one train item.
inline InteractionDataset HoldoutSplit(const InteractionDataset& ds,
                                       double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) {
    throw InputError("validation_fraction must lie in (0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::vector<Edge> train, valid;
  for (int u = 0; u < ds.num_users(); ++u) {
    const auto nb = ds.neighbors(u);
    std::vector<int> items(nb.begin(), nb.end());
    std::shuffle(items.begin(), items.end(), rng);
    const int d = static_cast<int>(items.size());
    const int held = std::min(d - 1, static_cast<int>(std::lround(fraction * d)));
    for (int k = 0; k < d; ++k) {
      (k < held ? valid : train).push_back({u, items[k]});
    }
  }
  return InteractionDataset(ds.num_users(), ds.num_items(), std::move(train),
                            std::move(valid));
}

// ---------------------------------------------------------------------------
// Run configuration (train.json)

struct RunSpec {
  DataSource data;
  ReweightConfig reweight;
  ModelConfig model;
  int k = 20;
  Correlation correlation = Correlation::kPearson;
  int checkpoint_every = 0;
  int threads = 1;          // ranking workers; does not affect results
  std::string output_dir = "runs";
};

inline ModelConfig ParseModelConfig(const json& j) {
  ModelConfig mc;
  if (j.is_null()) return mc;
  if (!j.is_object()) throw InputError("'model' must be an object");
  if (j.contains("kind")) {
    mc.kind = ParseModelKind(j.at("kind").get<std::string>());
  }
  mc.dim = j.value("dim", mc.dim);
  mc.layers = j.value("layers", mc.layers);
  mc.lr = j.value("lr", mc.lr);
  mc.reg_lambda = j.value("reg_lambda", mc.reg_lambda);
  mc.batch_size = j.value("batch_size", mc.batch_size);
  mc.mf_sigmoid = j.value("mf_sigmoid", mc.mf_sigmoid);
  mc.init_std = j.value("init_std", mc.init_std);
  if (j.contains("optimizer")) {
    const std::string opt = j.at("optimizer").get<std::string>();
    if (opt == "adam") {
      mc.optimizer = OptimizerKind::kAdam;
    } else if (opt == "sgd") {
      mc.optimizer = OptimizerKind::kSgd;
    } else {
      throw InputError("optimizer must be 'adam' or 'sgd', got '" + opt + "'");
    }
  }
  if (mc.dim < 1) throw InputError("model.dim must be >= 1");
  if (mc.layers < 0) throw InputError("model.layers must be >= 0");
  if (mc.batch_size < 1) throw InputError("model.batch_size must be >= 1");
  if (!(mc.lr > 0)) throw InputError("model.lr must be > 0");
  if (!(mc.reg_lambda >= 0)) throw InputError("model.reg_lambda must be >= 0");
  if (!(mc.init_std > 0)) throw InputError("model.init_std must be > 0");
  return mc;
}

inline json ToJson(const ModelConfig& mc) {
  return {{"kind", ModelKindName(mc.kind)},
          {"dim", mc.dim},
          {"layers", mc.layers},
          {"lr", mc.lr},
          {"reg_lambda", mc.reg_lambda},
          {"batch_size", mc.batch_size},
          {"mf_sigmoid", mc.mf_sigmoid},
          {"optimizer", mc.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
          {"init_std", mc.init_std}};
}

inline DataSource ParseDataSource(const json& j, const fs::path& base_dir) {
  DataSource src;
  if (!j.contains("train_path") || !j.contains("test_path")) {
    throw InputError("config needs 'train_path' and 'test_path'");
  }
  src.train_path =
      ResolvePath(base_dir, j.at("train_path").get<std::string>()).string();
  src.test_path =
      ResolvePath(base_dir, j.at("test_path").get<std::string>()).string();
  src.id_mode = j.value("raw_ids", false) ? IdMode::kRaw : IdMode::kDense;
  return src;
}

// Relative paths are resolved against base_dir (the config file's folder).
// For vanilla, only_item and only_user, alpha and beta may be omitted.
inline RunSpec ParseRunSpec(const json& j, const fs::path& base_dir = {}) {
  try {
    if (!j.is_object()) throw InputError("run config must be a JSON object");
    RunSpec spec;
    spec.data = ParseDataSource(j, base_dir);
    if (!j.contains("variant")) throw InputError("config needs 'variant'");
    const Variant v = ParseVariant(j.at("variant").get<std::string>());
    if (v == Variant::kUI && (!j.contains("alpha") || !j.contains("beta"))) {
      throw InputError("variant ui needs 'alpha' and 'beta'");
    }
    ReweightConfig canon = ReweightConfig::ForVariant(
        v, j.value("alpha", 0.0), j.value("beta", 0.0));
    canon.alpha = j.value("alpha", canon.alpha);
    canon.beta = j.value("beta", canon.beta);
    canon.epochs = j.value("epochs", canon.epochs);
    canon.seed = j.value("seed", std::uint64_t{0});
    canon.Validate();
    spec.reweight = canon;
    spec.model = ParseModelConfig(j.value("model", json()));
    spec.k = j.value("k", spec.k);
    if (spec.k < 1) throw InputError("k must be >= 1");
    if (j.contains("correlation")) {
      spec.correlation =
          ParseCorrelation(j.at("correlation").get<std::string>());
    }
    spec.checkpoint_every = j.value("checkpoint_every", 0);
    spec.threads = j.value("threads", 1);
    if (j.contains("output_dir")) {
      spec.output_dir =
          ResolvePath(base_dir, j.at("output_dir").get<std::string>()).string();
    } else {
      spec.output_dir = ResolvePath(base_dir, spec.output_dir).string();
    }
    return spec;
  } catch (const json::exception& e) {
    throw InputError(std::string("run config: ") + e.what());
  }
}

// Fields that determine a run's results; paths and worker counts excluded.
inline json CanonicalRunJson(const RunSpec& spec, const std::string& data_hash,
                             const std::string& split) {
  return {{"data", data_hash},
          {"split", split},
          {"variant", VariantName(spec.reweight.variant)},
          {"alpha", spec.reweight.alpha},
          {"beta", spec.reweight.beta},
          {"epochs", spec.reweight.epochs},
          {"seed", spec.reweight.seed},
          {"model", ToJson(spec.model)},
          {"k", spec.k},
          {"correlation", CorrelationName(spec.correlation)}};
}

inline std::string ConfigHash(const json& canonical) {
  Fnv1a h;
  h.Update(canonical.dump());
  return h.hex();
}

// ---------------------------------------------------------------------------
// Run records

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  Variant variant = Variant::kVanilla;
  double alpha = 0;
  double beta = 0;
  ModelKind model = ModelKind::kMF;
  int epochs = 0;
  std::string split = "test";  // "test" or "validation"
  json config;                 // canonical run json
  EvalReport eval;
  std::string loss_trace = "loss.csv";
  double wallclock_s = 0;
  bool resumed = false;  // loaded from an existing run directory
};

inline json ToJson(const RunRecord& r) {
  return {{"config_hash", r.config_hash},
          {"seed", r.seed},
          {"variant", VariantName(r.variant)},
          {"alpha", r.alpha},
          {"beta", r.beta},
          {"model", ModelKindName(r.model)},
          {"epochs", r.epochs},
          {"split", r.split},
          {"config", r.config},
          {"eval", ToJson(r.eval)},
          {"loss_trace", r.loss_trace},
          {"wallclock_s", r.wallclock_s}};
}

inline RunRecord RunRecordFromJson(const json& j) {
  try {
    RunRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.variant = ParseVariant(j.at("variant").get<std::string>());
    r.alpha = j.at("alpha").get<double>();
    r.beta = j.at("beta").get<double>();
    r.model = ParseModelKind(j.at("model").get<std::string>());
    r.epochs = j.at("epochs").get<int>();
    r.split = j.at("split").get<std::string>();
    r.config = j.at("config");
    r.eval = EvalReportFromJson(j.at("eval"));
    r.loss_trace = j.at("loss_trace").get<std::string>();
    r.wallclock_s = j.at("wallclock_s").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("run record: ") + e.what());
  }
}

// Every run.json below root, sorted by path.
inline std::vector<RunRecord> LoadRunRecords(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw InputError("runs directory not found: " + root.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "run.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> records;
  for (const auto& f : files) {
    try {
      records.push_back(RunRecordFromJson(ReadJsonFile(f)));
    } catch (const InputError& e) {
      throw InputError(f.string() + ": " + e.what());
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Training runs

using LogFn = std::function<void(const std::string&)>;

// Trains and evaluates one configuration in runs_dir/<config hash>/. A
// directory that already holds a run.json with the same hash is reused.
// Writes loss.csv, eval.json, checkpoint.{json,bin} and finally run.json.
inline RunRecord RunTraining(const RunSpec& spec,
                             const InteractionDataset& ds,
                             const std::string& data_hash,
                             const fs::path& runs_dir,
                             const std::string& split = "test",
                             const LogFn& log = {}) {
  const json canonical = CanonicalRunJson(spec, data_hash, split);
  const std::string hash = ConfigHash(canonical);
  const fs::path dir = runs_dir / hash;
  const fs::path record_path = dir / "run.json";
  if (fs::exists(record_path)) {
    RunRecord existing = RunRecordFromJson(ReadJsonFile(record_path));
    if (existing.config_hash == hash && existing.config == canonical) {
      existing.resumed = true;
      if (log) log(fmt::format("reusing completed run {}", dir.string()));
      return existing;
    }
  }
  fs::create_directories(dir);

  EmbeddingModel model = MakeModel(spec.model, ds, spec.reweight.seed);
  TrainHooks hooks;
  hooks.checkpoint_every = spec.checkpoint_every;
  hooks.on_checkpoint = [&](int epoch, const EmbeddingModel& m) {
    SaveCheckpoint((dir / "checkpoint").string(), m, spec.reweight.seed,
                   epoch);
  };
  if (log) {
    const int every = std::max(1, spec.reweight.epochs / 10);
    hooks.on_epoch = [&](const EpochStats& s) {
      if (s.epoch % every == 0 || s.epoch == spec.reweight.epochs) {
        log(fmt::format("epoch {}/{} loss {:.6f} reg {:.6f}", s.epoch,
                        spec.reweight.epochs, s.mean_loss, s.reg_loss));
      }
    };
  }
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  try {
    result = Train(spec.reweight, spec.model, ds, model, hooks);
  } catch (const RuntimeAbort& e) {
    throw RuntimeAbort(fmt::format("run {} ({} alpha={} beta={} seed={}): {}",
                                   hash, VariantName(spec.reweight.variant),
                                   spec.reweight.alpha, spec.reweight.beta,
                                   spec.reweight.seed, e.what()));
  }
  SaveCheckpoint((dir / "checkpoint").string(), model, spec.reweight.seed,
                 spec.reweight.epochs);
  WriteWith(dir / "loss.csv",
            [&](std::ostream& out) { WriteLossCsv(out, result.trace); });

  std::optional<LgnPropagator> prop;
  if (model.kind == ModelKind::kLGN) prop.emplace(ds, model.layers);
  const Scorer scorer = Scorer::FromModel(model, prop ? &*prop : nullptr);
  const RankingResult rr = RankItems(ds, spec.k, scorer, spec.threads);
  const QuadrantAssignment qa = AssignQuadrants(ds);

  RunRecord rec;
  rec.config_hash = hash;
  rec.seed = spec.reweight.seed;
  rec.variant = spec.reweight.variant;
  rec.alpha = spec.reweight.alpha;
  rec.beta = spec.reweight.beta;
  rec.model = spec.model.kind;
  rec.epochs = spec.reweight.epochs;
  rec.split = split;
  rec.config = canonical;
  rec.eval = Evaluate(rr, ds, qa, spec.correlation);
  rec.wallclock_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - start)
                        .count();
  WriteFileAtomic(dir / "eval.json", ToJson(rec.eval).dump(2) + "\n");
  WriteFileAtomic(record_path, ToJson(rec).dump(2) + "\n");
  return rec;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridCell {
  double alpha = 0;
  double beta = 0;
  double recall = 0;  // mean over seeds
  double bias = 0;
  int runs = 0;
};

// Max recall; cells within tol of the best recall count as ties, resolved
// by lower beta, then lower alpha.
inline std::size_t SelectGridWinner(const std::vector<GridCell>& cells,
                                    double tol = 1e-4) {
  if (cells.empty()) throw InputError("grid is empty");
  double best = cells.front().recall;
  for (const auto& c : cells) best = std::max(best, c.recall);
  std::optional<std::size_t> winner;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (best - cells[k].recall >= tol) continue;
    if (!winner) {
      winner = k;
      continue;
    }
    const auto& w = cells[*winner];
    if (std::tie(cells[k].beta, cells[k].alpha) < std::tie(w.beta, w.alpha)) {
      winner = k;
    }
  }
  return *winner;
}

enum class SelectionMode { kTest, kValidation };

struct ExperimentSpec {
  DataSource data;
  ModelConfig model;
  int epochs = 400;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<double> alphas = {0, 0.25, 0.5, 0.75, 1};
  std::vector<double> betas = {0, -0.5, -1};
  std::vector<Variant> baselines = {Variant::kVanilla, Variant::kOnlyItem,
                                    Variant::kOnlyUser};
  int k = 20;
  Correlation correlation = Correlation::kPearson;
  SelectionMode selection = SelectionMode::kTest;
  double validation_fraction = 0.1;
  std::uint64_t validation_seed = 0;
  double tie_tolerance = 1e-4;
  int threads = 1;
  std::string output_dir = "experiment";
};

inline ExperimentSpec ParseExperimentSpec(const json& j,
                                          const fs::path& base_dir = {}) {
  try {
    if (!j.is_object()) throw InputError("grid spec must be a JSON object");
    ExperimentSpec spec;
    spec.data = ParseDataSource(j, base_dir);
    spec.model = ParseModelConfig(j.value("model", json()));
    spec.epochs = j.value("epochs", spec.epochs);
    if (spec.epochs < 0) throw InputError("epochs must be >= 0");
    if (j.contains("seeds")) {
      spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } else if (j.contains("seed")) {
      spec.seeds = {j.at("seed").get<std::uint64_t>()};
    }
    if (j.contains("alphas")) {
      spec.alphas = j.at("alphas").get<std::vector<double>>();
    }
    if (j.contains("betas")) {
      spec.betas = j.at("betas").get<std::vector<double>>();
    }
    if (j.contains("baselines")) {
      spec.baselines.clear();
      for (const auto& v : j.at("baselines")) {
        const Variant variant = ParseVariant(v.get<std::string>());
        if (variant == Variant::kUI) {
          throw InputError("baselines cannot include ui (the grid produces it)");
        }
        spec.baselines.push_back(variant);
      }
    }
    if (spec.seeds.empty() || spec.alphas.empty() || spec.betas.empty()) {
      throw InputError("seeds, alphas and betas must be nonempty");
    }
    for (double a : spec.alphas) {
      for (double b : spec.betas) {
        ReweightConfig::ForVariant(Variant::kUI, a, b).Validate();
      }
    }
    spec.k = j.value("k", spec.k);
    if (spec.k < 1) throw InputError("k must be >= 1");
    if (j.contains("correlation")) {
      spec.correlation =
          ParseCorrelation(j.at("correlation").get<std::string>());
    }
    const std::string sel = j.value("selection", std::string("test"));
    if (sel == "test") {
      spec.selection = SelectionMode::kTest;
    } else if (sel == "validation") {
      spec.selection = SelectionMode::kValidation;
    } else {
      throw InputError("selection must be 'test' or 'validation'");
    }
    spec.validation_fraction =
        j.value("validation_fraction", spec.validation_fraction);
    spec.validation_seed = j.value("validation_seed", spec.validation_seed);
    spec.tie_tolerance = j.value("tie_tolerance", spec.tie_tolerance);
    spec.threads = j.value("threads", spec.threads);
    spec.output_dir =
        ResolvePath(base_dir, j.value("output_dir", spec.output_dir)).string();
    return spec;
  } catch (const json::exception& e) {
    throw InputError(std::string("grid spec: ") + e.what());
  }
}

inline RunSpec MakeRunSpec(const ExperimentSpec& spec, Variant v, double alpha,
                           double beta, std::uint64_t seed) {
  RunSpec run;
  run.data = spec.data;
  run.reweight = ReweightConfig::ForVariant(v, alpha, beta);
  run.reweight.epochs = spec.epochs;
  run.reweight.seed = seed;
  run.model = spec.model;
  run.k = spec.k;
  run.correlation = spec.correlation;
  run.threads = spec.threads;
  run.output_dir = spec.output_dir;
  return run;
}

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t winner = 0;
  std::vector<RunRecord> records;  // test-split runs, for reporting
};

inline void WriteGridCsv(std::ostream& out, const GridResult& g) {
  out << "alpha,beta,runs,recall,bias,selected\n";
  for (std::size_t k = 0; k < g.cells.size(); ++k) {
    const auto& c = g.cells[k];
    out << fmt::format("{},{},{},{:.10g},{:.10g},{}\n", c.alpha, c.beta,
                       c.runs, c.recall, c.bias, k == g.winner ? 1 : 0);
  }
}

// Runs every (alpha, beta) cell for every seed, selects the winner and runs
// the baselines. Output layout under spec.output_dir:
//   runs/<hash>/         test-split runs (all cells in test mode)
//   validation/<hash>/   cell runs on the holdout split (validation mode)
//   grid.csv, selected.json
inline GridResult RunGrid(const ExperimentSpec& spec, const LogFn& log = {}) {
  const LoadedData data = LoadData(spec.data);
  if (log) {
    for (const auto& w : data.loaded.warnings) log("warning: " + w);
  }
  const InteractionDataset& ds = data.loaded.dataset;
  const fs::path root(spec.output_dir);
  const fs::path runs_dir = root / "runs";

  const bool validation = spec.selection == SelectionMode::kValidation;
  std::optional<InteractionDataset> holdout;
  std::string holdout_hash = data.content_hash;
  if (validation) {
    holdout = HoldoutSplit(ds, spec.validation_fraction, spec.validation_seed);
    Fnv1a h;
    h.Update(data.content_hash);
    h.Update(fmt::format("|holdout {} {}", spec.validation_fraction,
                         spec.validation_seed));
    holdout_hash = h.hex();
  }

  GridResult out;
  std::vector<std::vector<RunRecord>> cell_runs;
  for (double b : spec.betas) {
    for (double a : spec.alphas) {
      GridCell cell{a, b, 0, 0, 0};
      std::vector<RunRecord> runs;
      for (std::uint64_t seed : spec.seeds) {
        if (log) log(fmt::format("grid cell alpha={} beta={} seed={}", a, b,
                                 seed));
        const RunSpec rs = MakeRunSpec(spec, Variant::kUI, a, b, seed);
        RunRecord rec =
            validation ? RunTraining(rs, *holdout, holdout_hash,
                                     root / "validation", "validation", log)
                       : RunTraining(rs, ds, data.content_hash, runs_dir,
                                     "test", log);
        cell.recall += rec.eval.overall.quality.recall;
        cell.bias += rec.eval.overall.bias.value;
        ++cell.runs;
        runs.push_back(std::move(rec));
      }
      cell.recall /= cell.runs;
      cell.bias /= cell.runs;
      out.cells.push_back(cell);
      cell_runs.push_back(std::move(runs));
    }
  }
  out.winner = SelectGridWinner(out.cells, spec.tie_tolerance);
  const GridCell& win = out.cells[out.winner];
  if (log) {
    log(fmt::format("selected alpha={} beta={} (recall {:.6f})", win.alpha,
                    win.beta, win.recall));
  }

  if (validation) {
    for (std::uint64_t seed : spec.seeds) {
      out.records.push_back(RunTraining(
          MakeRunSpec(spec, Variant::kUI, win.alpha, win.beta, seed), ds,
          data.content_hash, runs_dir, "test", log));
    }
  } else {
    for (auto& runs : cell_runs) {
      for (auto& r : runs) out.records.push_back(r);
    }
  }
  for (Variant v : spec.baselines) {
    for (std::uint64_t seed : spec.seeds) {
      out.records.push_back(RunTraining(MakeRunSpec(spec, v, 0, 0, seed), ds,
                                        data.content_hash, runs_dir, "test",
                                        log));
    }
  }

  WriteWith(root / "grid.csv",
            [&](std::ostream& o) { WriteGridCsv(o, out); });
  const json selected = {
      {"model", ModelKindName(spec.model.kind)},
      {"alpha", win.alpha},
      {"beta", win.beta},
      {"recall", win.recall},
      {"bias", win.bias},
      {"selection", validation ? "validation" : "test"},
      {"tie_tolerance", spec.tie_tolerance}};
  WriteFileAtomic(root / "selected.json", selected.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Reports


struct MetricMeans {
  double recall = 0;
  double precision = 0;
  double ndcg = 0;
  double bias = 0;
};

// One (model, variant, alpha, beta) group, averaged over its seeds.
struct ReportRow {
  ModelKind model = ModelKind::kMF;
  Variant variant = Variant::kVanilla;
  double alpha = 0;
  double beta = 0;
  int seeds = 0;
  MetricMeans overall;
  std::array<std::optional<MetricMeans>, 4> quadrants;
  std::array<int, 4> quadrant_users{};
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
};

inline MetricMeans ToMeans(const MetricRow& m) {
  return {m.quality.recall, m.quality.precision, m.quality.ndcg,
          m.bias.value};
}

// Test-split records grouped by configuration. When `selected` (a grid's
// selected.json) is given, ui groups other than the selected cell of the
// same model are dropped.
inline Report BuildReport(const std::vector<RunRecord>& records,
                          const std::optional<json>& selected = {}) {
  using Key = std::tuple<int, int, double, double>;
  std::map<Key, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    if (r.split != "test") continue;
    if (selected && r.variant == Variant::kUI &&
        selected->value("model", std::string()) == ModelKindName(r.model) &&
        (r.alpha != selected->value("alpha", -1.0) ||
         r.beta != selected->value("beta", 1.0))) {
      continue;
    }
    groups[{static_cast<int>(r.model), static_cast<int>(r.variant), r.alpha,
            -r.beta}]
        .push_back(&r);
  }
  Report report;
  if (groups.empty()) throw InputError("no test-split run records to report");
  for (const auto& [key, members] : groups) {
    ReportRow row;
    row.model = members.front()->model;
    row.variant = members.front()->variant;
    row.alpha = members.front()->alpha;
    row.beta = members.front()->beta;
    row.seeds = static_cast<int>(members.size());
    std::array<int, 4> present{};
    std::array<MetricMeans, 4> qsum{};
    for (const RunRecord* r : members) {
      const MetricMeans m = ToMeans(r->eval.overall);
      row.overall.recall += m.recall / row.seeds;
      row.overall.precision += m.precision / row.seeds;
      row.overall.ndcg += m.ndcg / row.seeds;
      row.overall.bias += m.bias / row.seeds;
      for (int q = 0; q < 4; ++q) {
        const auto& qr = r->eval.quadrants[q];
        row.quadrant_users[q] = std::max(row.quadrant_users[q], qr.users);
        if (!qr.metrics) continue;
        const MetricMeans qm = ToMeans(*qr.metrics);
        ++present[q];
        qsum[q].recall += qm.recall;
        qsum[q].precision += qm.precision;
        qsum[q].ndcg += qm.ndcg;
        qsum[q].bias += qm.bias;
      }
    }
    for (int q = 0; q < 4; ++q) {
      if (present[q] == 0) continue;
      row.quadrants[q] = MetricMeans{
          qsum[q].recall / present[q], qsum[q].precision / present[q],
          qsum[q].ndcg / present[q], qsum[q].bias / present[q]};
    }
    report.rows.push_back(row);
  }
  for (ModelKind kind : {ModelKind::kMF, ModelKind::kLGN}) {
    bool has_model = false, has_vanilla = false;
    for (const auto& row : report.rows) {
      if (row.model != kind) continue;
      has_model = true;
      has_vanilla |= row.variant == Variant::kVanilla;
    }
    if (has_model && !has_vanilla) {
      report.warnings.push_back(fmt::format(
          "no vanilla run for model {}; % change columns left empty",
          ModelKindName(kind)));
    }
  }
  return report;
}

inline const ReportRow* FindVanilla(const Report& report, ModelKind kind) {
  for (const auto& row : report.rows) {
    if (row.model == kind && row.variant == Variant::kVanilla) return &row;
  }
  return nullptr;
}

// Signed one-decimal percentage; empty when the baseline is zero.
inline std::string PercentChange(double value, double baseline) {
  if (baseline == 0) return "";
  return fmt::format("{:+.1f}", 100.0 * (value - baseline) / baseline);
}

inline std::string RowPrefix(const ReportRow& row) {
  return fmt::format("{},{},{},{}", ModelKindName(row.model),
                     VariantName(row.variant), row.alpha, row.beta);
}

inline void WriteResultsCsv(std::ostream& out, const Report& report) {
  out << "model,variant,alpha,beta,seeds,recall,precision,ndcg,bias,"
         "recall_change_pct,precision_change_pct,ndcg_change_pct,"
         "bias_change_pct\n";
  for (const auto& row : report.rows) {
    const ReportRow* base = FindVanilla(report, row.model);
    const auto& m = row.overall;
    out << fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g}", RowPrefix(row),
                       row.seeds, m.recall, m.precision, m.ndcg, m.bias);
    if (base != nullptr && row.variant != Variant::kVanilla) {
      const auto& b = base->overall;
      out << ',' << PercentChange(m.recall, b.recall) << ','
          << PercentChange(m.precision, b.precision) << ','
          << PercentChange(m.ndcg, b.ndcg) << ','
          << PercentChange(m.bias, b.bias) << '\n';
    } else {
      out << ",,,,\n";
    }
  }
}

inline void WriteParetoCsv(std::ostream& out, const Report& report) {
  out << "model,variant,alpha,beta,recall,bias\n";
  for (const auto& row : report.rows) {
    out << fmt::format("{},{:.10g},{:.10g}\n", RowPrefix(row),
                       row.overall.recall, row.overall.bias);
  }
}

// Absolute differences to the vanilla row of the same model and quadrant.
inline void WriteQuadrantsCsv(std::ostream& out, const Report& report) {
  out << "model,variant,alpha,beta,quadrant,users,recall,precision,ndcg,bias,"
         "recall_delta,precision_delta,ndcg_delta,bias_delta\n";
  auto emit = [&](const ReportRow& row, const std::string& name, int users,
                  const std::optional<MetricMeans>& m,
                  const std::optional<MetricMeans>& base) {
    out << fmt::format("{},{},{}", RowPrefix(row), name, users);
    if (!m) {
      out << ",,,,,,,,\n";
      return;
    }
    out << fmt::format(",{:.10g},{:.10g},{:.10g},{:.10g}", m->recall,
                       m->precision, m->ndcg, m->bias);
    if (base && row.variant != Variant::kVanilla) {
      out << fmt::format(",{:.10g},{:.10g},{:.10g},{:.10g}\n",
                         m->recall - base->recall,
                         m->precision - base->precision,
                         m->ndcg - base->ndcg, m->bias - base->bias);
    } else {
      out << ",,,,\n";
    }
  };
  for (const auto& row : report.rows) {
    const ReportRow* base = FindVanilla(report, row.model);
    int total = 0;
    for (int u : row.quadrant_users) total += u;
    emit(row, "overall", total, row.overall,
         base ? std::optional<MetricMeans>(base->overall) : std::nullopt);
    for (Quadrant q : kAllQuadrants) {
      const int qi = static_cast<int>(q);
      emit(row, QuadrantName(q), row.quadrant_users[qi], row.quadrants[qi],
           base ? base->quadrants[qi] : std::nullopt);
    }
  }
}

// Reads every run.json under runs_dir (plus selected.json from runs_dir or
// its parent) and writes results.csv, pareto.csv and quadrants.csv.
inline Report RunReport(const fs::path& runs_dir, const fs::path& out_dir,
                        const LogFn& log = {}) {
  const std::vector<RunRecord> records = LoadRunRecords(runs_dir);
  if (records.empty()) {
    throw InputError("no run.json found under " + runs_dir.string());
  }
  std::optional<json> selected;
  for (const fs::path& p :
       {runs_dir / "selected.json", runs_dir.parent_path() / "selected.json"}) {
    if (fs::exists(p)) {
      selected = ReadJsonFile(p);
      break;
    }
  }
  Report report = BuildReport(records, selected);
  if (log) {
    for (const auto& w : report.warnings) log("warning: " + w);
  }
  WriteWith(out_dir / "results.csv",
            [&](std::ostream& o) { WriteResultsCsv(o, report); });
  WriteWith(out_dir / "pareto.csv",
            [&](std::ostream& o) { WriteParetoCsv(o, report); });
  WriteWith(out_dir / "quadrants.csv",
            [&](std::ostream& o) { WriteQuadrantsCsv(o, report); });
  return report;
}

// ---------------------------------------------------------------------------
// Dataset analysis

struct AnalyzeResult {
  QuadrantAssignment quadrants;
  NullAnalysis null;
  std::vector<std::string> warnings;
};

// Writes profiles.csv, ccdf.csv, significance.csv, user_ids.csv,
// item_ids.csv and analysis.json into out_dir.
inline AnalyzeResult RunAnalyze(const DataSource& src,
                                const NullAnalysisOptions& opt,
                                const fs::path& out_dir,
                                const LogFn& log = {}) {
  LoadResult loaded = LoadDataset(src.train_path, src.test_path, src.id_mode);
  const InteractionDataset& ds = loaded.dataset;
  AnalyzeResult out;
  out.warnings = loaded.warnings;
  if (log) {
    for (const auto& w : out.warnings) log("warning: " + w);
    log(fmt::format("{} users, {} items, {} train edges, {} test edges",
                    ds.num_users(), ds.num_items(), ds.num_train(),
                    ds.test_edges().size()));
  }
  out.quadrants = AssignQuadrants(ds);
  if (out.quadrants.profiles.empty()) {
    throw InputError("no user has a train interaction");
  }
  if (opt.bins < 1) throw InputError("--bins must be >= 1");
  if (opt.samples < 2) throw InputError("--null-samples must be >= 2");
  if (opt.swap_multiplier < 1) {
    throw InputError("--swap-multiplier must be >= 1");
  }
  out.null = RunNullAnalysis(ds, opt);
  const std::int64_t swaps = opt.swap_multiplier * ds.num_train();
  if (out.null.min_swap_accepts < swaps && log) {
    log(fmt::format(
        "warning: a null sample reached only {} of {} requested swaps",
        out.null.min_swap_accepts, swaps));
  }

  WriteWith(out_dir / "profiles.csv", [&](std::ostream& o) {
    WriteProfilesCsv(o, out.quadrants.profiles, loaded.ids);
  });
  WriteWith(out_dir / "ccdf.csv", [&](std::ostream& o) {
    WriteCcdfCsv(o, NicheMainstreamCcdfs(ds, out.quadrants));
  });
  WriteWith(out_dir / "significance.csv", [&](std::ostream& o) {
    WriteSignificanceCsv(o, out.null.significance);
  });
  WriteWith(out_dir / "user_ids.csv",
            [&](std::ostream& o) { WriteIdMap(o, loaded.ids.user_external); });
  WriteWith(out_dir / "item_ids.csv",
            [&](std::ostream& o) { WriteIdMap(o, loaded.ids.item_external); });

  const auto counts = out.quadrants.Counts();
  json quadrant_counts = json::object();
  for (Quadrant q : kAllQuadrants) {
    quadrant_counts[QuadrantName(q)] = counts[static_cast<int>(q)];
  }
  int significant_cells = 0;
  for (const auto& c : out.null.significance.cells) {
    significant_cells += c.significant ? 1 : 0;
  }
  const json summary = {
      {"num_users", ds.num_users()},
      {"num_items", ds.num_items()},
      {"train_edges", ds.num_train()},
      {"test_edges", ds.test_edges().size()},
      {"excluded_users", out.quadrants.excluded_users.size()},
      {"mean_activity", out.quadrants.mean_activity},
      {"mean_preference", out.quadrants.mean_preference},
      {"quadrants", quadrant_counts},
      {"bins_requested", opt.bins},
      {"bins_activity", out.null.boundaries.rows()},
      {"bins_preference", out.null.boundaries.cols()},
      {"activity_boundaries", out.null.boundaries.activity},
      {"preference_boundaries", out.null.boundaries.preference},
      {"null_samples", opt.samples},
      {"seed", opt.seed},
      {"swaps_per_sample", swaps},
      {"min_swap_accepts", out.null.min_swap_accepts},
      {"significant_cells", significant_cells}};
  WriteFileAtomic(out_dir / "analysis.json", summary.dump(2) + "\n");
  return out;
}

}  // namespace pnrec
