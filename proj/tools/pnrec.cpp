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
// pnrec: dataset analysis, reweighted-BPR training, grid search and reports.
// Exit codes: 0 ok, 1 input error, 2 runtime abort.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "pnrec/experiment.hpp"
#include "pnrec/synthetic.hpp"

namespace {

namespace fs = std::filesystem;

pnrec::LogFn StderrLog(bool quiet) {
  if (quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

int CmdAnalyze(const std::string& train, const std::string& test, bool raw,
               const pnrec::NullAnalysisOptions& opt, const std::string& mode,
               const std::string& out, bool quiet) {
  pnrec::NullAnalysisOptions o = opt;
  o.boundary_mode = mode == "mean" ? pnrec::BoundaryMode::kMean
                                   : pnrec::BoundaryMode::kQuantile;
  const pnrec::DataSource src{train, test,
                              raw ? pnrec::IdMode::kRaw : pnrec::IdMode::kDense};
  const auto result = pnrec::RunAnalyze(src, o, out, StderrLog(quiet));
  const auto counts = result.quadrants.Counts();
  std::cout << fmt::format(
      "users {} | power_mainstream {} power_niche {} light_mainstream {} "
      "light_niche {} | grid {}x{} | output {}\n",
      result.quadrants.profiles.size(), counts[0], counts[1], counts[2],
      counts[3], result.null.significance.rows, result.null.significance.cols,
      out);
  return 0;
}

int CmdTrain(const std::string& config, int threads, bool quiet) {
  const fs::path path(config);
  pnrec::RunSpec spec =
      pnrec::ParseRunSpec(pnrec::ReadJsonFile(path), path.parent_path());
  if (threads > 0) spec.threads = threads;
  const pnrec::LoadedData data = pnrec::LoadData(spec.data);
  const auto log = StderrLog(quiet);
  if (log) {
    for (const auto& w : data.loaded.warnings) log("warning: " + w);
  }
  const pnrec::RunRecord rec =
      pnrec::RunTraining(spec, data.loaded.dataset, data.content_hash,
                         spec.output_dir, "test", log);
  const auto& m = rec.eval.overall;
  std::cout << fmt::format(
      "{} {} alpha={} beta={} seed={} | recall@{} {:.6f} precision {:.6f} "
      "ndcg {:.6f} bias {:.6f} | {}\n",
      pnrec::ModelKindName(rec.model), pnrec::VariantName(rec.variant),
      rec.alpha, rec.beta, rec.seed, rec.eval.k, m.quality.recall,
      m.quality.precision, m.quality.ndcg, m.bias.value,
      (fs::path(spec.output_dir) / rec.config_hash).string());
  return 0;
}

int CmdGrid(const std::string& spec_path, int threads, bool quiet) {
  const fs::path path(spec_path);
  pnrec::ExperimentSpec spec = pnrec::ParseExperimentSpec(
      pnrec::ReadJsonFile(path), path.parent_path());
  if (threads > 0) spec.threads = threads;
  const pnrec::GridResult g = pnrec::RunGrid(spec, StderrLog(quiet));
  pnrec::WriteGridCsv(std::cout, g);
  const auto& w = g.cells[g.winner];
  std::cout << fmt::format("selected alpha={} beta={} recall={:.6f}\n",
                           w.alpha, w.beta, w.recall);
  return 0;
}

int CmdReport(const std::string& runs, std::string out, bool quiet) {
  if (out.empty()) out = runs;
  const pnrec::Report report = pnrec::RunReport(runs, out, StderrLog(quiet));
  pnrec::WriteResultsCsv(std::cout, report);
  return 0;
}

int CmdSynth(const pnrec::SyntheticConfig& cfg, const std::string& out) {
  const pnrec::SyntheticData data = pnrec::GenerateSynthetic(cfg);
  fs::create_directories(out);
  for (const bool test : {false, true}) {
    const fs::path p = fs::path(out) / (test ? "test.txt" : "train.txt");
    std::ofstream f(p);
    if (!f) throw pnrec::RuntimeAbort("cannot write " + p.string());
    pnrec::WriteAdjacency(f, data.dataset, test);
  }
  std::cout << fmt::format("{} users, {} items, {} train edges, {} test edges "
                           "| cohort {} | output {}\n",
                           data.dataset.num_users(), data.dataset.num_items(),
                           data.dataset.num_train(),
                           data.dataset.test_edges().size(),
                           data.cohort.size(), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Power-niche user analysis and reweighted BPR recommenders"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages on stderr");

  auto* analyze = app.add_subcommand(
      "analyze", "User profiles, activity CCDFs and null-model significance");
  std::string a_train, a_test, a_out = ".", a_mode = "quantile";
  bool a_raw = false;
  pnrec::NullAnalysisOptions a_opt;
  analyze->add_option("--train", a_train, "Train adjacency file")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("--test", a_test, "Test adjacency file")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("--bins", a_opt.bins, "Bins per axis")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  analyze->add_option("--null-samples", a_opt.samples, "Null samples")
      ->capture_default_str()
      ->check(CLI::Range(2, 1 << 30));
  analyze->add_option("--seed", a_opt.seed, "Random seed")
      ->capture_default_str();
  analyze->add_option("--swap-multiplier", a_opt.swap_multiplier,
                      "Accepted swaps per sample, in units of |E|")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  analyze->add_option("--threads", a_opt.threads, "Worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  analyze->add_option("--boundaries", a_mode, "Bin boundaries")
      ->capture_default_str()
      ->check(CLI::IsMember({"quantile", "mean"}));
  analyze->add_flag("--raw-ids", a_raw,
                    "Use raw ids as indices instead of dense re-indexing");
  analyze->add_option("--out", a_out, "Output directory")
      ->capture_default_str();

  auto* train = app.add_subcommand("train", "Train and evaluate one run");
  std::string t_config;
  int t_threads = 0;
  train->add_option("--config", t_config, "train.json")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--threads", t_threads, "Ranking threads");

  auto* grid = app.add_subcommand("grid", "Grid search over (alpha, beta)");
  std::string g_spec;
  int g_threads = 0;
  grid->add_option("--spec", g_spec, "Experiment spec JSON")
      ->required()
      ->check(CLI::ExistingFile);
  grid->add_option("--threads", g_threads, "Ranking threads");

  auto* report = app.add_subcommand(
      "report", "Aggregate run records into results, pareto, quadrants");
  std::string r_runs, r_out;
  report->add_option("--runs", r_runs, "Directory holding run records")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--out", r_out, "Output directory (default: --runs)");

  auto* synth = app.add_subcommand(
      "synth", "Write a synthetic popularity-skewed dataset");
  pnrec::SyntheticConfig s_cfg;
  std::string s_out = ".";
  synth->add_option("--users", s_cfg.num_users)->capture_default_str();
  synth->add_option("--items", s_cfg.num_items)->capture_default_str();
  synth->add_option("--zipf", s_cfg.zipf_exponent)->capture_default_str();
  synth->add_option("--topics", s_cfg.topics)->capture_default_str();
  synth->add_option("--cohort-fraction", s_cfg.cohort_fraction)
      ->capture_default_str();
  synth->add_option("--cohort-niche-prob", s_cfg.cohort_niche_prob)
      ->capture_default_str();
  synth->add_option("--seed", s_cfg.seed)->capture_default_str();
  synth->add_option("--out", s_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*analyze) {
      return CmdAnalyze(a_train, a_test, a_raw, a_opt, a_mode, a_out, quiet);
    }
    if (*train) return CmdTrain(t_config, t_threads, quiet);
    if (*grid) return CmdGrid(g_spec, g_threads, quiet);
    if (*report) return CmdReport(r_runs, r_out, quiet);
    if (*synth) return CmdSynth(s_cfg, s_out);
  } catch (const pnrec::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const pnrec::RuntimeAbort& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
