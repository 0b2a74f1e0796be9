#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmicl/optim.hpp"
#include "mmicl/theory.hpp"

namespace mmicl {

enum class Format { csv, json };

Format parse_format(const std::string& name);

struct GridSpec {
  double alpha_lo = 0.0;
  double alpha_hi = 1.0;
  double beta_lo = -1.0;
  double beta_hi = 0.0;
  int resolution = 200;
  bool include_normalized = false;
  int batch_size = 128;

  void validate() const;
};

struct ExperimentConfig {
  std::string experiment = "fig2";
  std::uint64_t seed = 1;
  DataConfig data;
  int l_tr = 100;
  int n_train = 2000;
  int depth = 10;
  std::vector<int> l_te_grid = {2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
  std::vector<int> t_grid = {1,  2,  3,  4,  5,  6,  7,  8,  9,  10,
                             11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  int n_test_prompts = 1000;
  int n_repeats = 10;
  Target target_metric = Target::bayes;
  int quadrature_nodes = 256;
  OptimConfig optim;
  GridSpec grid;

  void validate() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // FNV-1a fingerprint of the canonical JSON serialization.
  std::string config_hash() const;
};

struct ResultRow {
  std::string experiment;
  std::string variant;
  double sweep = 0.0;     // L_te for context sweeps, depth for depth sweeps
  double mean_error = 0.0;
  double std_error = 0.0; // std over prompts (fig2/fig3) or repeats (ablations)
  long n = 0;             // how many samples the std is over
  std::uint64_t seed = 0;
};

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<ResultRow> rows;
  nlohmann::json metadata;
};

struct SurfacePoint {
  std::string kind;  // grid | profile | normalized
  double alpha = 0.0;
  double beta = 0.0;
  double loss = 0.0;
  double log_loss = 0.0;
};

struct LossSurface {
  int depth = 10;
  int quadrature_nodes = 256;
  std::uint64_t seed = 0;
  std::vector<SurfacePoint> points;
  nlohmann::json metadata;
};

// Context-length sweep: trains the single-layer model and both stacked
// parameterizations on n_train prompts at l_tr, then scores them on fresh
// prompts at every l_te. Error bars are std over test prompts.
ResultTable run_fig2(const ExperimentConfig& cfg);

// Depth sweep at l_te = 64: retrains the stacked parameterizations at every
// depth in t_grid. Error bars are std over test prompts.
ResultTable run_fig3(const ExperimentConfig& cfg);

// Context-length sweep with the ablated variants and the sample-mean
// baseline added, repeated over n_repeats training runs. Error bars are std
// over repeats. experiment selects which ablations appear:
//   ablation_no_skip:  + lca_no_skip, sample_mean
//   ablation_deep_lsa: + deep_lsa_no_skip, deep_lsa_with_skip, sample_mean
ResultTable run_ablations(const ExperimentConfig& cfg);

// Two-parameter population loss on an (alpha, beta) grid, plus the profiled
// curve (alpha_star(beta), beta) and optionally an empirical surface for the
// column-normalized variant on a fixed prompt batch.
LossSurface run_landscape(const ExperimentConfig& cfg);

// Deterministic serialization: UTF-8, header row, fixed column order, 17
// significant digits, newline-terminated. Identical inputs produce identical
// bytes.
void emit(const ResultTable& table, const std::string& path, Format format);
void emit(const LossSurface& surface, const std::string& path, Format format);

// Runs the configured experiment and writes <experiment>.<ext> plus
// <experiment>.meta.json under out_dir. Returns 0 on success, 1 on failure.
int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                   Format format);

// Fast self-check suite for the CLI: one line per invariant, exit-style
// return (0 all pass, 1 otherwise).
int run_check();

}  // namespace mmicl
