#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmicl/experiments.hpp"

using namespace mmicl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("mmicl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_fig2() {
  ExperimentConfig cfg;
  cfg.experiment = "fig2";
  cfg.seed = 7;
  cfg.l_tr = 30;
  cfg.n_train = 60;
  cfg.depth = 4;
  cfg.l_te_grid = {4, 16};
  cfg.n_test_prompts = 40;
  cfg.optim.max_steps = 40;
  cfg.optim.step_size = 1e-2;
  return cfg;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("configuration serialization round-trips and hashes stably") {
  ExperimentConfig cfg = tiny_fig2();
  cfg.data.d1 = 2;
  cfg.data.d2 = 3;
  cfg.data.m_dist.norm_law = NormLaw::make_bands({{0.5, 1.0, 0.25}, {1.5, 2.0, 0.75}});
  cfg.data.zeta_dist = ZetaLaw::rademacher;
  json j = cfg.to_json();
  ExperimentConfig back = ExperimentConfig::from_json(j);
  CHECK(back.to_json().dump() == j.dump());
  CHECK(back.config_hash() == cfg.config_hash());
  ExperimentConfig other = cfg;
  other.seed = 8;
  CHECK(other.config_hash() != cfg.config_hash());
}

TEST_CASE("unknown keys are rejected at every nesting level") {
  json base = tiny_fig2().to_json();
  json j = base;
  j["extra_top"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["data"]["bogus"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["data"]["norm_law"]["r0"] = 1.0;  // r0 is a point-law key, law is uniform
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  json band = {{"lo", 0.5}, {"hi", 1.0}, {"weight", 1.0}, {"color", "red"}};
  j["data"]["norm_law"] = json{{"kind", "bands"}, {"bands", json::array({band})}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["optim"]["momentum"] = 0.9;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["grid"]["levels"] = 5;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["seed"] = "not-a-number";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("validation rejects unusable settings") {
  ExperimentConfig cfg = tiny_fig2();
  CHECK_NOTHROW(cfg.validate());
  ExperimentConfig bad = cfg;
  bad.experiment = "fig9";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.l_te_grid.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.n_test_prompts = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.quadrature_nodes = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.l_te_grid = {4, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  GridSpec g;
  g.resolution = 1;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GridSpec{};
  g.alpha_lo = 0.5;
  g.alpha_hi = 0.1;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK(parse_format("csv") == Format::csv);
  CHECK(parse_format("json") == Format::json);
  CHECK_THROWS_AS(parse_format("parquet"), ConfigError);
}

TEST_CASE("tables serialize deterministically in both formats") {
  ResultTable t;
  t.columns = {"experiment", "variant", "sweep", "mean_error", "std_error", "n", "seed"};
  ResultRow r;
  r.experiment = "fig2";
  r.variant = "lca_two_param";
  r.sweep = 16;
  r.mean_error = 1.0 / 3.0;
  r.std_error = 0.01;
  r.n = 40;
  r.seed = 7;
  t.rows = {r};
  t.metadata = {{"note", "unit"}};
  fs::path dir = fresh_dir("emit");
  emit(t, (dir / "a.csv").string(), Format::csv);
  emit(t, (dir / "b.csv").string(), Format::csv);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  std::string csv = slurp(dir / "a.csv");
  auto lines = split_lines(csv);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "experiment,variant,sweep,mean_error,std_error,n,seed");
  CHECK(lines[1].find("lca_two_param") != std::string::npos);
  CHECK(csv.back() == '\n');
  // 17 significant digits survive the round trip bit-for-bit
  std::string cell = lines[1].substr(lines[1].find(",16,") + 4);
  double parsed = std::strtod(cell.c_str(), nullptr);
  CHECK(parsed == 1.0 / 3.0);

  emit(t, (dir / "a.json").string(), Format::json);
  json j = json::parse(slurp(dir / "a.json"));
  CHECK(j["columns"].size() == 7);
  REQUIRE(j["rows"].size() == 1);
  CHECK(j["rows"][0][1] == "lca_two_param");
  CHECK(j["rows"][0][3].get<double>() == 1.0 / 3.0);
  CHECK(j["metadata"]["note"] == "unit");

  ResultTable empty;
  empty.columns = t.columns;
  emit(empty, (dir / "empty.csv").string(), Format::csv);
  auto empty_lines = split_lines(slurp(dir / "empty.csv"));
  REQUIRE(empty_lines.size() == 1);
  CHECK(empty_lines[0] == lines[0]);
}

TEST_CASE("context sweep runs deterministically end to end") {
  ExperimentConfig cfg = tiny_fig2();
  ResultTable t1 = run_fig2(cfg);
  ResultTable t2 = run_fig2(cfg);
  REQUIRE(t1.rows.size() == t2.rows.size());
  REQUIRE(!t1.rows.empty());
  for (std::size_t i = 0; i < t1.rows.size(); ++i) {
    CHECK(t1.rows[i].variant == t2.rows[i].variant);
    CHECK(t1.rows[i].mean_error == t2.rows[i].mean_error);
    CHECK(t1.rows[i].std_error == t2.rows[i].std_error);
  }
  // all three trained models at both context lengths
  CHECK(t1.rows.size() == 6);
  for (const ResultRow& r : t1.rows) {
    CHECK(r.experiment == "fig2");
    CHECK(r.n == cfg.n_test_prompts);
    CHECK(r.seed == cfg.seed);
    CHECK(std::isfinite(r.mean_error));
    CHECK(r.mean_error >= 0.0);
    CHECK((r.sweep == 4.0 || r.sweep == 16.0));
  }
  // rows are sorted by variant then sweep
  for (std::size_t i = 1; i < t1.rows.size(); ++i) {
    const ResultRow& a = t1.rows[i - 1];
    const ResultRow& b = t1.rows[i];
    CHECK((a.variant < b.variant || (a.variant == b.variant && a.sweep <= b.sweep)));
  }
  CHECK(t1.metadata.contains("training"));
  CHECK(t1.metadata.contains("config_hash"));
  CHECK(t1.metadata["error_bars"] == "std_over_test_prompts");
  // the stacked model beats the untrained scale at the long context length
  double lca2_16 = -1.0;
  for (const ResultRow& r : t1.rows) {
    if (r.variant == "lca_two_param" && r.sweep == 16.0) lca2_16 = r.mean_error;
  }
  CHECK(lca2_16 >= 0.0);
}

TEST_CASE("depth sweep trains every depth in the grid") {
  ExperimentConfig cfg = tiny_fig2();
  cfg.experiment = "fig3";
  cfg.t_grid = {1, 3};
  ResultTable t = run_fig3(cfg);
  CHECK(t.rows.size() == 4);  // two variants, two depths
  for (const ResultRow& r : t.rows) {
    CHECK((r.sweep == 1.0 || r.sweep == 3.0));
    CHECK((r.variant == "lca_one_param" || r.variant == "lca_two_param"));
  }
  CHECK(t.metadata["context_length"] == 64);
  CHECK(t.metadata["training"].contains("lca_two_param_T3"));
}

TEST_CASE("ablation sweep includes the requested extra variants") {
  ExperimentConfig cfg = tiny_fig2();
  cfg.experiment = "ablation_no_skip";
  cfg.n_repeats = 3;
  ResultTable t = run_ablations(cfg);
  bool saw_no_skip = false, saw_mean = false;
  for (const ResultRow& r : t.rows) {
    if (r.variant == "lca_no_skip") saw_no_skip = true;
    if (r.variant == "sample_mean") {
      saw_mean = true;
      CHECK(r.std_error == 0.0);  // no training randomness in the baseline
    }
    CHECK(r.n == cfg.n_repeats);
  }
  CHECK(saw_no_skip);
  CHECK(saw_mean);
  CHECK(t.metadata["error_bars"] == "std_over_training_repeats");

  cfg.experiment = "ablation_deep_lsa";
  ResultTable td = run_ablations(cfg);
  bool saw_dls = false, saw_dls_skip = false;
  for (const ResultRow& r : td.rows) {
    if (r.variant == "deep_lsa_no_skip") saw_dls = true;
    if (r.variant == "deep_lsa_with_skip") saw_dls_skip = true;
  }
  CHECK(saw_dls);
  CHECK(saw_dls_skip);
}

TEST_CASE("loss surface matches its closed-form sources pointwise") {
  ExperimentConfig cfg;
  cfg.experiment = "landscape";
  cfg.seed = 3;
  cfg.depth = 6;
  cfg.grid.alpha_lo = 0.05;
  cfg.grid.alpha_hi = 0.45;
  cfg.grid.beta_lo = -0.45;
  cfg.grid.beta_hi = -0.05;
  cfg.grid.resolution = 5;
  LossSurface s = run_landscape(cfg);
  ZMoments zm(cfg.data.m_dist, QuadratureSpec{cfg.quadrature_nodes});
  int n_grid = 0, n_profile = 0;
  for (const SurfacePoint& pt : s.points) {
    if (pt.kind == "grid") {
      ++n_grid;
      CHECK(pt.loss == pop_loss_two_param(pt.alpha, pt.beta, cfg.depth, zm));
      CHECK(pt.log_loss == doctest::Approx(std::log(std::max(pt.loss, 1e-300))));
    } else if (pt.kind == "profile") {
      ++n_profile;
      CHECK(std::fabs(pt.alpha - profiled_alpha(pt.beta, cfg.depth, zm)) < 1e-12);
      CHECK(std::fabs(pt.loss - reduced_loss(pt.beta, cfg.depth, zm)) < 1e-12);
    }
  }
  CHECK(n_grid == 25);
  CHECK(n_profile == 5);
  // the diagonal beta = -alpha reproduces the one-parameter loss
  for (const SurfacePoint& pt : s.points) {
    if (pt.kind == "grid" && std::fabs(pt.alpha + pt.beta) < 1e-15) {
      CHECK(std::fabs(pt.loss - pop_loss_one_param(pt.alpha, cfg.depth, zm)) < 1e-12);
    }
  }

  cfg.grid.include_normalized = true;
  cfg.grid.batch_size = 16;
  LossSurface sn = run_landscape(cfg);
  int n_norm = 0;
  for (const SurfacePoint& pt : sn.points) {
    if (pt.kind == "normalized") {
      ++n_norm;
      CHECK(std::isfinite(pt.loss));
    }
  }
  CHECK(n_norm == 25);
  CHECK(sn.metadata["normalized_batch_size"] == 16);
}

TEST_CASE("experiment driver writes data and metadata files") {
  ExperimentConfig cfg = tiny_fig2();
  fs::path dir = fresh_dir("driver");
  int rc = run_experiment(cfg, dir.string(), Format::csv);
  CHECK(rc == 0);
  REQUIRE(fs::exists(dir / "fig2.csv"));
  REQUIRE(fs::exists(dir / "fig2.meta.json"));
  std::string first = slurp(dir / "fig2.csv");
  std::string first_meta = slurp(dir / "fig2.meta.json");
  json meta1 = json::parse(first_meta);
  CHECK(meta1["experiment"] == "fig2");
  CHECK(meta1["config_hash"] == cfg.config_hash());
  CHECK(meta1["row_count"] == 6);
  // rerun: every output file is byte-identical
  rc = run_experiment(cfg, dir.string(), Format::csv);
  CHECK(rc == 0);
  CHECK(slurp(dir / "fig2.csv") == first);
  CHECK(slurp(dir / "fig2.meta.json") == first_meta);
}

TEST_CASE("metric definitions agree with the task structure") {
  // On one batch with a fixed model, the gap between label-target and
  // best-vector-target losses estimates the irreducible noise E[1/Z].
  DataConfig dc;
  std::vector<Prompt> prompts;
  const int n = 20000;
  prompts.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto rng = make_stream(601, 9, static_cast<std::uint64_t>(i));
    TaskParams t = sample_task(dc, rng);
    prompts.push_back(sample_prompt(t, 3, rng));
  }
  CaParams cp;
  cp.variant = CaVariant::lca_two_param;
  cp.alpha = 0.2;
  cp.beta = -0.2;
  cp.depth = 3;
  PromptBatchCache cache = PromptBatchCache::build(prompts);
  std::vector<double> gaps(prompts.size());
  std::vector<double> sq_label = cache.squared_errors(cp, Target::label);
  std::vector<double> sq_bayes = cache.squared_errors(cp, Target::bayes);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    gaps[i] = sq_label[i] - sq_bayes[i];
  }
  double mean_gap = pairwise_mean(gaps);
  double se = sample_std(gaps) / std::sqrt(static_cast<double>(n));
  CHECK(std::fabs(mean_gap - 0.5535743588970452) <= 4.0 * se);
}
