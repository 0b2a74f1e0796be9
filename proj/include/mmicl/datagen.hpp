#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

#include "mmicl/common.hpp"

namespace mmicl {

// Law of the modality-vector norm ||m||. Three shapes cover everything the
// experiments need: a uniform interval, a point mass (degenerate sanity
// configs), and a weighted mixture of uniform bands (spread-controlled laws
// for the figure runs).
enum class NormLawKind { uniform, point, bands };

struct Band {
  double lo = 0.0;
  double hi = 0.0;
  double weight = 1.0;
};

struct NormLaw {
  NormLawKind kind = NormLawKind::uniform;
  double a = 0.0;
  double b = 2.0;
  double r0 = 1.0;
  std::vector<Band> bands;

  static NormLaw make_uniform(double lo, double hi);
  static NormLaw make_point(double r);
  static NormLaw make_bands(std::vector<Band> bs);

  void validate() const;
  // Support bounds of the radius.
  double lower() const;
  double upper() const;
  // Unified band view with weights normalized to sum 1. A point law becomes
  // a single zero-width band.
  std::vector<Band> as_bands() const;
  double sample(std::mt19937_64& rng) const;
  std::string describe() const;
};

// Distribution of m: radius from norm_law, direction uniform on the unit
// sphere. Only the radius enters any closed form; isotropy of the direction
// is what the tests exploit.
struct MDistribution {
  NormLaw norm_law = NormLaw::make_uniform(0.0, 2.0);

  void validate() const;
  double m_lower() const { return norm_law.lower() * norm_law.lower(); }
  double m_upper() const { return norm_law.upper() * norm_law.upper(); }
  // Point-mass radius. Useful for closed-form sanity checks; the main
  // distributional assumptions elsewhere require m_lower < m_upper.
  bool degenerate() const { return norm_law.kind == NormLawKind::point; }
};

enum class ZetaLaw { gaussian, rademacher, uniform };

ZetaLaw parse_zeta_law(const std::string& name);
std::string zeta_law_name(ZetaLaw law);

struct DataConfig {
  int d1 = 5;
  int d2 = 5;
  MDistribution m_dist;
  ZetaLaw zeta_dist = ZetaLaw::gaussian;

  int d() const { return d1 + d2; }
  void validate() const;
};

// Per-task latent quantities. Z = 1 + ||m||^2 is the spiked eigenvalue of
// the population covariance I + m m^T, and w = (zeta/Z) m is the best linear
// predictor of the label from a covariate.
struct TaskParams {
  Eigen::VectorXd m;
  double zeta = 0.0;
  double Z = 1.0;
  Eigen::VectorXd w;

  static TaskParams from_m(const Eigen::VectorXd& m, double zeta);
};

// One prompt: L context pairs plus a query pair, all driven by the shared
// latent scalars u_i. The latent vector is retained for white-box tests only;
// model forward passes must never read it.
struct Prompt {
  Eigen::MatrixXd X;   // d x L context covariates
  Eigen::VectorXd y;   // L context labels
  Eigen::VectorXd x_q; // query covariate
  double y_q = 0.0;
  TaskParams task;
  Eigen::VectorXd u;   // L+1 latents (context then query); test-only

  int d() const { return static_cast<int>(X.rows()); }
  int L() const { return static_cast<int>(X.cols()); }
};

double sample_zeta(ZetaLaw law, std::mt19937_64& rng);

TaskParams sample_task(const DataConfig& cfg, std::mt19937_64& rng);

Prompt sample_prompt(const TaskParams& task, int L, std::mt19937_64& rng);

// <w, x_q>: the best prediction of y_q given the task and the query point.
double bayes_predict(const TaskParams& task, const Eigen::VectorXd& x_q);

// I + m m^T.
Eigen::MatrixXd population_covariance(const TaskParams& task);

// (1/L) X X^T.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& X);

}  // namespace mmicl
