#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

#include "mmicl/attention.hpp"
#include "mmicl/losses.hpp"

namespace mmicl {

// Block decomposition of single-layer weights:
//   w_kq = [[A, b_prime], [b^T, c]],  last row of w_pv = [u^T, v].
// Only (A, b, u, v) survive in the infinite-context limit of the prediction;
// b_prime and c multiply query-slot terms that vanish at rate 1/L.
struct LsaBlocks {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd b_prime;
  double c = 0.0;
  Eigen::VectorXd u;
  double v = 0.0;

  static LsaBlocks from_params(const LsaParams& params);
  // Rebuilds w_kq and the last row of w_pv exactly; other w_pv rows are zero.
  LsaParams reassemble() const;
  int d() const { return static_cast<int>(A.rows()); }
};

// Infinite-context regression vector of the single-layer model on one task:
//   what = A^T Lam u + zeta ((u.m) b + v A^T m) + zeta^2 v b,
// a quadratic polynomial in zeta. The task's best vector w = (zeta/Z) m is
// linear in zeta, so the two can only coincide on a measure-zero set of
// tasks unless the task law is degenerate.
Eigen::VectorXd lsa_limiting_weights(const LsaBlocks& blocks, const TaskParams& task);

struct MismatchReport {
  long n_tasks = 0;
  double threshold = 1e-6;
  long n_below = 0;        // tasks with ||what - w|| < threshold
  double frac_below = 0.0;
  double min_norm = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max_norm = 0.0;
  // Records which task law the scan used; the mismatch statement is about
  // the scanned law only, not every admissible law.
  std::string law_note;
};

// Samples tasks and measures ||what - w|| for each. A clean failure-to-match
// result is frac_below = 0 at threshold 1e-6.
MismatchReport theorem1_scan(const LsaBlocks& blocks, const DataConfig& cfg,
                             long n_tasks, std::mt19937_64& rng,
                             double threshold = 1e-6);

struct AlphaStarRow {
  int depth = 0;
  double alpha_star_t = 0.0;
  double gap = 0.0;  // |alpha_star_t - alpha_star_limit|
};

// Depth-indexed minimizers of the one-parameter loss, located by golden
// section over alpha in [0, 2/Z_lower] (the minimizer always lies below
// 1/Z_lower: the loss is increasing beyond it). Quadrature nodes are raised
// with depth so the degree-4T integrands stay exact.
std::vector<AlphaStarRow> alpha_star_sequence(const std::vector<int>& depths,
                                              const ZMoments& zm);

}  // namespace mmicl
