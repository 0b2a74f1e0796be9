#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "mmicl/attention.hpp"
#include "mmicl/datagen.hpp"

namespace mmicl {

struct QuadratureSpec {
  int node_count = 256;
  void validate() const;
};

// Expectations over Z = 1 + ||m||^2 under the norm law, evaluated by fixed
// Gauss-Legendre quadrature on the radius (per band for mixtures; a point
// mass contributes one atom). All closed-form losses integrate through this.
class ZMoments {
 public:
  explicit ZMoments(const MDistribution& mdist, QuadratureSpec spec = {});

  double expect(const std::function<double(double)>& g) const;
  double z_lower() const { return 1.0 + mdist_.m_lower(); }
  double z_upper() const { return 1.0 + mdist_.m_upper(); }
  double e_w() const { return e_w_; }          // E[(Z-1)/Z]
  double bayes_floor() const { return floor_; } // E[1/Z]
  const MDistribution& mdist() const { return mdist_; }
  int node_count() const { return spec_.node_count; }
  const std::vector<double>& nodes() const { return z_nodes_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  MDistribution mdist_;
  QuadratureSpec spec_;
  std::vector<double> z_nodes_;
  std::vector<double> weights_;  // probability weights, sum to 1
  double e_w_ = 0.0;
  double floor_ = 0.0;
};

// Gauss-Legendre nodes/weights on [lo, hi]; weights sum to hi - lo.
void gauss_legendre(int n, double lo, double hi,
                    std::vector<double>& nodes, std::vector<double>& weights);

enum class Target { label, bayes };

std::string target_name(Target t);
Target parse_target(const std::string& name);

// Mean over prompts of (target - predict)^2. target=label scores against the
// observed query label; target=bayes scores against <w, x_q>, which strips
// the irreducible noise and is what the figure metrics use.
double empirical_loss(const ModelParams& model, const std::vector<Prompt>& prompts,
                      Target target);

// S(Z, beta) = ((1 + beta Z)^T - 1) / beta, extended through beta = 0 by its
// limit T Z. This is the per-Z response factor of the depth-T stack.
double s_value(double z, double beta, int t);
// dS/dbeta, with the beta = 0 limit T(T-1)/2 * Z^2.
double s_value_dbeta(double z, double beta, int t);

// E[W (1 - alpha Z)^(2T)] with W = (Z-1)/Z. The additive floor E[1/Z] is
// excluded here and exposed via ZMoments::bayes_floor.
double pop_loss_one_param(double alpha, int t, const ZMoments& zm);
double grad_pop_loss_one_param(double alpha, int t, const ZMoments& zm);

// E[W (alpha S(Z,beta) - 1)^2]; quadratic in alpha with coefficients
// A(beta) = E[W S^2] and B(beta) = E[W S].
double pop_loss_two_param(double alpha, double beta, int t, const ZMoments& zm);
void grad_pop_loss_two_param(double alpha, double beta, int t, const ZMoments& zm,
                             double& d_alpha, double& d_beta);
double quad_coeff_a(double beta, int t, const ZMoments& zm);
double quad_coeff_b(double beta, int t, const ZMoments& zm);

// Minimizer of the two-parameter loss over alpha at fixed beta: B/A.
double profiled_alpha(double beta, int t, const ZMoments& zm);

// F_T(beta) = min_alpha loss. Computed in the variance form
//   E[W] * Var_mu(u_T) / E_mu[(1 - u_T)^2],  u_T = (1+beta Z)^T,
// where mu reweights by W/E[W]. The subtraction-free form stays accurate at
// depths where E[W] - B^2/A would cancel to zero.
double reduced_loss(double beta, int t, const ZMoments& zm);
// G_T(beta) = log(F_T(beta)/E[W]) / (2T): per-layer log contraction rate.
double log_reduced_loss(double beta, int t, const ZMoments& zm);

// phi(alpha) = max(|1 - alpha Z_lower|, |1 - alpha Z_upper|): worst-case
// spectral contraction of I - alpha Lambda over the task distribution.
double phi(double alpha, const ZMoments& zm);
// Minimizer of phi: 2 / (Z_lower + Z_upper).
double alpha_star_limit(const ZMoments& zm);

// ---------------------------------------------------------------------------
// Batch caches. Predictions of every stacked variant depend on the prompt
// only through the eigendecomposition of Lh = X X^T / L, the rotated moment
// vectors, and the query targets, so training loops cache those once and
// evaluate any (alpha, beta) in O(T d) per prompt. Tests pin cache-based
// losses against the plain predict() route.

struct CachedPrompt {
  Eigen::VectorXd lambda;  // eigenvalues of Lh
  Eigen::VectorXd ghat;    // V^T (X y / L)
  Eigen::VectorXd xhat;    // V^T x_q
  double y_q = 0.0;
  double bayes = 0.0;
};

class PromptBatchCache {
 public:
  static PromptBatchCache build(const std::vector<Prompt>& prompts);

  double predict_ca(std::size_t i, const CaParams& p) const;
  double loss_ca(const CaParams& p, Target target) const;
  // Per-prompt squared errors, for error-bar statistics.
  std::vector<double> squared_errors(const CaParams& p, Target target) const;
  double loss_sample_mean(Target target) const;
  std::vector<double> squared_errors_sample_mean(Target target) const;

  std::size_t size() const { return items_.size(); }
  const CachedPrompt& item(std::size_t i) const { return items_[i]; }

 private:
  std::vector<CachedPrompt> items_;
  std::vector<double> y_mean_;  // per-prompt context label mean
};

// Cache for the single-layer model: prediction is p^T C k a with
// C = E E^T / L and a = [x_q; 0], so only the (d+1)^2 Gram matrix and the
// bordered query vector are needed per prompt.
class LsaBatchCache {
 public:
  static LsaBatchCache build(const std::vector<Prompt>& prompts);

  double predict_one(std::size_t i, const Eigen::VectorXd& p,
                     const Eigen::MatrixXd& k) const;
  double loss(const Eigen::VectorXd& p, const Eigen::MatrixXd& k, Target target) const;
  std::vector<double> squared_errors(const Eigen::VectorXd& p, const Eigen::MatrixXd& k,
                                     Target target) const;
  // Exact derivatives of loss() in (p, k); the residual is linear in both.
  void grad(const Eigen::VectorXd& p, const Eigen::MatrixXd& k, Target target,
            Eigen::VectorXd& grad_p, Eigen::MatrixXd& grad_k) const;

  std::size_t size() const { return c_.size(); }
  int d() const { return d_; }

 private:
  int d_ = 0;
  std::vector<Eigen::MatrixXd> c_;  // (d+1)x(d+1) Gram matrices
  std::vector<Eigen::VectorXd> a_;  // bordered queries
  std::vector<double> y_q_;
  std::vector<double> bayes_;
};

}  // namespace mmicl
