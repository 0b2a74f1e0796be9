#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mmicl/losses.hpp"

namespace mmicl {

enum class GradientMode { analytic, finite_difference };

GradientMode parse_gradient_mode(const std::string& name);
std::string gradient_mode_name(GradientMode m);

struct OptimConfig {
  double step_size = 1e-2;
  long max_steps = 100000;
  double grad_tolerance = 1e-9;
  GradientMode gradient_mode = GradientMode::analytic;
  double fd_epsilon = 1e-6;
  long record_every = 0;  // 0: pick so roughly 200 points get recorded

  void validate() const;
};

struct TrajPoint {
  long step = 0;
  Eigen::VectorXd params;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct Trajectory {
  std::vector<TrajPoint> points;
  bool converged = false;
  std::string stop_reason;  // grad_tolerance | step_collapse | max_steps
  Eigen::VectorXd final_params;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  long n_steps = 0;
  // Set for two-parameter training: whether the init satisfied the analyzed
  // regime (beta_0 in (-2/Z_upper, 0) with alpha_0 profiled at beta_0), and
  // whether beta remained in that window at every step taken.
  bool theorem_init = false;
  bool beta_in_window = true;
  std::vector<std::string> warnings;
};

enum class LossKind { population, empirical };

enum class ModelKind {
  lca_one_param,
  lca_two_param,
  lca_no_skip,
  deep_lsa_no_skip,
  deep_lsa_with_skip,
  single_lsa,
};

std::string model_kind_name(ModelKind k);
CaVariant model_kind_variant(ModelKind k);  // throws for single_lsa

// Gradient descent with backtracking on the requested loss.
//
// population: requires zm; model_kind lca_one_param (params [alpha]) or
//   lca_two_param (params [alpha, beta]); gradients analytic or central
//   finite differences per cfg.
// empirical: requires data; scalar variants use central finite differences
//   on the cached batch loss; single_lsa uses the exact (p, k) derivatives
//   from LsaBatchCache with init/params flattened per lsa_flatten.
//
// Each step halves the step from cfg.step_size until the loss does not
// increase; a step that collapses below 1e-25 means the gradient no longer
// produces a representable decrease and is reported as convergence.
Trajectory train(LossKind loss_kind, ModelKind model_kind, int depth,
                 const Eigen::VectorXd& init, const OptimConfig& cfg,
                 const std::vector<Prompt>* data, const ZMoments* zm,
                 Target target = Target::label);

// Golden-section search to absolute bracket width 1e-10. Unimodality on the
// bracket is checked by a 33-point presample; on violation the bracket is
// widened once by half its width per side and rechecked before failing.
std::pair<double, double> minimize_1d(const std::function<double(double)>& f,
                                      double lo, double hi);

// Standard two-parameter starting point: beta_0 = -alpha_star_limit (always
// inside (-2/Z_upper, 0)) with alpha_0 profiled at beta_0. Pass beta0 to
// start elsewhere on the profiled curve.
Eigen::VectorXd theorem_two_param_init(const ZMoments& zm, int depth,
                                       std::optional<double> beta0 = std::nullopt);

// Flattened [p; vec(k)] parameter layout used by single_lsa training.
Eigen::VectorXd lsa_flatten(const Eigen::VectorXd& p, const Eigen::MatrixXd& k);
void lsa_unflatten(const Eigen::VectorXd& theta, int d,
                   Eigen::VectorXd& p, Eigen::MatrixXd& k);
// Frozen-readout starting point for single_lsa training, flattened.
Eigen::VectorXd lsa_train_init(int d);
// Assembles trained flattened parameters into full weight matrices. Rows of
// w_pv other than the last receive no gradient from the label-slot readout,
// so they stay at zero.
LsaParams lsa_params_from_theta(const Eigen::VectorXd& theta, int d);

}  // namespace mmicl
