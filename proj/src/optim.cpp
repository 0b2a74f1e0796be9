#include "mmicl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>

namespace mmicl {

GradientMode parse_gradient_mode(const std::string& name) {
  if (name == "analytic") return GradientMode::analytic;
  if (name == "finite_difference") return GradientMode::finite_difference;
  throw ConfigError("unknown gradient mode '" + name + "' (analytic|finite_difference)");
}

std::string gradient_mode_name(GradientMode m) {
  return m == GradientMode::analytic ? "analytic" : "finite_difference";
}

void OptimConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("optim: step_size must be positive and finite");
  }
  if (max_steps < 0) throw ConfigError("optim: max_steps must be >= 0");
  if (!(grad_tolerance >= 0.0)) throw ConfigError("optim: grad_tolerance must be >= 0");
  if (!(fd_epsilon > 0.0)) throw ConfigError("optim: fd_epsilon must be positive");
  if (record_every < 0) throw ConfigError("optim: record_every must be >= 0");
}

std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::lca_one_param: return "lca_one_param";
    case ModelKind::lca_two_param: return "lca_two_param";
    case ModelKind::lca_no_skip: return "lca_no_skip";
    case ModelKind::deep_lsa_no_skip: return "deep_lsa_no_skip";
    case ModelKind::deep_lsa_with_skip: return "deep_lsa_with_skip";
    case ModelKind::single_lsa: return "single_lsa";
  }
  throw ConfigError("model_kind_name: unknown kind");
}

CaVariant model_kind_variant(ModelKind k) {
  switch (k) {
    case ModelKind::lca_one_param: return CaVariant::lca_one_param;
    case ModelKind::lca_two_param: return CaVariant::lca_two_param;
    case ModelKind::lca_no_skip: return CaVariant::lca_no_skip;
    case ModelKind::deep_lsa_no_skip: return CaVariant::deep_lsa_no_skip;
    case ModelKind::deep_lsa_with_skip: return CaVariant::deep_lsa_with_skip;
    case ModelKind::single_lsa:
      throw ConfigError("single_lsa is not a cross-attention variant");
  }
  throw ConfigError("model_kind_variant: unknown kind");
}

namespace {

std::string describe_params(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < x.size(); ++i) {
    if (i > 0) os << ", ";
    os << format_double(x(i));
  }
  os << "]";
  return os.str();
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double eps) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double orig = probe(i);
    probe(i) = orig + eps;
    double up = f(probe);
    probe(i) = orig - eps;
    double down = f(probe);
    probe(i) = orig;
    g(i) = (up - down) / (2.0 * eps);
  }
  return g;
}

struct Problem {
  std::function<double(const Eigen::VectorXd&)> loss;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
};

Trajectory descend(const Problem& prob, const Eigen::VectorXd& init, const OptimConfig& cfg,
                   const std::function<void(const Eigen::VectorXd&)>& on_accept) {
  cfg.validate();
  long record_every = cfg.record_every > 0
                          ? cfg.record_every
                          : std::max<long>(1, cfg.max_steps / 200);
  Trajectory traj;
  Eigen::VectorXd x = init;
  double fx = prob.loss(x);
  Eigen::VectorXd g = prob.grad(x);
  if (!std::isfinite(fx) || !g.allFinite()) {
    throw NumericError("train: loss or gradient not finite at init " + describe_params(x));
  }
  double gn = g.norm();
  auto record = [&](long step) {
    TrajPoint pt;
    pt.step = step;
    pt.params = x;
    pt.loss = fx;
    pt.grad_norm = gn;
    traj.points.push_back(std::move(pt));
  };
  record(0);
  long step = 0;
  bool curvature_warned = false;
  while (true) {
    if (gn < cfg.grad_tolerance) {
      traj.converged = true;
      traj.stop_reason = "grad_tolerance";
      break;
    }
    if (step >= cfg.max_steps) {
      traj.converged = false;
      traj.stop_reason = "max_steps";
      break;
    }
    double eta = cfg.step_size;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    bool collapsed = false;
    while (true) {
      x_new = x - eta * g;
      f_new = prob.loss(x_new);
      // a non-finite trial value simply fails the acceptance test
      if (std::isfinite(f_new) && f_new <= fx) break;
      eta *= 0.5;
      if (eta < 1e-25) {
        collapsed = true;
        break;
      }
    }
    if (collapsed) {
      // no representable step decreases the loss anymore; for our smooth
      // objectives this is the practical fixed point
      traj.converged = true;
      traj.stop_reason = "step_collapse";
      break;
    }
    Eigen::VectorXd g_new = prob.grad(x_new);
    if (!g_new.allFinite()) {
      throw NumericError("train: gradient not finite near " + describe_params(x_new) +
                         "; last stable point " + describe_params(x));
    }
    if (!curvature_warned) {
      double dx = (x_new - x).norm();
      if (dx > 0.0) {
        double l_hat = (g_new - g).norm() / dx;
        if (cfg.step_size * l_hat >= 2.0) {
          traj.warnings.push_back(
              "step_size exceeds 2 over the local curvature estimate; "
              "backtracking is compensating");
          curvature_warned = true;
        }
      }
    }
    x = std::move(x_new);
    fx = f_new;
    g = std::move(g_new);
    gn = g.norm();
    ++step;
    if (on_accept) on_accept(x);
    if (step % record_every == 0) record(step);
  }
  traj.n_steps = step;
  if (traj.points.back().step != step) record(step);
  traj.final_params = x;
  traj.final_loss = fx;
  traj.final_grad_norm = gn;
  return traj;
}

int param_count(ModelKind k, int d) {
  switch (k) {
    case ModelKind::lca_one_param:
    case ModelKind::lca_no_skip:
    case ModelKind::deep_lsa_no_skip:
      return 1;
    case ModelKind::lca_two_param:
    case ModelKind::deep_lsa_with_skip:
      return 2;
    case ModelKind::single_lsa:
      return (d + 1) + (d + 1) * (d + 1);
  }
  throw ConfigError("param_count: unknown kind");
}

CaParams ca_from_vector(ModelKind k, int depth, const Eigen::VectorXd& x) {
  CaParams p;
  p.variant = model_kind_variant(k);
  p.depth = depth;
  p.alpha = x(0);
  p.beta = x.size() > 1 ? x(1) : 0.0;
  return p;
}

}  // namespace

Trajectory train(LossKind loss_kind, ModelKind model_kind, int depth,
                 const Eigen::VectorXd& init, const OptimConfig& cfg,
                 const std::vector<Prompt>* data, const ZMoments* zm, Target target) {
  if (depth < 1) throw ConfigError("train: depth must be >= 1");

  Problem prob;
  int d = 0;
  if (loss_kind == LossKind::empirical) {
    if (data == nullptr || data->empty()) {
      throw ConfigError("train: empirical loss needs a nonempty prompt batch");
    }
    d = data->front().d();
  }
  if (init.size() != param_count(model_kind, d)) {
    throw DimensionError("train: init has " + std::to_string(init.size()) +
                         " entries, expected " +
                         std::to_string(param_count(model_kind, d)) + " for " +
                         model_kind_name(model_kind));
  }

  // caches outlive the lambdas via shared_ptr capture
  if (loss_kind == LossKind::population) {
    if (zm == nullptr) throw ConfigError("train: population loss needs moments");
    if (model_kind == ModelKind::lca_one_param) {
      prob.loss = [zm, depth](const Eigen::VectorXd& x) {
        return pop_loss_one_param(x(0), depth, *zm);
      };
      if (cfg.gradient_mode == GradientMode::analytic) {
        prob.grad = [zm, depth](const Eigen::VectorXd& x) {
          Eigen::VectorXd g(1);
          g(0) = grad_pop_loss_one_param(x(0), depth, *zm);
          return g;
        };
      }
    } else if (model_kind == ModelKind::lca_two_param) {
      prob.loss = [zm, depth](const Eigen::VectorXd& x) {
        return pop_loss_two_param(x(0), x(1), depth, *zm);
      };
      if (cfg.gradient_mode == GradientMode::analytic) {
        prob.grad = [zm, depth](const Eigen::VectorXd& x) {
          Eigen::VectorXd g(2);
          grad_pop_loss_two_param(x(0), x(1), depth, *zm, g(0), g(1));
          return g;
        };
      }
    } else {
      throw ConfigError("train: population loss is available for lca_one_param and "
                        "lca_two_param only");
    }
    if (!prob.grad) {
      auto f = prob.loss;
      double eps = cfg.fd_epsilon;
      prob.grad = [f, eps](const Eigen::VectorXd& x) { return fd_gradient(f, x, eps); };
    }
  } else if (model_kind == ModelKind::single_lsa) {
    auto cache = std::make_shared<LsaBatchCache>(LsaBatchCache::build(*data));
    int dim = d;
    prob.loss = [cache, dim, target](const Eigen::VectorXd& theta) {
      Eigen::VectorXd p;
      Eigen::MatrixXd k;
      lsa_unflatten(theta, dim, p, k);
      return cache->loss(p, k, target);
    };
    prob.grad = [cache, dim, target](const Eigen::VectorXd& theta) {
      Eigen::VectorXd p;
      Eigen::MatrixXd k;
      lsa_unflatten(theta, dim, p, k);
      Eigen::VectorXd gp;
      Eigen::MatrixXd gk;
      cache->grad(p, k, target, gp, gk);
      return lsa_flatten(gp, gk);
    };
  } else {
    auto cache = std::make_shared<PromptBatchCache>(PromptBatchCache::build(*data));
    ModelKind kind = model_kind;
    prob.loss = [cache, kind, depth, target](const Eigen::VectorXd& x) {
      return cache->loss_ca(ca_from_vector(kind, depth, x), target);
    };
    // scalar empirical objectives go through the eigen cache, which has no
    // closed-form derivative for the cubic variant; use central differences
    // uniformly here
    auto f = prob.loss;
    double eps = cfg.fd_epsilon;
    prob.grad = [f, eps](const Eigen::VectorXd& x) { return fd_gradient(f, x, eps); };
  }

  bool track_window = model_kind == ModelKind::lca_two_param && zm != nullptr;
  double window_lo = track_window ? -2.0 / zm->z_upper() : 0.0;
  bool in_window = true;
  std::function<void(const Eigen::VectorXd&)> on_accept;
  if (track_window) {
    on_accept = [&in_window, window_lo](const Eigen::VectorXd& x) {
      if (!(x(1) > window_lo && x(1) < 0.0)) in_window = false;
    };
    on_accept(init);
  }

  Trajectory traj = descend(prob, init, cfg, on_accept);

  if (track_window) {
    traj.beta_in_window = in_window;
    double beta0 = init(1);
    if (beta0 > window_lo && beta0 < 0.0) {
      double alpha_prof = profiled_alpha(beta0, depth, *zm);
      traj.theorem_init = std::fabs(init(0) - alpha_prof) <= 1e-9;
    }
  }
  return traj;
}

std::pair<double, double> minimize_1d(const std::function<double(double)>& f,
                                      double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("minimize_1d: need lo < hi");

  constexpr int kProbe = 33;
  auto leq = [](double a, double b) {
    // tolerant comparison that treats infinities sensibly
    if (std::isinf(b) && b > 0) return true;
    if (std::isinf(a) && a > 0) return false;
    return a <= b + 1e-9 * std::max({1.0, std::fabs(a), std::fabs(b)});
  };
  auto probe_unimodal = [&](double a, double b, int& k_min, std::vector<double>& xs) {
    xs.resize(kProbe);
    std::vector<double> vs(kProbe);
    for (int i = 0; i < kProbe; ++i) {
      xs[i] = a + (b - a) * static_cast<double>(i) / (kProbe - 1);
      vs[i] = f(xs[i]);
      if (std::isnan(vs[i])) throw NumericError("minimize_1d: objective returned nan");
    }
    k_min = static_cast<int>(std::min_element(vs.begin(), vs.end()) - vs.begin());
    for (int i = 0; i + 1 < kProbe; ++i) {
      bool ok = i < k_min ? leq(vs[i + 1], vs[i]) : leq(vs[i], vs[i + 1]);
      if (!ok) return false;
    }
    return true;
  };

  int k_min = 0;
  std::vector<double> xs;
  if (!probe_unimodal(lo, hi, k_min, xs)) {
    double pad = 0.5 * (hi - lo);
    if (!probe_unimodal(lo - pad, hi + pad, k_min, xs)) {
      throw NumericError("minimize_1d: objective is not unimodal on the bracket");
    }
  }
  double a = xs[std::max(0, k_min - 1)];
  double b = xs[std::min(kProbe - 1, k_min + 1)];

  constexpr double kInvPhi = 0.6180339887498949;
  double c = b - (b - a) * kInvPhi;
  double dpt = a + (b - a) * kInvPhi;
  double fc = f(c);
  double fd = f(dpt);
  while (b - a > 1e-10) {
    if (fc < fd) {
      b = dpt;
      dpt = c;
      fd = fc;
      c = b - (b - a) * kInvPhi;
      fc = f(c);
    } else {
      a = c;
      c = dpt;
      fc = fd;
      dpt = a + (b - a) * kInvPhi;
      fd = f(dpt);
    }
  }
  double x_best = 0.5 * (a + b);
  return {x_best, f(x_best)};
}

Eigen::VectorXd theorem_two_param_init(const ZMoments& zm, int depth,
                                       std::optional<double> beta0) {
  double b0 = beta0.value_or(-alpha_star_limit(zm));
  if (!(b0 > -2.0 / zm.z_upper() && b0 < 0.0)) {
    throw ConfigError("theorem_two_param_init: beta0 must lie in (-2/Z_upper, 0)");
  }
  Eigen::VectorXd init(2);
  init(1) = b0;
  init(0) = profiled_alpha(b0, depth, zm);
  return init;
}

Eigen::VectorXd lsa_flatten(const Eigen::VectorXd& p, const Eigen::MatrixXd& k) {
  if (k.rows() != p.size() || k.cols() != p.size()) {
    throw DimensionError("lsa_flatten: p and k disagree on dimension");
  }
  Eigen::Index n = p.size();
  Eigen::VectorXd theta(n + n * n);
  theta.head(n) = p;
  theta.tail(n * n) = Eigen::Map<const Eigen::VectorXd>(k.data(), n * n);
  return theta;
}

void lsa_unflatten(const Eigen::VectorXd& theta, int d,
                   Eigen::VectorXd& p, Eigen::MatrixXd& k) {
  Eigen::Index n = d + 1;
  if (theta.size() != n + n * n) {
    throw DimensionError("lsa_unflatten: parameter vector has wrong length");
  }
  p = theta.head(n);
  k = Eigen::Map<const Eigen::MatrixXd>(theta.data() + n, n, n);
}

Eigen::VectorXd lsa_train_init(int d) {
  LsaParams frozen = LsaParams::frozen_readout(d);
  return lsa_flatten(frozen.w_pv.row(d).transpose(), frozen.w_kq);
}

LsaParams lsa_params_from_theta(const Eigen::VectorXd& theta, int d) {
  Eigen::VectorXd p;
  Eigen::MatrixXd k;
  lsa_unflatten(theta, d, p, k);
  LsaParams out;
  out.w_pv = Eigen::MatrixXd::Zero(d + 1, d + 1);
  out.w_pv.row(d) = p.transpose();
  out.w_kq = k;
  return out;
}

}  // namespace mmicl
