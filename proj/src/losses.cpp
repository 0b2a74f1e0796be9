#include "mmicl/losses.hpp"

#include <gsl/gsl_integration.h>

#include <cmath>
#include <map>
#include <mutex>

namespace mmicl {

void QuadratureSpec::validate() const {
  if (node_count < 16) throw ConfigError("quadrature: node_count must be >= 16");
}

void gauss_legendre(int n, double lo, double hi,
                    std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw ConfigError("gauss_legendre: need n >= 1");
  // gsl tables are read-only after construction; cache them per node count
  static std::map<int, gsl_integration_glfixed_table*> cache;
  static std::mutex cache_mutex;
  gsl_integration_glfixed_table* table = nullptr;
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto it = cache.find(n);
    if (it == cache.end()) {
      table = gsl_integration_glfixed_table_alloc(static_cast<std::size_t>(n));
      if (table == nullptr) throw NumericError("gauss_legendre: table allocation failed");
      cache.emplace(n, table);
    } else {
      table = it->second;
    }
  }
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = 0.0;
    double w = 0.0;
    gsl_integration_glfixed_point(lo, hi, static_cast<std::size_t>(i), &x, &w, table);
    nodes[i] = x;
    weights[i] = w;
  }
}

ZMoments::ZMoments(const MDistribution& mdist, QuadratureSpec spec)
    : mdist_(mdist), spec_(spec) {
  mdist_.validate();
  spec_.validate();
  for (const Band& band : mdist_.norm_law.as_bands()) {
    if (band.hi <= band.lo) {
      // point mass: one atom carrying the whole band weight
      double r = band.lo;
      z_nodes_.push_back(1.0 + r * r);
      weights_.push_back(band.weight);
      continue;
    }
    std::vector<double> r_nodes;
    std::vector<double> r_weights;
    gauss_legendre(spec_.node_count, band.lo, band.hi, r_nodes, r_weights);
    double density = band.weight / (band.hi - band.lo);  // uniform within band
    for (int i = 0; i < spec_.node_count; ++i) {
      z_nodes_.push_back(1.0 + r_nodes[i] * r_nodes[i]);
      weights_.push_back(r_weights[i] * density);
    }
  }
  e_w_ = expect([](double z) { return (z - 1.0) / z; });
  floor_ = expect([](double z) { return 1.0 / z; });
}

double ZMoments::expect(const std::function<double(double)>& g) const {
  std::vector<double> terms(z_nodes_.size());
  for (std::size_t i = 0; i < z_nodes_.size(); ++i) terms[i] = weights_[i] * g(z_nodes_[i]);
  return pairwise_sum(terms);
}

std::string target_name(Target t) {
  return t == Target::label ? "label" : "bayes";
}

Target parse_target(const std::string& name) {
  if (name == "label") return Target::label;
  if (name == "bayes") return Target::bayes;
  throw ConfigError("unknown target '" + name + "' (label|bayes)");
}

double empirical_loss(const ModelParams& model, const std::vector<Prompt>& prompts,
                      Target target) {
  if (prompts.empty()) throw DimensionError("empirical_loss: no prompts");
  std::vector<double> sq(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const Prompt& prompt = prompts[i];
    double t = target == Target::label ? prompt.y_q : bayes_predict(prompt.task, prompt.x_q);
    double r = t - predict(prompt, model);
    sq[i] = r * r;
  });
  return pairwise_mean(sq);
}

double s_value(double z, double beta, int t) {
  if (std::fabs(beta) < 1e-12) return static_cast<double>(t) * z;
  double bz = beta * z;
  if (std::fabs(bz) < 0.5) {
    // (1+bz)^t - 1 cancels catastrophically for small beta; expm1/log1p
    // keeps full precision and the base is safely positive here
    return std::expm1(static_cast<double>(t) * std::log1p(bz)) / beta;
  }
  return (powi(1.0 + bz, t) - 1.0) / beta;
}

double s_value_dbeta(double z, double beta, int t) {
  double td = static_cast<double>(t);
  if (std::fabs(beta) < 1e-12) return 0.5 * td * (td - 1.0) * z * z;
  double m = 1.0 + beta * z;
  return td * z * powi(m, t - 1) / beta - s_value(z, beta, t) / beta;
}

double pop_loss_one_param(double alpha, int t, const ZMoments& zm) {
  if (t < 1) throw ConfigError("pop_loss_one_param: t must be >= 1");
  return zm.expect([&](double z) {
    double w = (z - 1.0) / z;
    return w * powi(1.0 - alpha * z, 2 * t);
  });
}

double grad_pop_loss_one_param(double alpha, int t, const ZMoments& zm) {
  double td = static_cast<double>(t);
  return -2.0 * td * zm.expect([&](double z) {
    return (z - 1.0) * powi(1.0 - alpha * z, 2 * t - 1);
  });
}

double pop_loss_two_param(double alpha, double beta, int t, const ZMoments& zm) {
  if (t < 1) throw ConfigError("pop_loss_two_param: t must be >= 1");
  return zm.expect([&](double z) {
    double w = (z - 1.0) / z;
    double r = alpha * s_value(z, beta, t) - 1.0;
    return w * r * r;
  });
}

void grad_pop_loss_two_param(double alpha, double beta, int t, const ZMoments& zm,
                             double& d_alpha, double& d_beta) {
  d_alpha = 2.0 * zm.expect([&](double z) {
    double w = (z - 1.0) / z;
    double s = s_value(z, beta, t);
    return w * (alpha * s - 1.0) * s;
  });
  d_beta = 2.0 * alpha * zm.expect([&](double z) {
    double w = (z - 1.0) / z;
    double s = s_value(z, beta, t);
    return w * (alpha * s - 1.0) * s_value_dbeta(z, beta, t);
  });
}

double quad_coeff_a(double beta, int t, const ZMoments& zm) {
  return zm.expect([&](double z) {
    double s = s_value(z, beta, t);
    return (z - 1.0) / z * s * s;
  });
}

double quad_coeff_b(double beta, int t, const ZMoments& zm) {
  return zm.expect([&](double z) { return (z - 1.0) / z * s_value(z, beta, t); });
}

double profiled_alpha(double beta, int t, const ZMoments& zm) {
  double a = quad_coeff_a(beta, t, zm);
  if (!(a > 1e-14)) {
    throw NumericError("profiled_alpha: quadratic coefficient is numerically zero; "
                       "the task distribution is degenerate at Z = 1");
  }
  return quad_coeff_b(beta, t, zm) / a;
}

double reduced_loss(double beta, int t, const ZMoments& zm) {
  if (std::fabs(beta) < 1e-12) {
    // the variance form needs beta != 0; at zero fall back to the profiled
    // quadratic directly
    return pop_loss_two_param(profiled_alpha(0.0, t, zm), 0.0, t, zm);
  }
  double e_w = zm.e_w();
  // reweighted measure mu with density W/E[W]; all three expectations reuse
  // the same nodes. two-pass variance keeps every summand nonnegative, so
  // the result stays meaningful down to the underflow scale.
  auto mu_expect = [&](const std::function<double(double)>& g) {
    return zm.expect([&](double z) { return (z - 1.0) / z * g(z) / e_w; });
  };
  auto u_t = [&](double z) { return powi(1.0 + beta * z, t); };
  double mean_u = mu_expect(u_t);
  double var_u = mu_expect([&](double z) {
    double dv = u_t(z) - mean_u;
    return dv * dv;
  });
  double denom = mu_expect([&](double z) {
    double dv = 1.0 - u_t(z);
    return dv * dv;
  });
  if (!(denom > 0.0)) throw NumericError("reduced_loss: degenerate denominator");
  return e_w * var_u / denom;
}

double log_reduced_loss(double beta, int t, const ZMoments& zm) {
  double f = reduced_loss(beta, t, zm);
  return std::log(f / zm.e_w()) / (2.0 * static_cast<double>(t));
}

double phi(double alpha, const ZMoments& zm) {
  return std::max(std::fabs(1.0 - alpha * zm.z_lower()),
                  std::fabs(1.0 - alpha * zm.z_upper()));
}

double alpha_star_limit(const ZMoments& zm) {
  return 2.0 / (zm.z_lower() + zm.z_upper());
}

// ---------------------------------------------------------------------------
// caches

PromptBatchCache PromptBatchCache::build(const std::vector<Prompt>& prompts) {
  if (prompts.empty()) throw DimensionError("PromptBatchCache: no prompts");
  PromptBatchCache cache;
  cache.items_.resize(prompts.size());
  cache.y_mean_.resize(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const Prompt& prompt = prompts[i];
    double L = static_cast<double>(prompt.L());
    Eigen::MatrixXd lam_hat = sample_covariance(prompt.X);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lam_hat);
    if (eig.info() != Eigen::Success) {
      throw NumericError("PromptBatchCache: eigendecomposition failed");
    }
    CachedPrompt item;
    item.lambda = eig.eigenvalues();
    const Eigen::MatrixXd& v = eig.eigenvectors();
    item.ghat = v.transpose() * (prompt.X * prompt.y / L);
    item.xhat = v.transpose() * prompt.x_q;
    item.y_q = prompt.y_q;
    item.bayes = bayes_predict(prompt.task, prompt.x_q);
    cache.items_[i] = std::move(item);
    cache.y_mean_[i] = prompt.y.mean();
  });
  return cache;
}

double PromptBatchCache::predict_ca(std::size_t i, const CaParams& p) const {
  if (p.normalize) {
    throw ConfigError("PromptBatchCache: normalized variant has no spectral shortcut");
  }
  const CachedPrompt& item = items_[i];
  int d = static_cast<int>(item.lambda.size());
  double beta = p.effective_beta();
  double pred = 0.0;
  switch (p.variant) {
    case CaVariant::lca_no_skip:
    case CaVariant::deep_lsa_no_skip:
      return 0.0;  // the embedding never leaves zero without the raw-data term
    case CaVariant::lca_one_param:
    case CaVariant::lca_two_param: {
      for (int j = 0; j < d; ++j) {
        double coef = p.alpha * geometric_sum(1.0 + beta * item.lambda(j), p.depth);
        pred += coef * item.ghat(j) * item.xhat(j);
      }
      return pred;
    }
    case CaVariant::deep_lsa_with_skip: {
      // per-eigenvalue cubic recurrence f <- f + alpha + beta * lambda * f^3;
      // runaway values are clamped so the caller sees a huge but finite loss
      for (int j = 0; j < d; ++j) {
        double f = 0.0;
        for (int t = 0; t < p.depth; ++t) {
          f = f + p.alpha + beta * item.lambda(j) * f * f * f;
          if (f > 1e100) f = 1e100;
          if (f < -1e100) f = -1e100;
        }
        pred += f * item.ghat(j) * item.xhat(j);
      }
      return pred;
    }
  }
  throw ConfigError("PromptBatchCache: unknown variant");
}

std::vector<double> PromptBatchCache::squared_errors(const CaParams& p, Target target) const {
  std::vector<double> sq(items_.size());
  parallel_for(items_.size(), [&](std::size_t i) {
    double t = target == Target::label ? items_[i].y_q : items_[i].bayes;
    double r = t - predict_ca(i, p);
    sq[i] = r * r;
  });
  return sq;
}

double PromptBatchCache::loss_ca(const CaParams& p, Target target) const {
  return pairwise_mean(squared_errors(p, target));
}

std::vector<double> PromptBatchCache::squared_errors_sample_mean(Target target) const {
  std::vector<double> sq(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    double t = target == Target::label ? items_[i].y_q : items_[i].bayes;
    double r = t - y_mean_[i];
    sq[i] = r * r;
  }
  return sq;
}

double PromptBatchCache::loss_sample_mean(Target target) const {
  return pairwise_mean(squared_errors_sample_mean(target));
}

LsaBatchCache LsaBatchCache::build(const std::vector<Prompt>& prompts) {
  if (prompts.empty()) throw DimensionError("LsaBatchCache: no prompts");
  LsaBatchCache cache;
  cache.d_ = prompts.front().d();
  std::size_t n = prompts.size();
  cache.c_.resize(n);
  cache.a_.resize(n);
  cache.y_q_.resize(n);
  cache.bayes_.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const Prompt& prompt = prompts[i];
    Eigen::MatrixXd E = assemble_embedding(prompt.X, prompt.y, prompt.x_q);
    cache.c_[i] = (E * E.transpose()) / static_cast<double>(prompt.L());
    Eigen::VectorXd a = Eigen::VectorXd::Zero(prompt.d() + 1);
    a.head(prompt.d()) = prompt.x_q;
    cache.a_[i] = a;
    cache.y_q_[i] = prompt.y_q;
    cache.bayes_[i] = bayes_predict(prompt.task, prompt.x_q);
  });
  return cache;
}

double LsaBatchCache::predict_one(std::size_t i, const Eigen::VectorXd& p,
                                  const Eigen::MatrixXd& k) const {
  return p.dot(c_[i] * (k * a_[i]));
}

std::vector<double> LsaBatchCache::squared_errors(const Eigen::VectorXd& p,
                                                  const Eigen::MatrixXd& k,
                                                  Target target) const {
  std::vector<double> sq(c_.size());
  parallel_for(c_.size(), [&](std::size_t i) {
    double t = target == Target::label ? y_q_[i] : bayes_[i];
    double r = t - predict_one(i, p, k);
    sq[i] = r * r;
  });
  return sq;
}

double LsaBatchCache::loss(const Eigen::VectorXd& p, const Eigen::MatrixXd& k,
                           Target target) const {
  return pairwise_mean(squared_errors(p, k, target));
}

void LsaBatchCache::grad(const Eigen::VectorXd& p, const Eigen::MatrixXd& k, Target target,
                         Eigen::VectorXd& grad_p, Eigen::MatrixXd& grad_k) const {
  int n = static_cast<int>(c_.size());
  grad_p = Eigen::VectorXd::Zero(d_ + 1);
  grad_k = Eigen::MatrixXd::Zero(d_ + 1, d_ + 1);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd ka = k * a_[i];
    Eigen::VectorXd cka = c_[i] * ka;
    double t = target == Target::label ? y_q_[i] : bayes_[i];
    double r = t - p.dot(cka);
    grad_p -= (2.0 * r) * cka;
    grad_k -= (2.0 * r) * (c_[i] * p) * a_[i].transpose();
  }
  grad_p /= static_cast<double>(n);
  grad_k /= static_cast<double>(n);
}

}  // namespace mmicl
