#include "mmicl/theory.hpp"

#include <algorithm>
#include <cmath>

#include "mmicl/optim.hpp"

namespace mmicl {

LsaBlocks LsaBlocks::from_params(const LsaParams& params) {
  Eigen::Index n = params.w_kq.rows();
  if (n < 2 || params.w_kq.cols() != n || params.w_pv.rows() != n ||
      params.w_pv.cols() != n) {
    throw DimensionError("LsaBlocks: weights must be square (d+1) x (d+1)");
  }
  Eigen::Index d = n - 1;
  LsaBlocks blocks;
  blocks.A = params.w_kq.topLeftCorner(d, d);
  blocks.b_prime = params.w_kq.topRightCorner(d, 1);
  blocks.b = params.w_kq.bottomLeftCorner(1, d).transpose();
  blocks.c = params.w_kq(d, d);
  blocks.u = params.w_pv.row(d).head(d).transpose();
  blocks.v = params.w_pv(d, d);
  return blocks;
}

LsaParams LsaBlocks::reassemble() const {
  int dim = d();
  if (b.size() != dim || b_prime.size() != dim || u.size() != dim ||
      A.cols() != dim) {
    throw DimensionError("LsaBlocks: inconsistent block dimensions");
  }
  LsaParams params;
  params.w_kq = Eigen::MatrixXd::Zero(dim + 1, dim + 1);
  params.w_kq.topLeftCorner(dim, dim) = A;
  params.w_kq.topRightCorner(dim, 1) = b_prime;
  params.w_kq.bottomLeftCorner(1, dim) = b.transpose();
  params.w_kq(dim, dim) = c;
  params.w_pv = Eigen::MatrixXd::Zero(dim + 1, dim + 1);
  params.w_pv.row(dim).head(dim) = u.transpose();
  params.w_pv(dim, dim) = v;
  return params;
}

Eigen::VectorXd lsa_limiting_weights(const LsaBlocks& blocks, const TaskParams& task) {
  if (blocks.d() != task.m.size()) {
    throw DimensionError("lsa_limiting_weights: dimension mismatch");
  }
  Eigen::MatrixXd lam = population_covariance(task);
  double um = blocks.u.dot(task.m);
  Eigen::VectorXd what = blocks.A.transpose() * (lam * blocks.u);
  what += task.zeta * (um * blocks.b + blocks.v * (blocks.A.transpose() * task.m));
  what += task.zeta * task.zeta * blocks.v * blocks.b;
  return what;
}

MismatchReport theorem1_scan(const LsaBlocks& blocks, const DataConfig& cfg,
                             long n_tasks, std::mt19937_64& rng, double threshold) {
  cfg.validate();
  if (n_tasks < 1) throw ConfigError("theorem1_scan: need n_tasks >= 1");
  if (blocks.d() != cfg.d()) {
    throw DimensionError("theorem1_scan: blocks dimension differs from the task law");
  }
  std::vector<double> norms(static_cast<std::size_t>(n_tasks));
  for (long i = 0; i < n_tasks; ++i) {
    TaskParams task = sample_task(cfg, rng);
    norms[static_cast<std::size_t>(i)] =
        (lsa_limiting_weights(blocks, task) - task.w).norm();
  }
  std::sort(norms.begin(), norms.end());
  MismatchReport rep;
  rep.n_tasks = n_tasks;
  rep.threshold = threshold;
  rep.n_below = static_cast<long>(
      std::lower_bound(norms.begin(), norms.end(), threshold) - norms.begin());
  rep.frac_below = static_cast<double>(rep.n_below) / static_cast<double>(n_tasks);
  auto quantile = [&](double q) {
    double pos = q * static_cast<double>(norms.size() - 1);
    std::size_t k = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(k);
    if (k + 1 >= norms.size()) return norms.back();
    return norms[k] * (1.0 - frac) + norms[k + 1] * frac;
  };
  rep.min_norm = norms.front();
  rep.q25 = quantile(0.25);
  rep.median = quantile(0.5);
  rep.q75 = quantile(0.75);
  rep.max_norm = norms.back();
  rep.law_note = cfg.m_dist.norm_law.describe() + ", zeta " + zeta_law_name(cfg.zeta_dist);
  return rep;
}

std::vector<AlphaStarRow> alpha_star_sequence(const std::vector<int>& depths,
                                              const ZMoments& zm) {
  std::vector<AlphaStarRow> rows;
  rows.reserve(depths.size());
  double limit = alpha_star_limit(zm);
  double hi = 2.0 / zm.z_lower();
  for (int depth : depths) {
    if (depth < 1) throw ConfigError("alpha_star_sequence: depths must be >= 1");
    // integrand degree grows with depth: refresh moments with enough nodes
    QuadratureSpec spec;
    spec.node_count = std::max(zm.node_count(), 2 * depth + 32);
    ZMoments dense(zm.mdist(), spec);
    auto [alpha_star, loss_at_star] =
        minimize_1d([&](double a) { return pop_loss_one_param(a, depth, dense); },
                    0.0, hi);
    (void)loss_at_star;
    AlphaStarRow row;
    row.depth = depth;
    row.alpha_star_t = alpha_star;
    row.gap = std::fabs(alpha_star - limit);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mmicl
