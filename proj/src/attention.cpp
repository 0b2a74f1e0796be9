#include "mmicl/attention.hpp"

#include <cmath>

namespace mmicl {

LsaParams LsaParams::frozen_readout(int d) {
  LsaParams p;
  p.w_pv = Eigen::MatrixXd::Zero(d + 1, d + 1);
  p.w_pv(d, d) = 1.0;
  p.w_kq = Eigen::MatrixXd::Zero(d + 1, d + 1);
  p.w_kq.topLeftCorner(d, d).setIdentity();
  return p;
}

std::string ca_variant_name(CaVariant v) {
  switch (v) {
    case CaVariant::lca_one_param: return "lca_one_param";
    case CaVariant::lca_two_param: return "lca_two_param";
    case CaVariant::lca_no_skip: return "lca_no_skip";
    case CaVariant::deep_lsa_no_skip: return "deep_lsa_no_skip";
    case CaVariant::deep_lsa_with_skip: return "deep_lsa_with_skip";
  }
  return "unknown";
}

CaVariant parse_ca_variant(const std::string& name) {
  if (name == "lca_one_param") return CaVariant::lca_one_param;
  if (name == "lca_two_param") return CaVariant::lca_two_param;
  if (name == "lca_no_skip") return CaVariant::lca_no_skip;
  if (name == "deep_lsa_no_skip") return CaVariant::deep_lsa_no_skip;
  if (name == "deep_lsa_with_skip") return CaVariant::deep_lsa_with_skip;
  throw ConfigError("unknown architecture variant '" + name + "'");
}

double CaParams::effective_beta() const {
  switch (variant) {
    case CaVariant::lca_one_param:
      return -alpha;
    case CaVariant::lca_no_skip:
    case CaVariant::deep_lsa_no_skip:
      // single-coefficient attention: alpha plays the attention role
      return alpha;
    default:
      return beta;
  }
}

bool CaParams::uses_beta() const {
  return variant == CaVariant::lca_two_param || variant == CaVariant::deep_lsa_with_skip;
}

void CaParams::validate() const {
  if (depth < 1) throw ConfigError("stack params: depth must be >= 1");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) {
    throw ConfigError("stack params: alpha/beta must be finite");
  }
}

Eigen::MatrixXd assemble_embedding(const Eigen::MatrixXd& F,
                                   const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& x_q) {
  int d = static_cast<int>(F.rows());
  int L = static_cast<int>(F.cols());
  if (y.size() != L) throw DimensionError("assemble_embedding: y length != F columns");
  if (x_q.size() != d) throw DimensionError("assemble_embedding: x_q dimension != F rows");
  Eigen::MatrixXd E(d + 1, L + 1);
  E.topLeftCorner(d, L) = F;
  E.topRightCorner(d, 1) = x_q;
  E.bottomLeftCorner(1, L) = y.transpose();
  E(d, L) = 0.0;
  return E;
}

double lsa_forward(const Eigen::MatrixXd& E, const LsaParams& p) {
  int rows = static_cast<int>(E.rows());
  int cols = static_cast<int>(E.cols());
  if (rows < 2 || cols < 2) throw DimensionError("lsa_forward: embedding too small");
  if (p.w_pv.rows() != rows || p.w_pv.cols() != rows ||
      p.w_kq.rows() != rows || p.w_kq.cols() != rows) {
    throw DimensionError("lsa_forward: weight dimensions do not match embedding");
  }
  if (E(rows - 1, cols - 1) != 0.0) {
    throw NumericError("lsa_forward: query label slot of the embedding must be 0");
  }
  double L = static_cast<double>(cols - 1);
  // Only the label slot of the query column is read out. That entry of the
  // full update E + w_pv E (E^T w_kq E)/L contracts to
  // (last row of w_pv) . (E E^T) (w_kq . query column) / L, because the
  // residual contributes the zero slot itself.
  Eigen::VectorXd key = p.w_kq * E.col(cols - 1);
  Eigen::VectorXd pooled = E * (E.transpose() * key);  // (E E^T) key
  return p.w_pv.row(rows - 1).dot(pooled) / L;
}

namespace {

void standardize_columns(Eigen::MatrixXd& F) {
  int d = static_cast<int>(F.rows());
  for (int c = 0; c < F.cols(); ++c) {
    double mean = F.col(c).mean();
    Eigen::VectorXd centered = F.col(c).array() - mean;
    double var = centered.squaredNorm() / static_cast<double>(d);
    double sd = std::sqrt(var);
    if (sd < 1e-150) {
      F.col(c).setZero();
    } else {
      F.col(c) = centered / sd;
    }
  }
}

}  // namespace

Eigen::MatrixXd ca_forward(const Eigen::MatrixXd& X, const CaParams& p) {
  p.validate();
  if (!X.allFinite()) throw NumericError("ca_forward: non-finite covariates");
  int d = static_cast<int>(X.rows());
  double L = static_cast<double>(X.cols());
  double alpha = p.alpha;
  double beta = p.effective_beta();
  bool skip = p.variant != CaVariant::lca_no_skip && p.variant != CaVariant::deep_lsa_no_skip;
  bool self_attend = p.variant == CaVariant::deep_lsa_no_skip ||
                     p.variant == CaVariant::deep_lsa_with_skip;
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(d, static_cast<int>(X.cols()));
  Eigen::MatrixXd lam_hat;
  if (!self_attend) lam_hat = (X * X.transpose()) / L;
  for (int t = 0; t < p.depth; ++t) {
    Eigen::MatrixXd attn;
    if (self_attend) {
      attn = (beta / L) * ((F * F.transpose()) * F);
    } else {
      attn = beta * (lam_hat * F);
    }
    if (skip) {
      F = F + alpha * X + attn;
    } else {
      F = F + attn;
    }
    if (p.normalize) standardize_columns(F);
  }
  return F;
}

Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& M, int t) {
  if (t < 0) throw NumericError("matrix_power: negative exponent");
  int d = static_cast<int>(M.rows());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd base = M;
  int e = t;
  while (e > 0) {
    if (e & 1) acc = acc * base;
    base = base * base;
    e >>= 1;
  }
  return acc;
}

Eigen::MatrixXd geometric_matrix_sum(const Eigen::MatrixXd& M, int t) {
  // doubling on the pair (sum_{k<t} M^k, M^t):
  //   S_{2t} = S_t + M^t S_t, and one extra term when t is odd
  if (t < 1) throw NumericError("geometric_matrix_sum: need t >= 1");
  int d = static_cast<int>(M.rows());
  if (t == 1) return Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd s_half = geometric_matrix_sum(M, t / 2);
  Eigen::MatrixXd m_half = matrix_power(M, t / 2);
  Eigen::MatrixXd s = s_half + m_half * s_half;
  if (t % 2 != 0) s += matrix_power(M, t - 1);
  return s;
}

namespace {

void require_lca(const CaParams& p, const char* where) {
  if (p.variant != CaVariant::lca_one_param && p.variant != CaVariant::lca_two_param &&
      p.variant != CaVariant::lca_no_skip) {
    throw ConfigError(std::string(where) + ": only raw-data attention variants have a closed form");
  }
  if (p.normalize) {
    throw ConfigError(std::string(where) + ": no closed form with column normalization");
  }
}

}  // namespace

Eigen::MatrixXd ca_forward_closed_form(const Eigen::MatrixXd& X, const CaParams& p) {
  p.validate();
  require_lca(p, "ca_forward_closed_form");
  if (!X.allFinite()) throw NumericError("ca_forward_closed_form: non-finite covariates");
  int d = static_cast<int>(X.rows());
  if (p.variant == CaVariant::lca_no_skip) {
    return Eigen::MatrixXd::Zero(d, static_cast<int>(X.cols()));
  }
  Eigen::MatrixXd lam_hat = sample_covariance(X);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(d, d) + p.effective_beta() * lam_hat;
  return p.alpha * (geometric_matrix_sum(M, p.depth) * X);
}

Eigen::MatrixXd lca_cross_moment(const Eigen::MatrixXd& X, const CaParams& p) {
  p.validate();
  require_lca(p, "lca_cross_moment");
  double beta = p.effective_beta();
  if (beta == 0.0) throw NumericError("lca_cross_moment: beta must be nonzero");
  int d = static_cast<int>(X.rows());
  if (p.variant == CaVariant::lca_no_skip) return Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd lam_hat = sample_covariance(X);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(d, d) + beta * lam_hat;
  return (p.alpha / beta) * (matrix_power(M, p.depth) - Eigen::MatrixXd::Identity(d, d));
}

Embedding lca_embed(const Prompt& prompt, const CaParams& p) {
  require_lca(p, "lca_embed");
  Embedding emb;
  emb.F = ca_forward(prompt.X, p);
  emb.E = assemble_embedding(emb.F, prompt.y, prompt.x_q);
  return emb;
}

Embedding lca_embed_closed_form(const Prompt& prompt, const CaParams& p) {
  Embedding emb;
  emb.F = ca_forward_closed_form(prompt.X, p);
  emb.E = assemble_embedding(emb.F, prompt.y, prompt.x_q);
  return emb;
}

std::string model_name(const ModelParams& model) {
  if (std::holds_alternative<SampleMeanModel>(model)) return "sample_mean";
  if (std::holds_alternative<LsaParams>(model)) return "single_lsa";
  return ca_variant_name(std::get<CaParams>(model).variant);
}

double predict(const Prompt& prompt, const ModelParams& model) {
  if (std::holds_alternative<SampleMeanModel>(model)) {
    return prompt.y.mean();
  }
  if (std::holds_alternative<LsaParams>(model)) {
    Eigen::MatrixXd E = assemble_embedding(prompt.X, prompt.y, prompt.x_q);
    return lsa_forward(E, std::get<LsaParams>(model));
  }
  const CaParams& p = std::get<CaParams>(model);
  p.validate();
  bool lca = p.variant == CaVariant::lca_one_param || p.variant == CaVariant::lca_two_param ||
             p.variant == CaVariant::lca_no_skip;
  // beyond a few dozen layers the repeated-squaring route is much cheaper
  // than depth sequential passes and provably identical
  Eigen::MatrixXd F = (lca && !p.normalize && p.depth > 32)
                          ? ca_forward_closed_form(prompt.X, p)
                          : ca_forward(prompt.X, p);
  Eigen::MatrixXd E = assemble_embedding(F, prompt.y, prompt.x_q);
  return lsa_forward(E, LsaParams::frozen_readout(prompt.d()));
}

}  // namespace mmicl
