#pragma once

#include <Eigen/Dense>
#include <variant>

#include "mmicl/datagen.hpp"

namespace mmicl {

// Single-layer linear self-attention weights over (d+1)-dimensional token
// embeddings [x; y].
struct LsaParams {
  Eigen::MatrixXd w_pv;  // (d+1) x (d+1)
  Eigen::MatrixXd w_kq;  // (d+1) x (d+1)

  // Fixed readout configuration: w_pv has a single 1 at the bottom-right
  // corner and w_kq is the identity on the covariate block padded with a zero
  // last row/column. With these weights the attention output's label slot
  // equals y^T F^T x_q / L.
  static LsaParams frozen_readout(int d);
};

// The stacked cross-attention architectures. lca_* variants attend with keys
// and values built from the raw covariates X; deep_lsa_* variants self-attend
// on the evolving embedding instead. *_no_skip variants drop the raw-data
// injection term, which pins the embedding at zero when it starts at zero.
enum class CaVariant {
  lca_one_param,
  lca_two_param,
  lca_no_skip,
  deep_lsa_no_skip,
  deep_lsa_with_skip,
};

std::string ca_variant_name(CaVariant v);
CaVariant parse_ca_variant(const std::string& name);

struct CaParams {
  CaVariant variant = CaVariant::lca_two_param;
  double alpha = 0.0;
  double beta = 0.0;
  int depth = 1;      // number of stacked layers
  bool normalize = false;  // standardize each column between layers

  // The one-parameter family ties the attention coefficient to -alpha; the
  // no-skip variants reuse alpha as their single attention coefficient.
  double effective_beta() const;
  bool uses_beta() const;
  void validate() const;
};

// Final embedding F together with its bordered token matrix
// E = [[F, x_q], [y^T, 0]].
struct Embedding {
  Eigen::MatrixXd F;  // d x L
  Eigen::MatrixXd E;  // (d+1) x (L+1)
};

Eigen::MatrixXd assemble_embedding(const Eigen::MatrixXd& F,
                                   const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& x_q);

// Label-slot output of one linear self-attention pass:
// (E + w_pv E (E^T w_kq E) / L) at entry (d+1, L+1). The residual term
// contributes nothing there because that entry of E is required to be zero.
double lsa_forward(const Eigen::MatrixXd& E, const LsaParams& p);

// Layer recurrence for every stacked variant, from F_0 = 0.
Eigen::MatrixXd ca_forward(const Eigen::MatrixXd& X, const CaParams& p);

// Direct evaluation of the final lca_* embedding,
// F = alpha * sum_{k=0}^{T-1} (I + beta Lh)^k X with Lh = X X^T / L,
// using repeated squaring instead of T layer passes.
Eigen::MatrixXd ca_forward_closed_form(const Eigen::MatrixXd& X, const CaParams& p);

// (1/L) X F^T = (alpha/beta) [(I + beta Lh)^T - I]. Requires beta != 0.
Eigen::MatrixXd lca_cross_moment(const Eigen::MatrixXd& X, const CaParams& p);

Embedding lca_embed(const Prompt& prompt, const CaParams& p);
Embedding lca_embed_closed_form(const Prompt& prompt, const CaParams& p);

// M^T by repeated squaring.
Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& M, int t);

// sum_{k=0}^{T-1} M^k by doubling: O(log T) multiplies.
Eigen::MatrixXd geometric_matrix_sum(const Eigen::MatrixXd& M, int t);

// Context-label average baseline; ignores the query.
struct SampleMeanModel {};

using ModelParams = std::variant<CaParams, LsaParams, SampleMeanModel>;

std::string model_name(const ModelParams& model);

// Forward pass of any architecture on one prompt. Stacked variants assemble
// their final embedding and read it out through the frozen attention layer;
// reading depends only on (X, y, x_q).
double predict(const Prompt& prompt, const ModelParams& model);

}  // namespace mmicl
