#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mmicl/attention.hpp"
#include "mmicl/losses.hpp"

using namespace mmicl;

namespace {

Prompt random_prompt(std::uint64_t idx, int L) {
  DataConfig cfg;
  auto rng = make_stream(201, 3, idx);
  TaskParams t = sample_task(cfg, rng);
  return sample_prompt(t, L, rng);
}

double rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

}  // namespace

TEST_CASE("layer recurrence agrees with the repeated-squaring closed form") {
  auto rng = make_stream(202, 3, 0);
  std::uniform_real_distribution<double> coeff(-0.6, 0.6);
  std::uniform_int_distribution<int> depth_dist(1, 12);
  std::uniform_int_distribution<int> len_dist(2, 40);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Prompt p = random_prompt(static_cast<std::uint64_t>(i), len_dist(rng));
    CaParams cp;
    cp.variant = i % 2 == 0 ? CaVariant::lca_two_param : CaVariant::lca_one_param;
    cp.alpha = coeff(rng);
    cp.beta = coeff(rng);
    cp.depth = depth_dist(rng);
    Embedding rec = lca_embed(p, cp);
    Embedding cf = lca_embed_closed_form(p, cp);
    worst = std::max(worst, rel_err(rec.F, cf.F));
    worst = std::max(worst, rel_err(rec.E, cf.E));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("frozen readout is the context regression value") {
  auto rng = make_stream(203, 3, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    int d = 2 + i % 7;
    int L = 3 + i % 19;
    Eigen::MatrixXd F(d, L);
    Eigen::VectorXd y(L), x_q(d);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < L; ++c) F(r, c) = gauss(rng);
      x_q(r) = gauss(rng);
    }
    for (int c = 0; c < L; ++c) y(c) = gauss(rng);
    Eigen::MatrixXd E = assemble_embedding(F, y, x_q);
    double got = lsa_forward(E, LsaParams::frozen_readout(d));
    double want = y.dot(F.transpose() * x_q) / static_cast<double>(L);
    worst = std::max(worst, std::fabs(got - want) / std::max(1.0, std::fabs(want)));
  }
  CHECK(worst < 1e-13);
}

TEST_CASE("one layer is exactly the scaled skip") {
  Prompt p = random_prompt(11, 9);
  CaParams cp;
  cp.variant = CaVariant::lca_two_param;
  cp.alpha = 0.37;
  cp.beta = -0.11;
  cp.depth = 1;
  Eigen::MatrixXd F = ca_forward(p.X, cp);
  CHECK(F == cp.alpha * p.X);  // attention term vanishes from F_0 = 0
}

TEST_CASE("tying beta to -alpha reproduces the one-parameter stack") {
  Prompt p = random_prompt(12, 14);
  CaParams one;
  one.variant = CaVariant::lca_one_param;
  one.alpha = 0.23;
  one.depth = 7;
  CaParams two = one;
  two.variant = CaVariant::lca_two_param;
  two.beta = -one.alpha;
  CHECK(ca_forward(p.X, one) == ca_forward(p.X, two));
  CHECK(predict(p, ModelParams(one)) == predict(p, ModelParams(two)));
}

TEST_CASE("no-skip variants never leave zero") {
  Prompt p = random_prompt(13, 10);
  for (CaVariant v : {CaVariant::lca_no_skip, CaVariant::deep_lsa_no_skip}) {
    CaParams cp;
    cp.variant = v;
    cp.alpha = 0.8;
    cp.depth = 6;
    CHECK(ca_forward(p.X, cp).norm() == 0.0);
    CHECK(predict(p, ModelParams(cp)) == 0.0);
  }
}

TEST_CASE("forward passes read only (X, y, x_q)") {
  Prompt p = random_prompt(14, 12);
  Prompt scrubbed = p;
  scrubbed.u.setZero();
  scrubbed.task.m.setConstant(99.0);  // predictions must not touch task params
  scrubbed.task.w.setConstant(-3.0);
  scrubbed.task.zeta = 1e9;
  CaParams cp;
  cp.variant = CaVariant::lca_two_param;
  cp.alpha = 0.21;
  cp.beta = -0.19;
  cp.depth = 5;
  CHECK(predict(p, ModelParams(cp)) == predict(scrubbed, ModelParams(cp)));
  LsaParams lsa = LsaParams::frozen_readout(p.d());
  CHECK(predict(p, ModelParams(lsa)) == predict(scrubbed, ModelParams(lsa)));
  CHECK(predict(p, ModelParams(SampleMeanModel{})) ==
        predict(scrubbed, ModelParams(SampleMeanModel{})));
}

TEST_CASE("predictions are invariant to context order") {
  Prompt p = random_prompt(15, 11);
  Prompt rev = p;
  rev.X = p.X.rowwise().reverse().eval();
  rev.y = p.y.reverse().eval();
  CaParams cp;
  cp.variant = CaVariant::lca_two_param;
  cp.alpha = 0.31;
  cp.beta = -0.27;
  cp.depth = 4;
  double a = predict(p, ModelParams(cp));
  double b = predict(rev, ModelParams(cp));
  CHECK(std::fabs(a - b) <= 1e-12 * std::max(1.0, std::fabs(a)));
  LsaParams lsa = LsaParams::frozen_readout(p.d());
  double c = predict(p, ModelParams(lsa));
  double d = predict(rev, ModelParams(lsa));
  CHECK(std::fabs(c - d) <= 1e-12 * std::max(1.0, std::fabs(c)));
}

TEST_CASE("cross moment identity") {
  Prompt p = random_prompt(16, 13);
  CaParams cp;
  cp.variant = CaVariant::lca_two_param;
  cp.alpha = 0.29;
  cp.beta = -0.17;
  cp.depth = 9;
  Eigen::MatrixXd F = ca_forward_closed_form(p.X, cp);
  Eigen::MatrixXd direct = (p.X * F.transpose()) / static_cast<double>(p.L());
  CHECK(rel_err(lca_cross_moment(p.X, cp), direct.transpose()) < 1e-10);
  cp.beta = 0.0;
  CHECK_THROWS_AS(lca_cross_moment(p.X, cp), NumericError);
}

TEST_CASE("residual telescopes to the matrix power") {
  Prompt p = random_prompt(17, 25);
  Eigen::MatrixXd lam_hat = sample_covariance(p.X);
  int d = p.d();
  double alpha = 0.2;
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(d, d) - alpha * lam_hat;
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(d, d) -
                        alpha * (geometric_matrix_sum(M, 12) * lam_hat);
  CHECK(rel_err(lhs, matrix_power(M, 12)) < 1e-10);
}

TEST_CASE("population contraction at the limiting coefficient") {
  DataConfig cfg;
  auto rng = make_stream(204, 3, 0);
  double alpha = 1.0 / 3.0;  // 2/(Z_lower + Z_upper) for the default law
  double phi = 2.0 / 3.0;
  for (int i = 0; i < 20; ++i) {
    TaskParams t = sample_task(cfg, rng);
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(cfg.d(), cfg.d()) -
                        alpha * population_covariance(t);
    Eigen::MatrixXd R50 = matrix_power(R, 50);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R50);
    double spectral = es.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(spectral <= std::pow(phi, 50) * (1.0 + 1e-9));
  }
}

TEST_CASE("deep stack with skip matches a hand-rolled recurrence") {
  Prompt p = random_prompt(18, 8);
  CaParams cp;
  cp.variant = CaVariant::deep_lsa_with_skip;
  cp.alpha = 0.12;
  cp.beta = -0.07;
  cp.depth = 4;
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(p.d(), p.L());
  double L = static_cast<double>(p.L());
  for (int t = 0; t < cp.depth; ++t) {
    F = F + cp.alpha * p.X + (cp.beta / L) * ((F * F.transpose()) * F);
  }
  CHECK(rel_err(ca_forward(p.X, cp), F) < 1e-13);
}

TEST_CASE("column normalization standardizes every layer output") {
  Prompt p = random_prompt(19, 10);
  CaParams cp;
  cp.variant = CaVariant::lca_two_param;
  cp.alpha = 0.4;
  cp.beta = -0.2;
  cp.depth = 3;
  cp.normalize = true;
  Eigen::MatrixXd F = ca_forward(p.X, cp);
  double d = static_cast<double>(p.d());
  for (int c = 0; c < F.cols(); ++c) {
    CHECK(std::fabs(F.col(c).mean()) < 1e-12);
    CHECK(F.col(c).squaredNorm() / d == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ca_forward_closed_form(p.X, cp), ConfigError);
  CHECK_THROWS_AS(lca_cross_moment(p.X, cp), ConfigError);
}

TEST_CASE("matrix power and geometric sum match naive loops") {
  auto rng = make_stream(205, 3, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd M(3, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) M(r, c) = 0.3 * gauss(rng);
  for (int t : {1, 2, 3, 7, 12}) {
    Eigen::MatrixXd pw = Eigen::MatrixXd::Identity(3, 3);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(3, 3);
    for (int k = 0; k < t; ++k) {
      sum += pw;
      pw = pw * M;
    }
    CHECK(rel_err(matrix_power(M, t), pw) < 1e-13);
    CHECK(rel_err(geometric_matrix_sum(M, t), sum) < 1e-13);
  }
  CHECK(matrix_power(M, 0) == Eigen::MatrixXd::Identity(3, 3));
  CHECK_THROWS_AS(matrix_power(M, -1), NumericError);
  CHECK_THROWS_AS(geometric_matrix_sum(M, 0), NumericError);
}

TEST_CASE("deep context drives the stack to the task's best predictor") {
  DataConfig cfg;
  auto rng = make_stream(206, 3, 0);
  CaParams cp;
  cp.variant = CaVariant::lca_two_param;
  cp.alpha = 1.0 / 3.0;
  cp.beta = -1.0 / 3.0;
  cp.depth = 60;
  const int n = 200;
  std::vector<double> err_sq(n), bayes_sq(n);
  for (int i = 0; i < n; ++i) {
    TaskParams t = sample_task(cfg, rng);
    Prompt p = sample_prompt(t, 10000, rng);
    double pred = predict(p, ModelParams(cp));
    double bayes = bayes_predict(t, p.x_q);
    err_sq[static_cast<std::size_t>(i)] = (pred - bayes) * (pred - bayes);
    bayes_sq[static_cast<std::size_t>(i)] = bayes * bayes;
  }
  CHECK(pairwise_mean(err_sq) < 0.05 * pairwise_mean(bayes_sq));
}

TEST_CASE("embedding assembly and readout guardrails") {
  Prompt p = random_prompt(20, 6);
  Eigen::MatrixXd E = assemble_embedding(p.X, p.y, p.x_q);
  CHECK(E.rows() == p.d() + 1);
  CHECK(E.cols() == p.L() + 1);
  CHECK(E.topLeftCorner(p.d(), p.L()) == p.X);
  CHECK(E.topRightCorner(p.d(), 1) == p.x_q);
  CHECK(E.bottomLeftCorner(1, p.L()).transpose() == p.y);
  CHECK(E(p.d(), p.L()) == 0.0);

  Eigen::MatrixXd bad = E;
  bad(p.d(), p.L()) = 1.0;
  CHECK_THROWS_AS(lsa_forward(bad, LsaParams::frozen_readout(p.d())), NumericError);
  CHECK_THROWS_AS(lsa_forward(E, LsaParams::frozen_readout(p.d() + 2)), DimensionError);
  Eigen::VectorXd short_y = p.y.head(3);
  CHECK_THROWS_AS(assemble_embedding(p.X, short_y, p.x_q), DimensionError);

  CaParams cp;
  cp.depth = 0;
  CHECK_THROWS_AS(cp.validate(), ConfigError);
  cp.depth = 1;
  cp.alpha = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(cp.validate(), ConfigError);
}

TEST_CASE("variant names and coefficient roles") {
  for (CaVariant v :
       {CaVariant::lca_one_param, CaVariant::lca_two_param, CaVariant::lca_no_skip,
        CaVariant::deep_lsa_no_skip, CaVariant::deep_lsa_with_skip}) {
    CHECK(parse_ca_variant(ca_variant_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_ca_variant("softmax"), ConfigError);
  CaParams cp;
  cp.alpha = 0.4;
  cp.beta = -0.9;
  cp.variant = CaVariant::lca_one_param;
  CHECK(cp.effective_beta() == -0.4);
  CHECK(!cp.uses_beta());
  cp.variant = CaVariant::lca_two_param;
  CHECK(cp.effective_beta() == -0.9);
  CHECK(cp.uses_beta());
  cp.variant = CaVariant::lca_no_skip;
  CHECK(cp.effective_beta() == 0.4);
  cp.variant = CaVariant::deep_lsa_no_skip;
  CHECK(cp.effective_beta() == 0.4);
  cp.variant = CaVariant::deep_lsa_with_skip;
  CHECK(cp.effective_beta() == -0.9);
  CHECK(cp.uses_beta());

  Prompt p = random_prompt(21, 5);
  CHECK(predict(p, ModelParams(SampleMeanModel{})) == p.y.mean());
  CHECK(model_name(ModelParams(SampleMeanModel{})) == "sample_mean");
  CHECK(model_name(ModelParams(LsaParams::frozen_readout(3))) == "single_lsa");
  CaParams named;
  named.variant = CaVariant::lca_one_param;
  CHECK(model_name(ModelParams(named)) == "lca_one_param");
}
