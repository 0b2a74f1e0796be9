#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mmicl/theory.hpp"

using namespace mmicl;

namespace {

LsaBlocks random_blocks(int d, std::uint64_t index) {
  auto rng = make_stream(501, 7, index);
  std::normal_distribution<double> gauss(0.0, 1.0);
  LsaBlocks blk;
  blk.A.resize(d, d);
  blk.b.resize(d);
  blk.b_prime.resize(d);
  blk.u.resize(d);
  for (int i = 0; i < d; ++i) {
    blk.b(i) = 0.4 * gauss(rng);
    blk.b_prime(i) = 0.4 * gauss(rng);
    blk.u(i) = 0.4 * gauss(rng);
    for (int j = 0; j < d; ++j) blk.A(i, j) = 0.4 * gauss(rng);
  }
  blk.c = 0.4 * gauss(rng);
  blk.v = 0.4 * gauss(rng);
  return blk;
}

}  // namespace

TEST_CASE("block decomposition round-trips exactly") {
  for (std::uint64_t i = 0; i < 5; ++i) {
    LsaBlocks blk = random_blocks(4, i);
    LsaParams params = blk.reassemble();
    LsaBlocks back = LsaBlocks::from_params(params);
    CHECK(back.A == blk.A);
    CHECK(back.b == blk.b);
    CHECK(back.b_prime == blk.b_prime);
    CHECK(back.c == blk.c);
    CHECK(back.u == blk.u);
    CHECK(back.v == blk.v);
    // rows of w_pv above the readout are zero by construction
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c <= 4; ++c) CHECK(params.w_pv(r, c) == 0.0);
    }
  }
}

TEST_CASE("limiting weights on a hand-evaluated case") {
  int d = 3;
  LsaBlocks blk;
  blk.A = Eigen::MatrixXd::Identity(d, d);
  blk.b = Eigen::VectorXd::Zero(d);
  blk.b_prime = Eigen::VectorXd::Zero(d);
  blk.c = 0.0;
  blk.u = Eigen::VectorXd::Unit(d, 0);
  blk.v = 0.0;
  Eigen::VectorXd m(d);
  m << 1.0, 2.0, 0.0;
  TaskParams task = TaskParams::from_m(m, 1.7);
  // what = Lambda e_1 = e_1 + (m^T e_1) m
  Eigen::VectorXd what = lsa_limiting_weights(blk, task);
  Eigen::VectorXd expect = Eigen::VectorXd::Unit(d, 0) + 1.0 * task.m;
  CHECK((what - expect).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("limiting weights are quadratic in the label scale") {
  // third finite difference in zeta vanishes identically
  LsaBlocks blk = random_blocks(5, 11);
  auto rng = make_stream(502, 7, 0);
  DataConfig cfg;
  cfg.d1 = 3;
  cfg.d2 = 2;
  TaskParams base = sample_task(cfg, rng);
  auto at_zeta = [&](double zeta) {
    return lsa_limiting_weights(blk, TaskParams::from_m(base.m, zeta));
  };
  Eigen::VectorXd w0 = at_zeta(0.0), w1 = at_zeta(1.0), w2 = at_zeta(2.0),
                  w3 = at_zeta(3.0);
  Eigen::VectorXd third = w3 - 3.0 * w2 + 3.0 * w1 - w0;
  CHECK(third.lpNorm<Eigen::Infinity>() < 1e-11);
  // and genuinely quadratic when v and b are both active
  Eigen::VectorXd second = w2 - 2.0 * w1 + w0;
  CHECK(second.lpNorm<Eigen::Infinity>() > 1e-8);
}

TEST_CASE("limiting weights match long-context simulation") {
  DataConfig cfg;
  cfg.d1 = 3;
  cfg.d2 = 2;
  const int n_prompts = 20;
  const int L = 20000;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    LsaBlocks blk = random_blocks(5, 20 + rep);
    LsaParams params = blk.reassemble();
    auto rng = make_stream(503, 7, rep);
    TaskParams task = sample_task(cfg, rng);
    Eigen::VectorXd what = lsa_limiting_weights(blk, task);
    std::vector<double> dev(n_prompts);
    for (int j = 0; j < n_prompts; ++j) {
      Prompt pr = sample_prompt(task, L, rng);
      double pred = predict(pr, ModelParams(params));
      dev[static_cast<std::size_t>(j)] = pred - what.dot(pr.x_q);
    }
    double mean = pairwise_mean(dev);
    double se = sample_std(dev) / std::sqrt(static_cast<double>(n_prompts));
    CHECK(std::fabs(mean) <= 5.0 * std::max(se, 1e-4));
  }
}

TEST_CASE("no single-layer weight setting matches the best vector on a generic law") {
  DataConfig cfg;  // default law: ||m|| ~ U(0,2), gaussian zeta
  auto rng = make_stream(504, 7, 0);
  for (std::uint64_t i = 0; i < 3; ++i) {
    LsaBlocks blk = random_blocks(10, 40 + i);
    MismatchReport rep = theorem1_scan(blk, cfg, 10000, rng);
    CHECK(rep.n_tasks == 10000);
    CHECK(rep.n_below == 0);
    CHECK(rep.frac_below == 0.0);
    CHECK(rep.min_norm > rep.threshold);
    CHECK(rep.q25 <= rep.median);
    CHECK(rep.median <= rep.q75);
    CHECK(rep.q75 <= rep.max_norm);
  }
  // zero weights give what = 0 while w != 0 almost surely
  LsaBlocks zero = random_blocks(10, 50);
  zero.A.setZero();
  zero.b.setZero();
  zero.u.setZero();
  zero.v = 0.0;
  MismatchReport rz = theorem1_scan(zero, cfg, 10000, rng);
  CHECK(rz.n_below == 0);
  CHECK(rz.law_note.find("gaussian") != std::string::npos);
}

TEST_CASE("a degenerate spike law admits an exact single-layer match") {
  // Z = 2 for every task: A = Lambda^{-1}-free scaling I/2, u-row reads the
  // label average direction: what = A^T Lambda u with u chosen so that
  // what = w requires the task-dependent part to collapse, which happens
  // only because Z is constant.
  DataConfig cfg;
  cfg.m_dist.norm_law = NormLaw::make_point(1.0);  // ||m|| = 1, Z = 2
  int d = cfg.d1 + cfg.d2;
  LsaBlocks blk;
  blk.A = 0.5 * Eigen::MatrixXd::Identity(d, d);
  blk.b = Eigen::VectorXd::Zero(d);
  blk.b_prime = Eigen::VectorXd::Zero(d);
  blk.c = 0.0;
  blk.u = Eigen::VectorXd::Zero(d);
  blk.v = 1.0;
  // what = zeta A^T m = (zeta/2) m = (zeta/Z) m = w exactly
  auto rng = make_stream(505, 7, 0);
  MismatchReport rep = theorem1_scan(blk, cfg, 2000, rng);
  CHECK(rep.frac_below == 1.0);
  CHECK(rep.max_norm < 1e-10);
}

TEST_CASE("depth-indexed minimizers collapse instantly on a spike law") {
  MDistribution md;
  md.norm_law = NormLaw::make_point(1.3);
  ZMoments zm(md);
  std::vector<AlphaStarRow> rows = alpha_star_sequence({1, 3, 10}, zm);
  double z = 1.0 + 1.3 * 1.3;
  for (const AlphaStarRow& r : rows) {
    CHECK(r.alpha_star_t == doctest::Approx(1.0 / z).epsilon(1e-7));
    CHECK(r.gap < 1e-7);
  }
}

TEST_CASE("depth-indexed minimizers converge on the default law") {
  ZMoments zm = ZMoments(MDistribution{});
  std::vector<AlphaStarRow> rows = alpha_star_sequence({10, 50, 200}, zm);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].depth == 10);
  CHECK(rows[0].alpha_star_t == doctest::Approx(0.322857).epsilon(2e-4));
  CHECK(rows[0].gap == doctest::Approx(0.010476).epsilon(0.02));
  CHECK(rows[1].gap < rows[0].gap);
  CHECK(rows[2].gap < rows[1].gap);
  CHECK(rows[2].gap < 1e-2);
  for (const AlphaStarRow& r : rows) {
    CHECK(r.alpha_star_t > 0.0);
    CHECK(r.alpha_star_t < 1.0 / 3.0);
  }
}
