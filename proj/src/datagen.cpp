#include "mmicl/datagen.hpp"

#include <algorithm>
#include <cmath>

namespace mmicl {

NormLaw NormLaw::make_uniform(double lo, double hi) {
  NormLaw law;
  law.kind = NormLawKind::uniform;
  law.a = lo;
  law.b = hi;
  law.validate();
  return law;
}

NormLaw NormLaw::make_point(double r) {
  NormLaw law;
  law.kind = NormLawKind::point;
  law.r0 = r;
  law.validate();
  return law;
}

NormLaw NormLaw::make_bands(std::vector<Band> bs) {
  NormLaw law;
  law.kind = NormLawKind::bands;
  law.bands = std::move(bs);
  law.validate();
  return law;
}

void NormLaw::validate() const {
  switch (kind) {
    case NormLawKind::uniform:
      if (!(0.0 <= a && a < b) || !std::isfinite(b)) {
        throw ConfigError("norm law: uniform requires 0 <= a < b < inf");
      }
      return;
    case NormLawKind::point:
      if (!(r0 >= 0.0) || !std::isfinite(r0)) {
        throw ConfigError("norm law: point mass requires finite r >= 0");
      }
      return;
    case NormLawKind::bands: {
      if (bands.empty()) throw ConfigError("norm law: bands list is empty");
      double total = 0.0;
      for (const Band& band : bands) {
        if (!(0.0 <= band.lo && band.lo < band.hi) || !std::isfinite(band.hi)) {
          throw ConfigError("norm law: each band requires 0 <= lo < hi < inf");
        }
        if (!(band.weight > 0.0) || !std::isfinite(band.weight)) {
          throw ConfigError("norm law: band weights must be positive");
        }
        total += band.weight;
      }
      if (total <= 0.0) throw ConfigError("norm law: band weights sum to zero");
      return;
    }
  }
  throw ConfigError("norm law: unknown kind");
}

double NormLaw::lower() const {
  switch (kind) {
    case NormLawKind::uniform: return a;
    case NormLawKind::point: return r0;
    case NormLawKind::bands: {
      double lo = bands.front().lo;
      for (const Band& band : bands) lo = std::min(lo, band.lo);
      return lo;
    }
  }
  throw ConfigError("norm law: unknown kind");
}

double NormLaw::upper() const {
  switch (kind) {
    case NormLawKind::uniform: return b;
    case NormLawKind::point: return r0;
    case NormLawKind::bands: {
      double hi = bands.front().hi;
      for (const Band& band : bands) hi = std::max(hi, band.hi);
      return hi;
    }
  }
  throw ConfigError("norm law: unknown kind");
}

std::vector<Band> NormLaw::as_bands() const {
  std::vector<Band> out;
  switch (kind) {
    case NormLawKind::uniform:
      out.push_back({a, b, 1.0});
      return out;
    case NormLawKind::point:
      out.push_back({r0, r0, 1.0});
      return out;
    case NormLawKind::bands: {
      double total = 0.0;
      for (const Band& band : bands) total += band.weight;
      for (const Band& band : bands) out.push_back({band.lo, band.hi, band.weight / total});
      return out;
    }
  }
  throw ConfigError("norm law: unknown kind");
}

double NormLaw::sample(std::mt19937_64& rng) const {
  std::vector<Band> bs = as_bands();
  double pick = 0.0;
  if (bs.size() > 1) {
    pick = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }
  double acc = 0.0;
  for (const Band& band : bs) {
    acc += band.weight;
    if (pick <= acc || &band == &bs.back()) {
      if (band.hi <= band.lo) return band.lo;  // zero-width: point mass
      return std::uniform_real_distribution<double>(band.lo, band.hi)(rng);
    }
  }
  return bs.back().lo;
}

std::string NormLaw::describe() const {
  char buf[96];
  switch (kind) {
    case NormLawKind::uniform:
      std::snprintf(buf, sizeof(buf), "uniform(%g, %g)", a, b);
      return buf;
    case NormLawKind::point:
      std::snprintf(buf, sizeof(buf), "point(%g)", r0);
      return buf;
    case NormLawKind::bands: {
      std::string s = "bands(";
      bool first = true;
      for (const Band& band : bands) {
        std::snprintf(buf, sizeof(buf), "%s[%g, %g]x%g", first ? "" : ", ",
                      band.lo, band.hi, band.weight);
        s += buf;
        first = false;
      }
      return s + ")";
    }
  }
  return "unknown";
}

void MDistribution::validate() const {
  norm_law.validate();
  // A point mass is allowed for closed-form sanity configs, but mixtures and
  // intervals must be genuinely spread out.
  if (!degenerate() && !(m_lower() < m_upper())) {
    throw ConfigError("m distribution: requires m_lower < m_upper");
  }
}

ZetaLaw parse_zeta_law(const std::string& name) {
  if (name == "gaussian") return ZetaLaw::gaussian;
  if (name == "rademacher") return ZetaLaw::rademacher;
  if (name == "uniform") return ZetaLaw::uniform;
  throw ConfigError("unknown zeta law '" + name + "' (gaussian|rademacher|uniform)");
}

std::string zeta_law_name(ZetaLaw law) {
  switch (law) {
    case ZetaLaw::gaussian: return "gaussian";
    case ZetaLaw::rademacher: return "rademacher";
    case ZetaLaw::uniform: return "uniform";
  }
  return "unknown";
}

void DataConfig::validate() const {
  if (d1 < 1 || d2 < 1) throw ConfigError("data config: d1 and d2 must be >= 1");
  m_dist.validate();
}

TaskParams TaskParams::from_m(const Eigen::VectorXd& m, double zeta) {
  TaskParams task;
  task.m = m;
  task.zeta = zeta;
  task.Z = 1.0 + m.squaredNorm();
  task.w = (zeta / task.Z) * m;
  return task;
}

double sample_zeta(ZetaLaw law, std::mt19937_64& rng) {
  switch (law) {
    case ZetaLaw::gaussian:
      return std::normal_distribution<double>(0.0, 1.0)(rng);
    case ZetaLaw::rademacher:
      return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 ? -1.0 : 1.0;
    case ZetaLaw::uniform: {
      // variance-1 uniform: [-sqrt(3), sqrt(3)]
      double s = std::sqrt(3.0);
      return std::uniform_real_distribution<double>(-s, s)(rng);
    }
  }
  throw ConfigError("unknown zeta law");
}

TaskParams sample_task(const DataConfig& cfg, std::mt19937_64& rng) {
  int d = cfg.d();
  double radius = cfg.m_dist.norm_law.sample(rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd dir(d);
  double norm = 0.0;
  do {
    for (int i = 0; i < d; ++i) dir(i) = gauss(rng);
    norm = dir.norm();
  } while (norm < 1e-12);
  dir /= norm;
  double zeta = sample_zeta(cfg.zeta_dist, rng);
  return TaskParams::from_m(radius * dir, zeta);
}

Prompt sample_prompt(const TaskParams& task, int L, std::mt19937_64& rng) {
  if (L < 1) throw DimensionError("sample_prompt: L must be >= 1");
  int d = static_cast<int>(task.m.size());
  std::normal_distribution<double> gauss(0.0, 1.0);
  Prompt prompt;
  prompt.task = task;
  prompt.X.resize(d, L);
  prompt.y.resize(L);
  prompt.u.resize(L + 1);
  for (int i = 0; i < L; ++i) {
    double u = gauss(rng);
    prompt.u(i) = u;
    for (int r = 0; r < d; ++r) prompt.X(r, i) = u * task.m(r) + gauss(rng);
    prompt.y(i) = task.zeta * u;
  }
  double u_q = gauss(rng);
  prompt.u(L) = u_q;
  prompt.x_q.resize(d);
  for (int r = 0; r < d; ++r) prompt.x_q(r) = u_q * task.m(r) + gauss(rng);
  prompt.y_q = task.zeta * u_q;
  return prompt;
}

double bayes_predict(const TaskParams& task, const Eigen::VectorXd& x_q) {
  if (x_q.size() != task.m.size()) {
    throw DimensionError("bayes_predict: query dimension does not match task");
  }
  return task.w.dot(x_q);
}

Eigen::MatrixXd population_covariance(const TaskParams& task) {
  int d = static_cast<int>(task.m.size());
  return Eigen::MatrixXd::Identity(d, d) + task.m * task.m.transpose();
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& X) {
  if (X.cols() < 1) throw DimensionError("sample_covariance: X has no columns");
  return (X * X.transpose()) / static_cast<double>(X.cols());
}

}  // namespace mmicl
