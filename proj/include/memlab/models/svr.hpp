#pragma once

// Epsilon-insensitive support vector regression trained by SMO.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "memlab/error.hpp"

namespace memlab {

using Matrix = Eigen::MatrixXd;  // rows are samples
using Vector = Eigen::VectorXd;

inline void require_finite(const Matrix& X, const std::string& what) {
  require(X.allFinite(), Errc::NonFinite, what + " contains non-finite values");
}
inline void require_finite(const Vector& y, const std::string& what) {
  require(y.allFinite(), Errc::NonFinite, what + " contains non-finite values");
}

/// Per-column z-scoring. Constant columns get unit scale so they map to 0.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& X) {
    Standardizer s;
    const double n = static_cast<double>(X.rows());
    s.mean = X.colwise().mean().transpose();
    s.scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double var = (X.col(j).array() - s.mean(j)).square().sum() / n;
      s.scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Matrix transform(const Matrix& X) const {
    require(X.cols() == mean.size(), Errc::Validation,
            "expected " + std::to_string(mean.size()) + " features, got " + std::to_string(X.cols()));
    return (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
  Vector transform_row(const Vector& x) const {
    require(x.size() == mean.size(), Errc::Validation,
            "expected " + std::to_string(mean.size()) + " features, got " + std::to_string(x.size()));
    return (x - mean).cwiseQuotient(scale);
  }
};

enum class KernelKind { Linear, Rbf };

struct SvrConfig {
  KernelKind kernel = KernelKind::Linear;
  double C = 1.0;
  double epsilon = 0.05;
  double gamma = 0.0;  // <= 0 selects 1 / (k * variance of the standardized inputs)
  double tolerance = 1e-3;
  std::size_t max_iter = 0;  // 0 selects 100 passes of n iterations per training row: 100 * n * n
};

struct SvrModel {
  KernelKind kernel = KernelKind::Linear;
  double C = 1.0;
  double epsilon = 0.05;
  double gamma = 0.0;
  Standardizer standardizer;
  Matrix support;  // standardized support vectors
  Vector coef;     // alpha_i - alpha_i^*, one per support vector
  double bias = 0.0;
  Vector weights;  // collapsed primal weights (linear kernel only)
  std::size_t iterations = 0;

  double kernel_value(const Vector& a, const Vector& b) const {
    if (kernel == KernelKind::Linear) return a.dot(b);
    return std::exp(-gamma * (a - b).squaredNorm());
  }

  /// Dual-form decision value on a standardized input.
  double decision_dual(const Vector& z) const {
    double f = bias;
    for (Eigen::Index i = 0; i < support.rows(); ++i) f += coef(i) * kernel_value(support.row(i).transpose(), z);
    return f;
  }

  double predict(const Vector& x) const {
    const Vector z = standardizer.transform_row(x);
    if (kernel == KernelKind::Linear) return weights.dot(z) + bias;
    return decision_dual(z);
  }

  Vector predict(const Matrix& X) const {
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict(Vector(X.row(i).transpose()));
    return out;
  }

  /// Linear weight of each feature in the original (unstandardized) units.
  Vector original_scale_weights() const {
    require(kernel == KernelKind::Linear, Errc::Validation, "only linear models have primal weights");
    return weights.cwiseQuotient(standardizer.scale);
  }
};

namespace detail {

/// LIBSVM-style solver for the epsilon-SVR dual written over 2n variables:
/// t < n carries alpha_t (label +1), t >= n carries alpha*_{t-n} (label -1).
struct SvrSmo {
  const Matrix& K;  // n x n kernel matrix
  std::size_t n;
  double C;
  std::vector<double> alpha, grad;
  std::vector<signed char> sign;

  SvrSmo(const Matrix& kernel, const Vector& y, double c, double eps)
      : K(kernel), n(static_cast<std::size_t>(y.size())), C(c), alpha(2 * n, 0.0), grad(2 * n), sign(2 * n) {
    for (std::size_t i = 0; i < n; ++i) {
      sign[i] = 1;
      sign[i + n] = -1;
      grad[i] = eps - y(static_cast<Eigen::Index>(i));
      grad[i + n] = eps + y(static_cast<Eigen::Index>(i));
    }
  }

  double Q(std::size_t a, std::size_t b) const {
    return sign[a] * sign[b] * K(static_cast<Eigen::Index>(a % n), static_cast<Eigen::Index>(b % n));
  }
  bool in_up(std::size_t t) const { return sign[t] > 0 ? alpha[t] < C : alpha[t] > 0.0; }
  bool in_low(std::size_t t) const { return sign[t] > 0 ? alpha[t] > 0.0 : alpha[t] < C; }

  /// Second-order working set selection; false once the KKT gap is below tol.
  bool select(double tol, std::size_t& out_i, std::size_t& out_j) const {
    constexpr double kTau = 1e-12;
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = 2 * n;
    for (std::size_t t = 0; t < 2 * n; ++t) {
      if (in_up(t) && -sign[t] * grad[t] >= gmax) {
        gmax = -sign[t] * grad[t];
        i = t;
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    std::size_t j = 2 * n;
    for (std::size_t t = 0; t < 2 * n && i < 2 * n; ++t) {
      if (!in_low(t)) continue;
      gmax2 = std::max(gmax2, sign[t] * grad[t]);
      const double b = gmax + sign[t] * grad[t];
      if (b <= 0.0) continue;
      double a = Q(i, i) + Q(t, t) - 2.0 * sign[i] * sign[t] * Q(i, t);
      if (a <= 0.0) a = kTau;
      if (-(b * b) / a <= best) {
        best = -(b * b) / a;
        j = t;
      }
    }
    if (i == 2 * n || j == 2 * n || gmax + gmax2 < tol) return false;
    out_i = i;
    out_j = j;
    return true;
  }

  void update(std::size_t i, std::size_t j) {
    constexpr double kTau = 1e-12;
    const double old_i = alpha[i], old_j = alpha[j];
    double& ai = alpha[i];
    double& aj = alpha[j];
    if (sign[i] != sign[j]) {
      double quad = Q(i, i) + Q(j, j) + 2.0 * Q(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0.0) {
        if (aj < 0.0) aj = 0.0, ai = diff;
      } else if (ai < 0.0) {
        ai = 0.0, aj = -diff;
      }
      if (diff > 0.0) {
        if (ai > C) ai = C, aj = C - diff;
      } else if (aj > C) {
        aj = C, ai = C + diff;
      }
    } else {
      double quad = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > C) {
        if (ai > C) ai = C, aj = sum - C;
      } else if (aj < 0.0) {
        aj = 0.0, ai = sum;
      }
      if (sum > C) {
        if (aj > C) aj = C, ai = sum - C;
      } else if (ai < 0.0) {
        ai = 0.0, aj = sum;
      }
    }
    const double di = ai - old_i, dj = aj - old_j;
    for (std::size_t t = 0; t < 2 * n; ++t) grad[t] += Q(t, i) * di + Q(t, j) * dj;
  }

  /// Offset from free variables, or the midpoint of the feasible interval.
  double rho() const {
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum = 0.0;
    std::size_t free = 0;
    for (std::size_t t = 0; t < 2 * n; ++t) {
      const double yg = sign[t] * grad[t];
      if (alpha[t] >= C) {
        if (sign[t] < 0) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else if (alpha[t] <= 0.0) {
        if (sign[t] > 0) ub = std::min(ub, yg);
        else lb = std::max(lb, yg);
      } else {
        ++free;
        sum += yg;
      }
    }
    return free > 0 ? sum / static_cast<double>(free) : 0.5 * (ub + lb);
  }
};

}  // namespace detail

inline SvrModel train_svr(const Matrix& X, const Vector& y, const SvrConfig& cfg = {}) {
  require(X.rows() >= 2, Errc::InsufficientData, "SVR training needs at least 2 rows");
  require(X.rows() == y.size(), Errc::LengthMismatch, "feature rows and labels differ in count");
  require(cfg.C > 0.0 && cfg.epsilon >= 0.0, Errc::Validation, "SVR needs C > 0 and epsilon >= 0");
  require_finite(X, "SVR features");
  require_finite(y, "SVR labels");

  SvrModel m;
  m.kernel = cfg.kernel;
  m.C = cfg.C;
  m.epsilon = cfg.epsilon;
  m.standardizer = Standardizer::fit(X);
  const Matrix Z = m.standardizer.transform(X);
  const auto n = static_cast<std::size_t>(Z.rows());
  if (cfg.kernel == KernelKind::Rbf) {
    const double mean = Z.mean();
    const double var = (Z.array() - mean).square().mean();
    m.gamma = cfg.gamma > 0.0 ? cfg.gamma
                              : 1.0 / (static_cast<double>(Z.cols()) * (var > 0.0 ? var : 1.0));
  }

  Matrix K(Z.rows(), Z.rows());
  if (cfg.kernel == KernelKind::Linear) {
    K.noalias() = Z * Z.transpose();
  } else {
    const Vector sq = Z.rowwise().squaredNorm();
    K.noalias() = -2.0 * Z * Z.transpose();
    K.colwise() += sq;
    K.rowwise() += sq.transpose();
    K = (-m.gamma * K.array().max(0.0)).exp();
  }

  detail::SvrSmo smo(K, y, cfg.C, cfg.epsilon);
  const std::size_t cap = cfg.max_iter > 0 ? cfg.max_iter : std::max<std::size_t>(100 * n * n, 10000);
  std::size_t iter = 0;
  for (std::size_t i = 0, j = 0; smo.select(cfg.tolerance, i, j); ++iter) {
    require(iter < cap, Errc::NoConvergence,
            "SMO did not reach KKT tolerance within " + std::to_string(cap) + " iterations");
    smo.update(i, j);
  }
  m.iterations = iter;
  m.bias = -smo.rho();

  std::vector<Eigen::Index> sv;
  std::vector<double> c;
  for (std::size_t i = 0; i < n; ++i) {
    const double beta = smo.alpha[i] - smo.alpha[i + n];
    if (beta != 0.0) {
      sv.push_back(static_cast<Eigen::Index>(i));
      c.push_back(beta);
    }
  }
  m.support.resize(static_cast<Eigen::Index>(sv.size()), Z.cols());
  m.coef.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    m.support.row(static_cast<Eigen::Index>(s)) = Z.row(sv[s]);
    m.coef(static_cast<Eigen::Index>(s)) = c[s];
  }
  if (cfg.kernel == KernelKind::Linear) m.weights = m.support.transpose() * m.coef;
  return m;
}

// ---- serialization

inline nlohmann::json vec_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vec_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json mat_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
  return rows;
}

inline Matrix mat_from_json(const nlohmann::json& j, Eigen::Index cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector r = vec_from_json(j[i]);
    require(r.size() == cols, Errc::Parse, "matrix row has the wrong width");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

inline nlohmann::json to_json(const Standardizer& s) {
  return {{"mean", vec_to_json(s.mean)}, {"scale", vec_to_json(s.scale)}};
}

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s{vec_from_json(j.at("mean")), vec_from_json(j.at("scale"))};
  require(s.mean.size() == s.scale.size(), Errc::Parse, "standardizer mean/scale widths differ");
  return s;
}

inline nlohmann::json to_json(const SvrModel& m) {
  nlohmann::json j = {{"type", "svr"},
                      {"kernel", m.kernel == KernelKind::Linear ? "linear" : "rbf"},
                      {"C", m.C},
                      {"epsilon", m.epsilon},
                      {"gamma", m.gamma},
                      {"bias", m.bias},
                      {"standardizer", to_json(m.standardizer)},
                      {"support", mat_to_json(m.support)},
                      {"coef", vec_to_json(m.coef)}};
  if (m.kernel == KernelKind::Linear) j["weights"] = vec_to_json(m.weights);
  return j;
}

inline SvrModel svr_from_json(const nlohmann::json& j) {
  try {
    SvrModel m;
    const auto kernel = j.at("kernel").get<std::string>();
    require(kernel == "linear" || kernel == "rbf", Errc::Parse, "unknown kernel '" + kernel + "'");
    m.kernel = kernel == "linear" ? KernelKind::Linear : KernelKind::Rbf;
    m.C = j.at("C").get<double>();
    m.epsilon = j.at("epsilon").get<double>();
    m.gamma = j.at("gamma").get<double>();
    m.bias = j.at("bias").get<double>();
    m.standardizer = standardizer_from_json(j.at("standardizer"));
    m.support = mat_from_json(j.at("support"), m.standardizer.mean.size());
    m.coef = vec_from_json(j.at("coef"));
    require(m.coef.size() == m.support.rows(), Errc::Parse, "coefficient count differs from support vectors");
    if (m.kernel == KernelKind::Linear) {
      m.weights = j.contains("weights") ? vec_from_json(j.at("weights")) : Vector(m.support.transpose() * m.coef);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::Parse, std::string("malformed SVR checkpoint: ") + e.what());
  }
}

}  // namespace memlab
