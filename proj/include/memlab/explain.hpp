#pragma once

// KernelSHAP attributions for arbitrary regressors and their summaries.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "memlab/csv.hpp"
#include "memlab/error.hpp"
#include "memlab/models/pipeline.hpp"
#include "memlab/models/svr.hpp"
#include "memlab/random.hpp"
#include "memlab/scoring.hpp"

namespace memlab {

using ModelFn = std::function<double(const Vector&)>;

inline constexpr std::size_t kShapExactMax = 12;
inline constexpr std::size_t kMaxBackgroundRows = 100;

struct ShapExplanation {
  std::vector<std::string> names;
  Vector phi;
  double base_value = 0.0;
  double fx = 0.0;
};

/// Seeded subsample of at most `max_rows` rows (all rows, in order, when small enough).
inline Matrix subsample_background(const Matrix& X, std::size_t max_rows, std::uint64_t seed) {
  require(X.rows() > 0, Errc::Empty, "background has no rows");
  const auto n = static_cast<std::size_t>(X.rows());
  if (n <= max_rows) return X;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(idx), rng);
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  return take_rows(X, idx);
}

namespace detail {

using Mask = std::vector<char>;

/// Expected model output with features outside `mask` drawn from the background.
inline double coalition_value(const ModelFn& f, const Vector& x, const Matrix& bg, const Mask& mask) {
  double sum = 0.0;
  Vector z(x.size());
  for (Eigen::Index r = 0; r < bg.rows(); ++r) {
    for (Eigen::Index j = 0; j < x.size(); ++j) z(j) = mask[static_cast<std::size_t>(j)] ? x(j) : bg(r, j);
    sum += f(z);
  }
  return sum / static_cast<double>(bg.rows());
}

inline double shapley_kernel(std::size_t k, std::size_t s) {
  // (k - 1) / (C(k, s) * s * (k - s)), with C(k, s) in floating point
  double binom = 1.0;
  for (std::size_t i = 1; i <= s; ++i) binom = binom * static_cast<double>(k - s + i) / static_cast<double>(i);
  return static_cast<double>(k - 1) / (binom * static_cast<double>(s) * static_cast<double>(k - s));
}

/// Paired samples of proper coalitions, sizes drawn in proportion to total kernel mass.
inline std::map<Mask, double> sample_coalitions(std::size_t k, std::size_t n, std::uint64_t seed) {
  std::vector<double> cdf(k - 1);
  double acc = 0.0;
  for (std::size_t s = 1; s < k; ++s) {
    acc += 1.0 / static_cast<double>(s * (k - s));
    cdf[s - 1] = acc;
  }
  Rng rng(seed);
  std::vector<std::size_t> order(k);
  std::map<Mask, double> out;
  const std::size_t pairs = std::max<std::size_t>(1, (n + 1) / 2);
  for (std::size_t p = 0; p < pairs; ++p) {
    const double u = uniform01(rng) * acc;
    const std::size_t s = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()) + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < s; ++i) std::swap(order[i], order[i + uniform_index(rng, k - i)]);
    Mask m(k, 0);
    for (std::size_t i = 0; i < std::min(s, k - 1); ++i) m[order[i]] = 1;
    Mask c(k);
    for (std::size_t j = 0; j < k; ++j) c[j] = m[j] ? 0 : 1;
    out[m] += 1.0;
    out[c] += 1.0;
  }
  return out;
}

}  // namespace detail

/// Shapley values of f at x. Features with k <= 12 are enumerated exactly;
/// wider inputs use `n_coalitions` paired samples drawn with `seed`.
inline ShapExplanation kernel_shap(const ModelFn& f, const Vector& x, const Matrix& background,
                                   std::size_t n_coalitions, std::uint64_t seed,
                                   std::vector<std::string> names = {}) {
  const auto k = static_cast<std::size_t>(x.size());
  require(k >= 1, Errc::Validation, "instance has no features");
  require(background.rows() > 0, Errc::Empty, "background has no rows");
  require(background.cols() == x.size(), Errc::InconsistentFeatures,
          "background has " + std::to_string(background.cols()) + " columns, instance has " + std::to_string(k));
  if (names.empty()) {
    for (std::size_t j = 0; j < k; ++j) names.push_back("x" + std::to_string(j));
  }
  require(names.size() == k, Errc::InconsistentFeatures, "feature name count does not match the instance");

  ShapExplanation e;
  e.names = std::move(names);
  e.fx = f(x);
  e.base_value = detail::coalition_value(f, x, background, detail::Mask(k, 0));
  e.phi = Vector::Zero(static_cast<Eigen::Index>(k));
  const double total = e.fx - e.base_value;
  if (k == 1) {
    e.phi(0) = total;
    return e;
  }

  std::map<detail::Mask, double> coalitions;
  if (k <= kShapExactMax) {
    for (std::uint32_t bits = 1; bits + 1 < (1u << k); ++bits) {
      detail::Mask m(k);
      std::size_t s = 0;
      for (std::size_t j = 0; j < k; ++j) s += (m[j] = static_cast<char>((bits >> j) & 1u));
      coalitions[m] = detail::shapley_kernel(k, s);
    }
  } else {
    require(n_coalitions >= 2, Errc::Validation, "n_coalitions must be at least 2");
    coalitions = detail::sample_coalitions(k, n_coalitions, seed);
  }

  // phi_last = total - sum(others) folds the efficiency constraint into the design.
  const auto rows = static_cast<Eigen::Index>(coalitions.size());
  const auto p = static_cast<Eigen::Index>(k - 1);
  Matrix A(rows, p);
  Vector b(rows);
  Eigen::Index r = 0;
  for (const auto& [m, w] : coalitions) {
    const double sw = std::sqrt(w);
    const double last = m[k - 1] ? 1.0 : 0.0;
    for (Eigen::Index j = 0; j < p; ++j) A(r, j) = sw * ((m[static_cast<std::size_t>(j)] ? 1.0 : 0.0) - last);
    b(r) = sw * (detail::coalition_value(f, x, background, m) - e.base_value - last * total);
    ++r;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(A);
  require(qr.rank() == p, Errc::Singular,
          "coalition design is rank deficient; increase n_coalitions");
  const Vector sol = qr.solve(b);
  e.phi.head(p) = sol;
  e.phi(p) = total - sol.sum();
  return e;
}

/// Explanation of a trained pipeline in its selected-feature space. `x` and
/// `background` are full-width rows; names are the full feature names.
inline ShapExplanation explain_pipeline(const PipelineModel& model, const Vector& x, const Matrix& background,
                                        const std::vector<std::string>& names, std::size_t n_coalitions,
                                        std::uint64_t seed) {
  require(static_cast<Eigen::Index>(names.size()) == x.size(), Errc::InconsistentFeatures,
          "feature names do not match the instance width");
  Vector sub(static_cast<Eigen::Index>(model.selected.size()));
  std::vector<std::string> sub_names;
  for (std::size_t c = 0; c < model.selected.size(); ++c) {
    require(static_cast<Eigen::Index>(model.selected[c]) < x.size(), Errc::InconsistentFeatures,
            "instance narrower than the model's selected features");
    sub(static_cast<Eigen::Index>(c)) = x(static_cast<Eigen::Index>(model.selected[c]));
    sub_names.push_back(names[model.selected[c]]);
  }
  const Matrix bg = take_columns(background, model.selected);
  // the wrapped models standardize internally
  const ModelFn f = [&model](const Vector& z) {
    return model.labels.denormalize(std::visit([&](const auto& m) { return m.predict(z); }, model.model));
  };
  return kernel_shap(f, sub, bg, n_coalitions, seed, std::move(sub_names));
}

struct ShapSummary {
  std::vector<std::string> names;
  Vector mean_abs;                  // per feature
  std::vector<std::size_t> ranking; // feature indices, most important first
  std::vector<int> direction;       // sign of Spearman(value, phi); 0 when undefined
  Matrix values;                    // samples x features
  Matrix phi;                       // samples x features

  std::vector<std::string> ranked_names() const {
    std::vector<std::string> out;
    for (auto i : ranking) out.push_back(names[i]);
    return out;
  }
};

/// `feature_values` holds the explained rows in the explanations' feature space.
inline ShapSummary shap_summary(const std::vector<ShapExplanation>& explanations, const Matrix& feature_values) {
  require(!explanations.empty(), Errc::Empty, "no explanations to summarize");
  ShapSummary s;
  s.names = explanations.front().names;
  const auto k = static_cast<Eigen::Index>(s.names.size());
  const auto n = static_cast<Eigen::Index>(explanations.size());
  require(feature_values.rows() == n && feature_values.cols() == k, Errc::InconsistentFeatures,
          "feature values must be " + std::to_string(n) + "x" + std::to_string(k));
  s.values = feature_values;
  s.phi.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = explanations[static_cast<std::size_t>(i)];
    require(e.names == s.names && e.phi.size() == k, Errc::InconsistentFeatures,
            "explanation " + std::to_string(i) + " has a different feature set");
    s.phi.row(i) = e.phi.transpose();
  }
  s.mean_abs = s.phi.cwiseAbs().colwise().mean().transpose();
  s.ranking.resize(static_cast<std::size_t>(k));
  std::iota(s.ranking.begin(), s.ranking.end(), std::size_t{0});
  std::stable_sort(s.ranking.begin(), s.ranking.end(), [&](std::size_t a, std::size_t b) {
    return s.mean_abs(static_cast<Eigen::Index>(a)) > s.mean_abs(static_cast<Eigen::Index>(b));
  });
  // attributions at solver round-off level carry no direction
  const double noise = 1e-9 * std::max(1.0, s.phi.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < k; ++j) {
    const Vector v = s.values.col(j), p = s.phi.col(j);
    const double rho = n < 2 || p.cwiseAbs().maxCoeff() <= noise ? 0.0
                             : spearman_or_zero(std::span<const double>(v.data(), static_cast<std::size_t>(n)),
                                                std::span<const double>(p.data(), static_cast<std::size_t>(n)));
    s.direction.push_back(rho > 0.0 ? 1 : rho < 0.0 ? -1 : 0);
  }
  return s;
}

/// feature,sample_index,feature_value,phi; features in ranking order.
inline std::string summary_to_csv(const ShapSummary& s) {
  std::string out = csv::join_row({"feature", "sample_index", "feature_value", "phi"});
  for (auto j : s.ranking) {
    const auto c = static_cast<Eigen::Index>(j);
    for (Eigen::Index i = 0; i < s.phi.rows(); ++i) {
      out += csv::join_row({s.names[j], std::to_string(i), csv::format_double(s.values(i, c)),
                            csv::format_double(s.phi(i, c))});
    }
  }
  return out;
}

/// feature,mean_abs_phi,direction; one row per feature, most important first.
inline std::string ranking_to_csv(const ShapSummary& s) {
  std::string out = csv::join_row({"feature", "mean_abs_phi", "direction"});
  for (auto j : s.ranking) {
    out += csv::join_row({s.names[j], csv::format_double(s.mean_abs(static_cast<Eigen::Index>(j))),
                          std::to_string(s.direction[j])});
  }
  return out;
}

}  // namespace memlab
