#pragma once

// Label normalization, relevance-based feature selection, and k-fold
// evaluation of the full train/predict pipeline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "memlab/csv.hpp"
#include "memlab/error.hpp"
#include "memlab/models/mlp.hpp"
#include "memlab/models/svr.hpp"
#include "memlab/random.hpp"
#include "memlab/scoring.hpp"

namespace memlab {

struct LabelNormalizer {
  double mean = 0.0;

  static LabelNormalizer fit(const Vector& y) {
    require(y.size() > 0, Errc::InsufficientData, "cannot fit a label normalizer on no labels");
    return {y.mean()};
  }
  Vector normalize(const Vector& y) const { return y.array() - mean; }
  Vector denormalize(const Vector& y) const { return y.array() + mean; }
  double denormalize(double v) const { return v + mean; }
};

/// Spearman correlation that scores a constant input as 0 instead of
/// throwing; used where a degenerate column or fold is a legitimate outcome.
inline double spearman_or_zero(std::span<const double> a, std::span<const double> b) {
  try {
    return spearman(a, b).rho;
  } catch (const Error& e) {
    if (e.code() == Errc::Degenerate) return 0.0;
    throw;
  }
}

/// Indices of the k columns with the largest |Spearman rho| against y, in
/// ascending index order. Ties prefer the lower index.
inline std::vector<std::size_t> select_top_k(const Matrix& X, const Vector& y, std::size_t k) {
  const auto width = static_cast<std::size_t>(X.cols());
  require(k >= 1 && k <= width, Errc::Range,
          "k = " + std::to_string(k) + " outside 1.." + std::to_string(width));
  require(X.rows() == y.size(), Errc::LengthMismatch, "feature rows and labels differ in count");
  const std::vector<double> yv(y.data(), y.data() + y.size());
  std::vector<double> score(width);
  std::vector<double> col(static_cast<std::size_t>(X.rows()));
  for (std::size_t j = 0; j < width; ++j) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) col[static_cast<std::size_t>(i)] = X(i, static_cast<Eigen::Index>(j));
    score[j] = std::abs(spearman_or_zero(col, yv));
  }
  std::vector<std::size_t> order(width);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

inline Matrix take_columns(const Matrix& X, std::span<const std::size_t> cols) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = X.col(static_cast<Eigen::Index>(cols[c]));
  return out;
}

inline Matrix take_rows(const Matrix& X, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

inline Vector take(const Vector& y, std::span<const std::size_t> rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r)) = y(static_cast<Eigen::Index>(rows[r]));
  return out;
}

enum class ModelKind { SvrLinear, SvrRbf, Mlp };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::SvrLinear: return "svr-linear";
    case ModelKind::SvrRbf: return "svr-rbf";
    case ModelKind::Mlp: return "mlp";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "svr-linear") return ModelKind::SvrLinear;
  if (s == "svr-rbf") return ModelKind::SvrRbf;
  if (s == "mlp") return ModelKind::Mlp;
  fail(Errc::Validation, "unknown model '" + std::string(s) + "' (expected svr-linear, svr-rbf or mlp)");
}

/// Extra training rows derived from one source row. Called only with
/// training-fold row indices.
using Augmenter = std::function<Matrix(std::size_t row, Rng& rng)>;

struct PipelineConfig {
  ModelKind model = ModelKind::SvrLinear;
  SvrConfig svr;
  MlpConfig mlp;
  std::size_t k_select = 0;  // 0 keeps every feature
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  Augmenter augment;  // empty: no augmentation
};

/// A trained model plus everything needed to apply it to full-width rows.
struct PipelineModel {
  ModelKind kind = ModelKind::SvrLinear;
  std::vector<std::size_t> selected;
  LabelNormalizer labels;
  std::variant<SvrModel, MlpModel> model;

  double predict(const Vector& x) const { return labels.denormalize(predict_normalized(x)); }

  Vector predict(const Matrix& X) const { return labels.denormalize(predict_normalized(X)); }

  /// Model output before the label mean is added back.
  double predict_normalized(const Vector& x) const {
    Vector sub(static_cast<Eigen::Index>(selected.size()));
    for (std::size_t c = 0; c < selected.size(); ++c) {
      const auto idx = static_cast<Eigen::Index>(selected[c]);
      require(idx < x.size(), Errc::Validation, "input row narrower than the selected feature indices");
      sub(static_cast<Eigen::Index>(c)) = x(idx);
    }
    return std::visit([&](const auto& m) { return m.predict(sub); }, model);
  }

  Vector predict_normalized(const Matrix& X) const {
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict_normalized(Vector(X.row(i).transpose()));
    return out;
  }
};

/// Selection, label normalization and training on (X, y). `augmented`
/// holds extra training rows (full width) with labels `augmented_y`.
inline PipelineModel fit_pipeline(const Matrix& X, const Vector& y, const PipelineConfig& cfg,
                                  const Matrix* augmented = nullptr, const Vector* augmented_y = nullptr) {
  PipelineModel p;
  p.kind = cfg.model;
  const std::size_t k = cfg.k_select == 0 ? static_cast<std::size_t>(X.cols()) : cfg.k_select;
  p.selected = select_top_k(X, y, k);
  p.labels = LabelNormalizer::fit(y);

  Matrix train = take_columns(X, p.selected);
  Vector target = p.labels.normalize(y);
  if (augmented != nullptr && augmented->rows() > 0) {
    const Matrix extra = take_columns(*augmented, p.selected);
    Matrix stacked(train.rows() + extra.rows(), train.cols());
    stacked << train, extra;
    Vector ys(target.size() + augmented_y->size());
    ys << target, p.labels.normalize(*augmented_y);
    train = std::move(stacked);
    target = std::move(ys);
  }

  switch (cfg.model) {
    case ModelKind::SvrLinear: {
      SvrConfig c = cfg.svr;
      c.kernel = KernelKind::Linear;
      p.model = train_svr(train, target, c);
      break;
    }
    case ModelKind::SvrRbf: {
      SvrConfig c = cfg.svr;
      c.kernel = KernelKind::Rbf;
      p.model = train_svr(train, target, c);
      break;
    }
    case ModelKind::Mlp:
      p.model = train_mlp(train, target, cfg.mlp);
      break;
  }
  return p;
}

struct FoldResult {
  std::size_t fold = 0;
  std::vector<std::size_t> test_rows;
  std::size_t n_train = 0;      // original rows
  std::size_t n_augmented = 0;  // extra rows from the augmenter
  double rho = 0.0;
  double mse = 0.0;
  Vector predictions;  // aligned with test_rows, original label scale
};

struct EvalReport {
  double mean_rho = 0.0;
  double mean_mse = 0.0;
  double mse_std = 0.0;  // population std across folds
  std::vector<FoldResult> folds;
};

/// Shuffled assignment of n rows to `folds` near-equal folds.
inline std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  require(folds >= 2, Errc::Validation, "k-fold evaluation needs at least 2 folds");
  require(n >= 2 * folds, Errc::FoldTooSmall,
          std::to_string(n) + " rows cannot fill " + std::to_string(folds) + " folds with at least 2 rows each");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span(idx), rng);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) out[i % folds].push_back(idx[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

/// Per fold: fit the pipeline on the other folds (plus augmented copies of
/// those rows only), predict the held-out rows, and score Spearman rho and
/// MSE in the original label scale. rho is averaged over folds; a fold
/// whose predictions are constant scores rho = 0.
inline EvalReport kfold_evaluate(const Matrix& X, const Vector& y, const PipelineConfig& cfg) {
  require(X.rows() == y.size(), Errc::LengthMismatch, "feature rows and labels differ in count");
  const auto n = static_cast<std::size_t>(X.rows());
  const auto assignment = make_folds(n, cfg.folds, cfg.seed);
  EvalReport report;
  for (std::size_t f = 0; f < assignment.size(); ++f) {
    FoldResult fr;
    fr.fold = f;
    fr.test_rows = assignment[f];
    std::vector<std::size_t> train_rows;
    for (std::size_t g = 0; g < assignment.size(); ++g) {
      if (g != f) train_rows.insert(train_rows.end(), assignment[g].begin(), assignment[g].end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    fr.n_train = train_rows.size();

    const Matrix Xtr = take_rows(X, train_rows);
    const Vector ytr = take(y, train_rows);
    Matrix aug(0, X.cols());
    Vector aug_y(0);
    if (cfg.augment) {
      Rng rng(cfg.seed * 1000003ULL + f + 1);
      std::vector<Matrix> parts;
      std::vector<double> labels;
      Eigen::Index total = 0;
      for (std::size_t r : train_rows) {
        Matrix extra = cfg.augment(r, rng);
        require(extra.rows() == 0 || extra.cols() == X.cols(), Errc::Validation, "augmented rows have the wrong width");
        total += extra.rows();
        labels.insert(labels.end(), static_cast<std::size_t>(extra.rows()), y(static_cast<Eigen::Index>(r)));
        parts.push_back(std::move(extra));
      }
      aug.resize(total, X.cols());
      Eigen::Index o = 0;
      for (const auto& p : parts) {
        if (p.rows() == 0) continue;
        aug.middleRows(o, p.rows()) = p;
        o += p.rows();
      }
      aug_y = Eigen::Map<const Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
      fr.n_augmented = static_cast<std::size_t>(total);
    }

    const PipelineModel model = fit_pipeline(Xtr, ytr, cfg, &aug, &aug_y);
    const Matrix Xte = take_rows(X, fr.test_rows);
    // Scored in label-normalized coordinates: residuals and ranks are the
    // same as in the original scale, and no rounding from adding the label
    // mean back can make the scores depend on a constant label shift.
    const Vector yte = model.labels.normalize(take(y, fr.test_rows));
    const Vector raw = model.predict_normalized(Xte);
    fr.predictions = model.labels.denormalize(raw);
    fr.mse = (raw - yte).squaredNorm() / static_cast<double>(yte.size());
    fr.rho = spearman_or_zero(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())),
                              std::span<const double>(yte.data(), static_cast<std::size_t>(yte.size())));
    report.folds.push_back(std::move(fr));
  }
  const double k = static_cast<double>(report.folds.size());
  for (const auto& fr : report.folds) {
    report.mean_rho += fr.rho / k;
    report.mean_mse += fr.mse / k;
  }
  double var = 0.0;
  for (const auto& fr : report.folds) var += (fr.mse - report.mean_mse) * (fr.mse - report.mean_mse) / k;
  report.mse_std = std::sqrt(var);
  return report;
}

/// fold,n_test,spearman,mse per fold, then "mean" and "std" summary rows.
inline std::string report_to_csv(const EvalReport& r) {
  std::string out = csv::join_row({"fold", "n_test", "spearman", "mse"});
  std::size_t n = 0;
  double rho_var = 0.0;
  for (const auto& f : r.folds) {
    out += csv::join_row({std::to_string(f.fold), std::to_string(f.test_rows.size()), csv::format_double(f.rho),
                          csv::format_double(f.mse)});
    n += f.test_rows.size();
    rho_var += (f.rho - r.mean_rho) * (f.rho - r.mean_rho) / static_cast<double>(r.folds.size());
  }
  out += csv::join_row({"mean", std::to_string(n), csv::format_double(r.mean_rho), csv::format_double(r.mean_mse)});
  out += csv::join_row({"std", std::to_string(n), csv::format_double(std::sqrt(rho_var)), csv::format_double(r.mse_std)});
  return out;
}

// ---- checkpoints

inline nlohmann::json to_json(const PipelineModel& p) {
  nlohmann::json j = {{"model", model_kind_name(p.kind)}, {"selected", p.selected}, {"label_mean", p.labels.mean}};
  j["weights"] = std::visit([](const auto& m) { return to_json(m); }, p.model);
  return j;
}

inline PipelineModel pipeline_from_json(const nlohmann::json& j) {
  try {
    PipelineModel p;
    p.kind = parse_model_kind(j.at("model").get<std::string>());
    p.selected = j.at("selected").get<std::vector<std::size_t>>();
    p.labels.mean = j.at("label_mean").get<double>();
    if (p.kind == ModelKind::Mlp) {
      p.model = mlp_from_json(j.at("weights"));
    } else {
      p.model = svr_from_json(j.at("weights"));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::Parse, std::string("malformed model checkpoint: ") + e.what());
  }
}

}  // namespace memlab
