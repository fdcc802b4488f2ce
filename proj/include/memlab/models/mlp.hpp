#pragma once

// Fully connected ReLU regressor trained with Adam on mean squared error.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "memlab/error.hpp"
#include "memlab/models/svr.hpp"
#include "memlab/random.hpp"

namespace memlab {

struct MlpConfig {
  std::vector<std::size_t> hidden = {64, 16};
  double learning_rate = 5e-5;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct MlpModel {
  std::vector<std::size_t> sizes;  // input, hidden..., 1
  std::vector<Matrix> weights;     // layer l maps sizes[l] -> sizes[l+1]; shape out x in
  std::vector<Vector> biases;
  Standardizer standardizer;
  std::size_t best_epoch = 0;

  /// Forward pass on a standardized input.
  double forward(const Vector& z) const {
    Vector a = z;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Vector h = weights[l] * a + biases[l];
      if (l + 1 < weights.size()) h = h.cwiseMax(0.0);
      a = std::move(h);
    }
    return a(0);
  }

  double predict(const Vector& x) const { return forward(standardizer.transform_row(x)); }

  Vector predict(const Matrix& X) const {
    const Matrix Z = standardizer.transform(X);
    Vector out(Z.rows());
    for (Eigen::Index i = 0; i < Z.rows(); ++i) out(i) = forward(Z.row(i).transpose());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  /// All weights then biases per layer, weights column-major.
  Vector flat() const {
    Vector p(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      p.segment(o, weights[l].size()) = weights[l].reshaped();
      o += weights[l].size();
      p.segment(o, biases[l].size()) = biases[l];
      o += biases[l].size();
    }
    return p;
  }

  void set_flat(const Vector& p) {
    require(static_cast<std::size_t>(p.size()) == parameter_count(), Errc::Validation, "parameter vector has the wrong size");
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l].reshaped() = p.segment(o, weights[l].size());
      o += weights[l].size();
      biases[l] = p.segment(o, biases[l].size());
      o += biases[l].size();
    }
  }
};

/// He-normal weights, zero biases, identity standardizer.
inline MlpModel init_mlp(std::size_t inputs, const MlpConfig& cfg) {
  require(inputs >= 1, Errc::Validation, "MLP needs at least one input");
  MlpModel m;
  m.sizes.push_back(inputs);
  for (std::size_t h : cfg.hidden) {
    require(h >= 1, Errc::Validation, "hidden layer sizes must be positive");
    m.sizes.push_back(h);
  }
  m.sizes.push_back(1);
  Rng rng(cfg.seed);
  for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(m.sizes[l]);
    const auto out = static_cast<Eigen::Index>(m.sizes[l + 1]);
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    Matrix w(out, in);
    for (Eigen::Index c = 0; c < in; ++c) {
      for (Eigen::Index r = 0; r < out; ++r) w(r, c) = sd * standard_normal(rng);
    }
    m.weights.push_back(std::move(w));
    m.biases.push_back(Vector::Zero(out));
  }
  m.standardizer.mean = Vector::Zero(static_cast<Eigen::Index>(inputs));
  m.standardizer.scale = Vector::Ones(static_cast<Eigen::Index>(inputs));
  return m;
}

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // same layout as MlpModel::flat()
};

/// Mean squared error over the rows of standardized inputs Z and its
/// gradient by backpropagation.
inline LossGrad mlp_loss_grad(const MlpModel& m, const Matrix& Z, const Vector& y) {
  const std::size_t L = m.weights.size();
  const double n = static_cast<double>(Z.rows());
  // Column-per-sample activations.
  std::vector<Matrix> acts(L + 1);
  acts[0] = Z.transpose();
  for (std::size_t l = 0; l < L; ++l) {
    Matrix h = (m.weights[l] * acts[l]).colwise() + m.biases[l];
    if (l + 1 < L) h = h.cwiseMax(0.0);
    acts[l + 1] = std::move(h);
  }
  const Vector resid = acts[L].row(0).transpose() - y;
  LossGrad out;
  out.loss = resid.squaredNorm() / n;

  std::vector<Matrix> gw(L);
  std::vector<Vector> gb(L);
  Matrix delta = (2.0 / n) * resid.transpose();  // 1 x n
  for (std::size_t l = L; l-- > 0;) {
    gw[l] = delta * acts[l].transpose();
    gb[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (m.weights[l].transpose() * delta).cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  out.grad.resize(static_cast<Eigen::Index>(m.parameter_count()));
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < L; ++l) {
    out.grad.segment(o, gw[l].size()) = gw[l].reshaped();
    o += gw[l].size();
    out.grad.segment(o, gb[l].size()) = gb[l];
    o += gb[l].size();
  }
  return out;
}

struct Validation {
  const Matrix& X;
  const Vector& y;
};

/// Mini-batch Adam. With a validation set the returned model is the epoch
/// checkpoint (epoch 0 = initialization) with the lowest validation MSE.
inline MlpModel train_mlp(const Matrix& X, const Vector& y, const MlpConfig& cfg = {},
                          std::optional<Validation> val = std::nullopt) {
  require(X.rows() >= 2, Errc::InsufficientData, "MLP training needs at least 2 rows");
  require(X.rows() == y.size(), Errc::LengthMismatch, "feature rows and labels differ in count");
  require(cfg.batch_size >= 1 && cfg.learning_rate > 0.0, Errc::Validation, "invalid MLP optimizer settings");
  require_finite(X, "MLP features");
  require_finite(y, "MLP labels");

  MlpModel m = init_mlp(static_cast<std::size_t>(X.cols()), cfg);
  m.standardizer = Standardizer::fit(X);
  const Matrix Z = m.standardizer.transform(X);
  Matrix Zv;
  if (val) {
    require(val->X.cols() == X.cols() && val->X.rows() == val->y.size(), Errc::Validation,
            "validation set shape does not match training data");
    Zv = m.standardizer.transform(val->X);
  }
  auto val_mse = [&](const MlpModel& model) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < Zv.rows(); ++i) {
      const double d = model.forward(Zv.row(i).transpose()) - val->y(i);
      s += d * d;
    }
    return s / static_cast<double>(Zv.rows());
  };

  Vector params = m.flat();
  Vector mom = Vector::Zero(params.size()), vel = Vector::Zero(params.size());
  MlpModel best = m;
  double best_val = val ? val_mse(m) : 0.0;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(Z.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(std::span(order), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Matrix zb(static_cast<Eigen::Index>(end - start), Z.cols());
      Vector yb(static_cast<Eigen::Index>(end - start));
      for (std::size_t r = start; r < end; ++r) {
        zb.row(static_cast<Eigen::Index>(r - start)) = Z.row(order[r]);
        yb(static_cast<Eigen::Index>(r - start)) = y(order[r]);
      }
      const LossGrad lg = mlp_loss_grad(m, zb, yb);
      require(std::isfinite(lg.loss) && lg.grad.allFinite(), Errc::Divergence,
              "training loss became non-finite at epoch " + std::to_string(epoch));
      ++step;
      mom = cfg.beta1 * mom + (1.0 - cfg.beta1) * lg.grad;
      vel = cfg.beta2 * vel + (1.0 - cfg.beta2) * lg.grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      params.array() -= cfg.learning_rate * (mom.array() / c1) / ((vel.array() / c2).sqrt() + cfg.adam_eps);
      m.set_flat(params);
    }
    if (val) {
      const double v = val_mse(m);
      require(std::isfinite(v), Errc::Divergence, "validation loss became non-finite");
      if (v < best_val) {
        best_val = v;
        best = m;
        best.best_epoch = epoch;
      }
    }
  }
  if (!val) {
    m.best_epoch = cfg.epochs;
    return m;
  }
  return best;
}

inline nlohmann::json to_json(const MlpModel& m) {
  auto layers = nlohmann::json::array();
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    layers.push_back({{"weights", mat_to_json(m.weights[l])}, {"bias", vec_to_json(m.biases[l])}});
  }
  return {{"type", "mlp"}, {"sizes", m.sizes}, {"layers", layers}, {"standardizer", to_json(m.standardizer)},
          {"best_epoch", m.best_epoch}};
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  try {
    MlpModel m;
    m.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    const auto& layers = j.at("layers");
    require(m.sizes.size() >= 2 && layers.size() + 1 == m.sizes.size(), Errc::Parse, "MLP layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Matrix w = mat_from_json(layers[l].at("weights"), static_cast<Eigen::Index>(m.sizes[l]));
      require(static_cast<std::size_t>(w.rows()) == m.sizes[l + 1], Errc::Parse, "MLP weight shape mismatch");
      m.weights.push_back(std::move(w));
      m.biases.push_back(vec_from_json(layers[l].at("bias")));
    }
    m.standardizer = standardizer_from_json(j.at("standardizer"));
    m.best_epoch = j.value("best_epoch", std::size_t{0});
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::Parse, std::string("malformed MLP checkpoint: ") + e.what());
  }
}

}  // namespace memlab
