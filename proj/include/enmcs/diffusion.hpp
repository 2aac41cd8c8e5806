#pragma once

#include <cmath>
#include <vector>

#include "enmcs/graph.hpp"

namespace enmcs {

struct HeatKernelConfig {
  double t = 5.0;                  // diffusion time
  double theta_threshold = 1e-4;   // truncate once coefficients fall below this past the mode

  void validate() const {
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("heat kernel: t must be > 0");
    if (!(theta_threshold > 0.0 && theta_threshold < 1.0))
      throw ConfigError("heat kernel: theta_threshold must lie in (0, 1)");
  }
};

/// theta_k = e^-t t^k / k! for k = 1..K. The series is walked with the
/// recurrence theta_{k+1} = theta_k * t / (k + 1) and cut at the first k past
/// the mode whose coefficient drops below the threshold. K >= 1 always.
inline std::vector<double> heat_coefficients(const HeatKernelConfig& cfg) {
  cfg.validate();
  constexpr int kMaxTerms = 10000;
  std::vector<double> theta;
  double value = std::exp(-cfg.t) * cfg.t;  // k = 1
  for (int k = 1; k <= kMaxTerms; ++k) {
    const bool past_mode = static_cast<double>(k) >= cfg.t;
    if (past_mode && value < cfg.theta_threshold && !theta.empty()) break;
    theta.push_back(value);
    value *= cfg.t / static_cast<double>(k + 1);
  }
  return theta;
}

/// Symmetric normalization D^-1/2 A D^-1/2 of an augmented adjacency.
struct NormalizedAdjacency {
  SparseMatrix op;
  Vector degree;  // row sums of the augmented adjacency
};

inline NormalizedAdjacency normalize_symmetric(const SparseMatrix& augmented) {
  const Eigen::Index n = augmented.rows();
  Vector degree = Vector::Zero(n);
  for (Eigen::Index i = 0; i < augmented.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(augmented, i); it; ++it) degree(it.row()) += it.value();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(degree(i) > 0.0))
      throw NumericError("node " + std::to_string(i) + " has zero degree; use a positive self-loop weight");

  Vector inv_sqrt = degree.array().rsqrt();
  SparseMatrix op = augmented;
  for (Eigen::Index i = 0; i < op.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(op, i); it; ++it)
      it.valueRef() *= inv_sqrt(it.row()) * inv_sqrt(it.col());
  return {std::move(op), std::move(degree)};
}

struct DiffusedFeatures {
  Matrix H;
  int K = 0;
};

/// H = D^-1 (sum_k theta_k O^k) X, accumulated with K sparse products. O^k is
/// never formed.
inline DiffusedFeatures diffuse_features(const SparseMatrix& op, const Matrix& features,
                                         const Vector& degree, const std::vector<double>& coeffs) {
  if (op.rows() != features.rows() || degree.size() != features.rows())
    throw DimensionError("diffuse_features: shape mismatch");
  if (!features.allFinite()) throw NumericError("diffuse_features: non-finite feature input");
  if (coeffs.empty()) throw ConfigError("diffuse_features: no coefficients");

  Matrix acc = Matrix::Zero(features.rows(), features.cols());
  Matrix power = features;
  for (double theta : coeffs) {
    Matrix next = op * power;
    power.swap(next);
    acc.noalias() += theta * power;
  }
  acc.array().colwise() /= degree.array();
  return {std::move(acc), static_cast<int>(coeffs.size())};
}

/// [X, O X, O^2 X, ..., O^k_max X]
struct HopFeatureStack {
  std::vector<Matrix> stack;
};

inline HopFeatureStack hop_features(const SparseMatrix& op, const Matrix& features, int k_max) {
  if (k_max < 1) throw ConfigError("hop_features: k_max must be >= 1");
  HopFeatureStack hops;
  hops.stack.reserve(static_cast<std::size_t>(k_max) + 1);
  hops.stack.push_back(features);
  for (int i = 1; i <= k_max; ++i) {
    Matrix next = op * hops.stack.back();
    hops.stack.push_back(std::move(next));
  }
  return hops;
}

/// Everything parameter-free the encoder needs from one layer.
struct LayerDiffusion {
  DiffusedFeatures diffused;
  HopFeatureStack hops;
};

inline LayerDiffusion diffuse_layer(const LayerGraph& layer, const Matrix& features,
                                    const HeatKernelConfig& cfg, int k_max,
                                    double self_loop_weight = 1.0) {
  const auto norm = normalize_symmetric(augment_adjacency(layer.adjacency, self_loop_weight));
  return {diffuse_features(norm.op, features, norm.degree, heat_coefficients(cfg)),
          hop_features(norm.op, features, k_max)};
}

inline std::vector<LayerDiffusion> diffuse_graph(const MultilayerGraph& g, const HeatKernelConfig& cfg,
                                                 int k_max, double self_loop_weight = 1.0) {
  std::vector<LayerDiffusion> out;
  out.reserve(g.num_layers());
  for (std::size_t r = 0; r < g.num_layers(); ++r)
    out.push_back(diffuse_layer(g.layer(r), g.features(r), cfg, k_max, self_loop_weight));
  return out;
}

}  // namespace enmcs
