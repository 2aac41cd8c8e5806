#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "enmcs/graph.hpp"

namespace enmcs {

/// n x |J| x r_max binary decisions; D(i, j, r) = 1 iff layer r put node i in
/// category j. Exactly one category is set per (i, r).
class DecisionTensor {
 public:
  DecisionTensor(NodeId n, int categories, std::size_t layers)
      : n_(n), categories_(categories), layers_(layers), label_(static_cast<std::size_t>(n) * layers, 0) {
    if (n < 1 || categories < 2 || layers < 1) throw ContractError("DecisionTensor: empty dimension");
  }

  /// Binary tensor from per-layer community indicators (category 1 = in).
  static DecisionTensor from_communities(NodeId n, const std::vector<NodeSet>& per_layer) {
    DecisionTensor d(n, 2, per_layer.size());
    for (std::size_t r = 0; r < per_layer.size(); ++r)
      for (NodeId v : per_layer[r]) d.set(v, r, 1);
    return d;
  }

  NodeId num_nodes() const { return n_; }
  int num_categories() const { return categories_; }
  std::size_t num_layers() const { return layers_; }

  int label(NodeId i, std::size_t r) const { return label_[index(i, r)]; }
  void set(NodeId i, std::size_t r, int category) {
    if (category < 0 || category >= categories_) throw RangeError("DecisionTensor: category out of range");
    label_[index(i, r)] = static_cast<std::uint8_t>(category);
  }
  int operator()(NodeId i, int j, std::size_t r) const { return label(i, r) == j ? 1 : 0; }

  /// Same decisions with the layer axis reordered: out layer k = this layer order[k].
  DecisionTensor permute_layers(const std::vector<std::size_t>& order) const {
    DecisionTensor out(n_, categories_, order.size());
    for (NodeId i = 0; i < n_; ++i)
      for (std::size_t k = 0; k < order.size(); ++k) out.set(i, k, label(i, order[k]));
    return out;
  }

 private:
  std::size_t index(NodeId i, std::size_t r) const {
    if (i < 0 || i >= n_ || r >= layers_) throw RangeError("DecisionTensor: index out of range");
    return static_cast<std::size_t>(i) * layers_ + r;
  }

  NodeId n_;
  int categories_;
  std::size_t layers_;
  std::vector<std::uint8_t> label_;
};

struct EMConfig {
  double tolerance = 1e-5;
  int max_iterations = 200;
  double clamp_floor = 1e-10;

  void validate() const {
    if (!(tolerance > 0.0)) throw ConfigError("em: tolerance must be > 0");
    if (max_iterations < 1) throw ConfigError("em: max_iterations must be >= 1");
    if (!(clamp_floor > 0.0 && clamp_floor < 0.5)) throw ConfigError("em: clamp_floor must lie in (0, 0.5)");
  }
};

struct ConfusionModel {
  std::vector<Matrix> pi;  // per layer, |J| x |J|, row j = true category
  Vector eta;              // category priors
};

struct ConsensusState {
  Matrix T;          // n x |J| posterior memberships, last E-step
  Matrix T_softmax;  // row-wise softmax of T, as reported
  std::vector<Matrix> pi;
  Vector eta;
  int iterations = 0;
  bool converged = false;
  std::vector<double> log_likelihood;  // marginal log-likelihood after each M-step
};

/// T0_ij = sum_r D(i,j,r) / sum_r sum_l D(i,l,r): each node's vote share.
inline Matrix init_membership(const DecisionTensor& d) {
  const int J = d.num_categories();
  Matrix T = Matrix::Zero(d.num_nodes(), J);
  for (NodeId i = 0; i < d.num_nodes(); ++i)
    for (std::size_t r = 0; r < d.num_layers(); ++r) T(i, d.label(i, r)) += 1.0;
  T /= static_cast<double>(d.num_layers());
  return T;
}

namespace detail {
inline void clamp_rows(Matrix& m, double floor) {
  for (Eigen::Index j = 0; j < m.rows(); ++j) {
    m.row(j) = m.row(j).cwiseMax(floor).cwiseMin(1.0);
    m.row(j) /= m.row(j).sum();
  }
}
}  // namespace detail

/// Confusion matrices and priors maximizing the expected complete-data
/// likelihood under memberships T. Empty rows become uniform; everything is
/// clamped to [floor, 1] and renormalized.
inline ConfusionModel m_step(const Matrix& T, const DecisionTensor& d, double clamp_floor = 1e-10) {
  const int J = d.num_categories();
  if (T.rows() != d.num_nodes() || T.cols() != J) throw DimensionError("m_step: T shape mismatch");
  ConfusionModel model;
  model.pi.assign(d.num_layers(), Matrix::Zero(J, J));
  for (NodeId i = 0; i < d.num_nodes(); ++i)
    for (std::size_t r = 0; r < d.num_layers(); ++r) model.pi[r].col(d.label(i, r)) += T.row(i).transpose();
  for (auto& p : model.pi) {
    for (Eigen::Index j = 0; j < J; ++j) {
      const double total = p.row(j).sum();
      if (total > 0.0)
        p.row(j) /= total;
      else
        p.row(j).setConstant(1.0 / J);
    }
    detail::clamp_rows(p, clamp_floor);
  }
  Matrix eta = T.colwise().sum() / static_cast<double>(d.num_nodes());
  detail::clamp_rows(eta, clamp_floor);
  model.eta = eta.row(0).transpose();
  return model;
}

/// Per-node category log-joint: log eta_j + sum_r log pi^(r)_{j, D_i^(r)}.
inline Matrix log_joint(const DecisionTensor& d, const ConfusionModel& model) {
  const int J = d.num_categories();
  if (model.pi.size() != d.num_layers() || model.eta.size() != J) throw DimensionError("e_step: model shape mismatch");
  std::vector<Matrix> log_pi;
  for (const auto& p : model.pi) log_pi.push_back(p.array().log().matrix());
  const Vector log_eta = model.eta.array().log();
  Matrix out(d.num_nodes(), J);
  for (NodeId i = 0; i < d.num_nodes(); ++i)
    for (int j = 0; j < J; ++j) {
      double acc = log_eta(j);
      for (std::size_t r = 0; r < d.num_layers(); ++r) acc += log_pi[r](j, d.label(i, r));
      out(i, j) = acc;
    }
  return out;
}

/// Posterior memberships T_ij proportional to eta_j prod_r prod_l pi_jl^D,
/// evaluated in log space with per-row max subtraction.
inline Matrix e_step(const DecisionTensor& d, const ConfusionModel& model) {
  Matrix T = log_joint(d, model);
  for (Eigen::Index i = 0; i < T.rows(); ++i) {
    const double top = T.row(i).maxCoeff();
    if (!std::isfinite(top)) throw NumericError("e_step: node " + std::to_string(i) + " has no finite likelihood");
    T.row(i) = (T.row(i).array() - top).exp();
    T.row(i) /= T.row(i).sum();
  }
  return T;
}

/// sum_i log sum_j eta_j prod_r pi^(r)_{j, D_i^(r)}: the quantity EM never decreases.
inline double marginal_log_likelihood(const DecisionTensor& d, const ConfusionModel& model) {
  const Matrix lj = log_joint(d, model);
  double total = 0.0;
  for (Eigen::Index i = 0; i < lj.rows(); ++i) {
    const double top = lj.row(i).maxCoeff();
    total += top + std::log((lj.row(i).array() - top).exp().sum());
  }
  return total;
}

/// sum_i sum_j T_ij [log eta_j + sum_r sum_l D log pi]: expected complete-data log-likelihood.
inline double expected_log_likelihood(const DecisionTensor& d, const ConfusionModel& model, const Matrix& T) {
  return T.cwiseProduct(log_joint(d, model)).sum();
}

inline Matrix row_softmax(const Matrix& x) {
  Matrix out = (x.colwise() - x.rowwise().maxCoeff()).array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

/// Dawid-Skene EM: vote-share initialization, then M-step followed by E-step
/// until max |T_new - T_old| < tolerance or the iteration cap.
inline ConsensusState run_em(const DecisionTensor& d, const EMConfig& cfg = {}) {
  cfg.validate();
  ConsensusState s;
  s.T = init_membership(d);
  for (int m = 1; m <= cfg.max_iterations; ++m) {
    ConfusionModel model = m_step(s.T, d, cfg.clamp_floor);
    s.log_likelihood.push_back(marginal_log_likelihood(d, model));
    Matrix next = e_step(d, model);
    const double delta = (next - s.T).cwiseAbs().maxCoeff();
    s.T = std::move(next);
    s.pi = std::move(model.pi);
    s.eta = std::move(model.eta);
    s.iterations = m;
    if (delta < cfg.tolerance) {
      s.converged = true;
      break;
    }
  }
  s.T_softmax = row_softmax(s.T);
  return s;
}

/// In iff strictly more than half the layers vote in; ties go out.
inline NodeSet majority_vote(const DecisionTensor& d) {
  NodeSet out;
  for (NodeId i = 0; i < d.num_nodes(); ++i) {
    std::size_t votes = 0;
    for (std::size_t r = 0; r < d.num_layers(); ++r) votes += d.label(i, r) == 1 ? 1 : 0;
    if (2 * votes > d.num_layers()) out.push_back(i);
  }
  return out;
}

/// Nodes whose most probable category is 1 (ties resolve to 0), plus the query.
inline NodeSet extract_community(const Matrix& T, const NodeSet& query) {
  std::vector<NodeId> out(query.begin(), query.end());
  for (Eigen::Index i = 0; i < T.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < T.cols(); ++j)
      if (T(i, j) > T(i, best)) best = j;
    if (best == 1) out.push_back(static_cast<NodeId>(i));
  }
  return make_node_set(std::move(out));
}

inline NodeSet extract_community(const ConsensusState& s, const NodeSet& query) {
  return extract_community(s.T_softmax, query);
}

}  // namespace enmcs
