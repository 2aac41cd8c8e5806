#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "enmcs/encoder.hpp"

namespace enmcs {

enum class PearsonMode { kFlattened, kColumnwise };

struct LossConfig {
  double alpha = 0.8;   // inter-layer weight
  double beta = 0.4;    // intra-layer weight
  double margin = 0.5;  // triplet margin
  int neg_samples_per_node = 5;
  bool all_pairs = false;     // exact n^2 proximity average instead of sampling
  bool literal_sign = false;  // negated hinge, for comparison only
  PearsonMode pearson = PearsonMode::kFlattened;
  int epochs = 70;
  int patience_window = 10;
  double min_improvement = 1e-4;
  double lr_init = 1e-4;
  double lr_peak = 0.01;
  double warmup_fraction = 0.1;
  nn::AdamConfig adam{};

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0 || beta < 0.0 || beta > 1.0)
      throw ConfigError("loss: alpha and beta must lie in [0, 1]");
    if (!(margin > 0.0)) throw ConfigError("loss: margin must be > 0");
    if (!all_pairs && neg_samples_per_node < 1) throw ConfigError("loss: need at least one negative per node");
    if (epochs < 1) throw ConfigError("loss: epochs must be >= 1");
    if (patience_window < 1) throw ConfigError("loss: patience_window must be >= 1");
    if (!(lr_init > 0.0) || !(lr_peak > 0.0)) throw ConfigError("loss: learning rates must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Losses

/// (1/n) sum_r sum_v ||C_v^(r) - U_v||^2
inline nn::Var inter_layer_loss(nn::Tape& t, std::span<const nn::Var> shared, nn::Var U) {
  if (shared.empty()) throw DimensionError("inter_layer_loss: no layers");
  const double n = static_cast<double>(t.value(U).rows());
  nn::Var acc{};
  for (nn::Var C : shared) {
    nn::Var d = nn::sub(t, C, U);
    nn::Var term = nn::sum(t, nn::mul(t, d, d));
    acc = acc.id < 0 ? term : nn::add(t, acc, term);
  }
  return nn::scale(t, acc, 1.0 / n);
}

/// |Pearson correlation| between two equally shaped matrices, either over the
/// flattened entries or averaged over columns. A variance that is zero up to
/// rounding (relative to the mean square) counts as zero and gives 0.
inline nn::Var abs_pearson(nn::Tape& t, nn::Var x, nn::Var y, PearsonMode mode) {
  constexpr double kRelTiny = 1e-20;
  // 1 where both variances are meaningful, 0 otherwise
  auto mask = [&](const Matrix& vx, const Matrix& sx, const Matrix& vy, const Matrix& sy) {
    Matrix m(vx.rows(), vx.cols());
    for (Eigen::Index k = 0; k < m.size(); ++k)
      m.data()[k] = vx.data()[k] > kRelTiny * sx.data()[k] && vy.data()[k] > kRelTiny * sy.data()[k] ? 1.0 : 0.0;
    return m;
  };
  if (mode == PearsonMode::kFlattened) {
    nn::Var xc = nn::add_scalar(t, x, nn::scale(t, nn::mean(t, x), -1.0));
    nn::Var yc = nn::add_scalar(t, y, nn::scale(t, nn::mean(t, y), -1.0));
    nn::Var cov = nn::mean(t, nn::mul(t, xc, yc));
    nn::Var vx = nn::mean(t, nn::mul(t, xc, xc));
    nn::Var vy = nn::mean(t, nn::mul(t, yc, yc));
    const Matrix keep = mask(t.value(vx), Matrix::Constant(1, 1, t.value(x).array().square().mean()), t.value(vy),
                             Matrix::Constant(1, 1, t.value(y).array().square().mean()));
    nn::Var denom = nn::mul(t, nn::sqrt(t, nn::mul(t, vx, vy)), t.constant(keep));
    return nn::safe_div(t, nn::abs(t, cov), denom);
  }
  nn::Var xc = nn::add_bias(t, x, nn::scale(t, nn::col_mean(t, x), -1.0));
  nn::Var yc = nn::add_bias(t, y, nn::scale(t, nn::col_mean(t, y), -1.0));
  nn::Var cov = nn::col_mean(t, nn::mul(t, xc, yc));
  nn::Var vx = nn::col_mean(t, nn::mul(t, xc, xc));
  nn::Var vy = nn::col_mean(t, nn::mul(t, yc, yc));
  const Matrix keep = mask(t.value(vx), t.value(x).array().square().colwise().mean().matrix(), t.value(vy),
                           t.value(y).array().square().colwise().mean().matrix());
  nn::Var denom = nn::mul(t, nn::sqrt(t, nn::mul(t, vx, vy)), t.constant(keep));
  return nn::mean(t, nn::safe_div(t, nn::abs(t, cov), denom));
}

/// sum_r |corr(phi_r(C_r), psi_r(P_r))|
inline nn::Var intra_layer_loss(nn::Tape& t, EncoderParams& p, std::span<const nn::Var> shared,
                                std::span<const nn::Var> specific, PearsonMode mode = PearsonMode::kFlattened) {
  if (shared.size() != specific.size() || shared.empty())
    throw DimensionError("intra_layer_loss: layer counts differ");
  nn::Var acc{};
  for (std::size_t r = 0; r < shared.size(); ++r) {
    const auto& cv = t.value(shared[r]);
    if (cv.size() < 2) throw DimensionError("intra_layer_loss: need n * f_h >= 2");
    nn::Var term = abs_pearson(t, nn::ffn_forward(t, p.phi(r), shared[r]), nn::ffn_forward(t, p.psi(r), specific[r]), mode);
    acc = acc.id < 0 ? term : nn::add(t, acc, term);
  }
  return acc;
}

/// Anchor/other index pairs for the proximity loss of one layer.
struct NegativePairs {
  std::vector<NodeId> anchor;
  std::vector<NodeId> other;
};

/// `per_node` uniform draws of u != v for every v.
inline NegativePairs sample_negatives(NodeId n, int per_node, std::mt19937_64& rng) {
  if (n < 2) throw ConfigError("sample_negatives: need at least two nodes");
  if (per_node < 1) throw ConfigError("sample_negatives: per_node must be >= 1");
  NegativePairs out;
  std::uniform_int_distribution<NodeId> pick(0, n - 2);
  for (NodeId v = 0; v < n; ++v)
    for (int s = 0; s < per_node; ++s) {
      NodeId u = pick(rng);
      if (u >= v) ++u;
      out.anchor.push_back(v);
      out.other.push_back(u);
    }
  return out;
}

/// Every ordered pair (v, u), including u = v.
inline NegativePairs all_pairs(NodeId n) {
  NegativePairs out;
  for (NodeId v = 0; v < n; ++v)
    for (NodeId u = 0; u < n; ++u) {
      out.anchor.push_back(v);
      out.other.push_back(u);
    }
  return out;
}

/// Mean over pairs of max(sig(C_v . Z_u) - sig(C_v . Z_v) + margin, 0) for one layer.
inline nn::Var proximity_layer_loss(nn::Tape& t, nn::Var C, nn::Var comZ, const NegativePairs& pairs,
                                    double margin, bool literal_sign = false) {
  if (pairs.anchor.empty() || pairs.anchor.size() != pairs.other.size())
    throw ConfigError("proximity_loss: empty negative set");
  nn::Var positive = nn::row_sum(t, nn::mul(t, C, comZ));  // n x 1
  nn::Var pos = nn::gather_rows(t, positive, pairs.anchor);
  nn::Var neg = nn::row_sum(t, nn::mul(t, nn::gather_rows(t, C, pairs.anchor), nn::gather_rows(t, comZ, pairs.other)));
  nn::Var gap = nn::sub(t, nn::sigmoid(t, neg), nn::sigmoid(t, pos));
  nn::Var hinge = nn::relu(t, nn::add_constant(t, gap, margin));
  nn::Var loss = nn::mean(t, hinge);
  return literal_sign ? nn::scale(t, loss, -1.0) : loss;
}

inline nn::Var proximity_loss(nn::Tape& t, std::span<const nn::Var> shared, std::span<const nn::Var> context,
                              std::span<const NegativePairs> pairs, double margin, bool literal_sign = false) {
  if (shared.size() != context.size() || shared.size() != pairs.size() || shared.empty())
    throw DimensionError("proximity_loss: layer counts differ");
  nn::Var acc{};
  for (std::size_t r = 0; r < shared.size(); ++r) {
    nn::Var term = proximity_layer_loss(t, shared[r], context[r], pairs[r], margin, literal_sign);
    acc = acc.id < 0 ? term : nn::add(t, acc, term);
  }
  return acc;
}

struct LossTerms {
  nn::Var proximity, inter, intra, total;
};

/// L_p + alpha L_inter + beta L_intra on one forward pass.
inline nn::Var total_loss(nn::Tape& t, nn::Var proximity, nn::Var inter, nn::Var intra, double alpha, double beta) {
  return nn::add(t, proximity, nn::add(t, nn::scale(t, inter, alpha), nn::scale(t, intra, beta)));
}

inline LossTerms compute_losses(nn::Tape& t, EncoderParams& p, const EncoderForward& fwd,
                                std::span<const NegativePairs> pairs, const LossConfig& cfg) {
  LossTerms out;
  out.proximity = proximity_loss(t, fwd.C, fwd.comZ, pairs, cfg.margin, cfg.literal_sign);
  out.inter = inter_layer_loss(t, fwd.C, fwd.U);
  out.intra = intra_layer_loss(t, p, fwd.C, fwd.P, cfg.pearson);
  out.total = total_loss(t, out.proximity, out.inter, out.intra, cfg.alpha, cfg.beta);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

/// Linear warmup from lr_init to lr_peak over the first warmup_fraction of
/// epochs, then linear decay back to lr_init at the final epoch.
inline double learning_rate(int epoch, const LossConfig& cfg) {
  const int warm = std::max(1, static_cast<int>(std::lround(cfg.warmup_fraction * cfg.epochs)));
  const double span = cfg.lr_peak - cfg.lr_init;
  if (epoch <= warm) return cfg.lr_init + span * static_cast<double>(epoch) / warm;
  const int tail = cfg.epochs - 1 - warm;
  if (tail <= 0) return cfg.lr_peak;
  return cfg.lr_peak - span * static_cast<double>(epoch - warm) / tail;
}

struct EpochRecord {
  int epoch = 0;
  double proximity = 0, inter = 0, intra = 0, total = 0, lr = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int stopped_epoch = 0;  // number of epochs actually run
  double wall_seconds = 0.0;

  void write_csv(std::ostream& out) const {
    out << "epoch,l_p,l_inter,l_intra,total,lr\n";
    out.precision(17);
    for (const auto& e : epochs)
      out << e.epoch << ',' << e.proximity << ',' << e.inter << ',' << e.intra << ',' << e.total << ',' << e.lr << '\n';
  }
  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_csv(out);
  }
};

struct TrainResult {
  EncoderParams params;
  TrainReport report;
};

/// Full-graph training. Negatives are resampled every epoch from a generator
/// seeded with `seed`; stops once the best total loss has not improved by
/// min_improvement for patience_window epochs.
inline TrainResult train(const std::vector<EncoderInput>& inputs, const EncoderConfig& enc_cfg,
                         const LossConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult out{make_encoder(enc_cfg, seed), {}};
  auto params = out.params.parameters();
  nn::AdamState adam;
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  const auto n = static_cast<NodeId>(inputs.front().diffused.rows());
  const NegativePairs exact = cfg.all_pairs ? all_pairs(n) : NegativePairs{};

  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<NegativePairs> pairs;
    for (std::size_t r = 0; r < inputs.size(); ++r)
      pairs.push_back(cfg.all_pairs ? exact : sample_negatives(n, cfg.neg_samples_per_node, rng));

    nn::Tape t;
    LossTerms loss;
    try {
      auto fwd = encoder_forward(t, out.params, inputs);
      loss = compute_losses(t, out.params, fwd, pairs, cfg);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const double total = t.scalar(loss.total);
    if (!std::isfinite(total)) throw NumericError("training diverged at epoch " + std::to_string(epoch));

    const double lr = learning_rate(epoch, cfg);
    out.report.epochs.push_back({epoch, t.scalar(loss.proximity), t.scalar(loss.inter), t.scalar(loss.intra), total, lr});

    for (auto* p : params) p->zero_grad();
    t.backward(loss.total);
    try {
      nn::adam_step(params, adam, lr, cfg.adam);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }

    if (total < best - cfg.min_improvement) {
      best = total;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= cfg.patience_window) {
      break;
    }
  }
  out.report.stopped_epoch = static_cast<int>(out.report.epochs.size());
  out.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace enmcs
