#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "enmcs/diffusion.hpp"
#include "enmcs/nn.hpp"

namespace enmcs {

struct EncoderConfig {
  Eigen::Index feature_dim = 0;  // f
  Eigen::Index hidden_dim = 512;  // f_h
  std::size_t num_layers = 1;     // r_max
  int hops = 3;                   // k_max
  int ffn_depth = 3;              // linear maps per FFN
  bool share_layer_weights = false;

  void validate() const {
    if (feature_dim < 1 || hidden_dim < 1) throw ConfigError("encoder: dimensions must be >= 1");
    if (num_layers < 1) throw ConfigError("encoder: need at least one layer");
    if (hops < 1) throw ConfigError("encoder: hops (k_max) must be >= 1");
    if (ffn_depth < 1) throw ConfigError("encoder: ffn_depth must be >= 1");
  }
};

/// Every trainable matrix of the encoder. Per-layer networks are indexed by
/// layer unless weights are shared, in which case each vector holds one entry.
struct EncoderParams {
  EncoderConfig config;
  std::vector<nn::FFN> shared_ffn;   // H -> C
  std::vector<nn::FFN> private_ffn;  // H -> P
  nn::FFN combiner;                  // concat(C) -> U
  std::vector<nn::FFN> hop_ffn;      // hop_ffn[i-1]: (i+1) f -> f_h
  nn::Parameter attention;           // 2 f_h x 1
  std::vector<nn::FFN> proj_phi;     // single linear, f_h -> f_h
  std::vector<nn::FFN> proj_psi;

  nn::FFN& shared(std::size_t r) { return shared_ffn[config.share_layer_weights ? 0 : r]; }
  nn::FFN& specific(std::size_t r) { return private_ffn[config.share_layer_weights ? 0 : r]; }
  nn::FFN& phi(std::size_t r) { return proj_phi[config.share_layer_weights ? 0 : r]; }
  nn::FFN& psi(std::size_t r) { return proj_psi[config.share_layer_weights ? 0 : r]; }

  /// Stable order used by the optimizer and checkpoints.
  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> out;
    auto append = [&out](nn::FFN& f) {
      for (auto* p : f.parameters()) out.push_back(p);
    };
    for (auto& f : shared_ffn) append(f);
    for (auto& f : private_ffn) append(f);
    append(combiner);
    for (auto& f : hop_ffn) append(f);
    out.push_back(&attention);
    for (auto& f : proj_phi) append(f);
    for (auto& f : proj_psi) append(f);
    return out;
  }

  std::vector<const nn::Parameter*> parameters() const {
    auto ptrs = const_cast<EncoderParams*>(this)->parameters();
    return {ptrs.begin(), ptrs.end()};
  }
};

inline EncoderParams make_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto f = cfg.feature_dim;
  const auto fh = cfg.hidden_dim;
  auto dims = [&](Eigen::Index in) {
    std::vector<Eigen::Index> d{in};
    for (int i = 0; i < cfg.ffn_depth; ++i) d.push_back(fh);
    return d;
  };
  std::uint64_t stream = seed * 7919ULL + 17ULL;
  auto next = [&stream] { return ++stream; };

  EncoderParams p;
  p.config = cfg;
  const std::size_t copies = cfg.share_layer_weights ? 1 : cfg.num_layers;
  for (std::size_t r = 0; r < copies; ++r) {
    const auto tag = std::to_string(r);
    p.shared_ffn.push_back(nn::make_ffn("shared" + tag, dims(f), next()));
    p.private_ffn.push_back(nn::make_ffn("private" + tag, dims(f), next()));
  }
  p.combiner = nn::make_ffn("combiner", dims(static_cast<Eigen::Index>(cfg.num_layers) * fh), next());
  for (int i = 1; i <= cfg.hops; ++i)
    p.hop_ffn.push_back(nn::make_ffn("hop" + std::to_string(i), dims((i + 1) * f), next()));
  p.attention = {"attention", nn::glorot_init(2 * fh, 1, next()), {}};
  for (std::size_t r = 0; r < copies; ++r) {
    const auto tag = std::to_string(r);
    p.proj_phi.push_back(nn::make_ffn("phi" + tag, {fh, fh}, next()));
    p.proj_psi.push_back(nn::make_ffn("psi" + tag, {fh, fh}, next()));
  }
  return p;
}

/// Parameter-free encoder inputs for one layer: diffused features H and the
/// hop concatenations concat(X, OX, ..., O^i X) for i = 1..k_max.
struct EncoderInput {
  Matrix diffused;
  std::vector<Matrix> hop_concat;
};

inline EncoderInput make_encoder_input(const LayerDiffusion& d) {
  EncoderInput in;
  in.diffused = d.diffused.H;
  const auto& stack = d.hops.stack;
  const auto n = stack.front().rows();
  const auto f = stack.front().cols();
  for (std::size_t i = 1; i < stack.size(); ++i) {
    Matrix cat(n, static_cast<Eigen::Index>(i + 1) * f);
    for (std::size_t k = 0; k <= i; ++k) cat.middleCols(static_cast<Eigen::Index>(k) * f, f) = stack[k];
    in.hop_concat.push_back(std::move(cat));
  }
  return in;
}

inline std::vector<EncoderInput> make_encoder_inputs(const std::vector<LayerDiffusion>& ds) {
  std::vector<EncoderInput> out;
  out.reserve(ds.size());
  for (const auto& d : ds) out.push_back(make_encoder_input(d));
  return out;
}

/// C = shared(H), P = private(H).
struct LayerEncoding {
  nn::Var C;
  nn::Var P;
};

inline LayerEncoding encode_layer(nn::Tape& t, EncoderParams& p, std::size_t r, nn::Var H) {
  return {nn::ffn_forward(t, p.shared(r), H), nn::ffn_forward(t, p.specific(r), H)};
}

/// U = combiner(concat(C_1, ..., C_rmax)), layers in ascending order.
inline nn::Var combine_shared(nn::Tape& t, EncoderParams& p, std::span<const nn::Var> shared) {
  const auto expected = static_cast<Eigen::Index>(shared.size()) * p.config.hidden_dim;
  if (p.combiner.input_dim() != expected)
    throw DimensionError("combine_shared: combiner expects " + std::to_string(p.combiner.input_dim()) +
                         " inputs, got " + std::to_string(shared.size()) + " layers");
  return nn::ffn_forward(t, p.combiner, nn::concat_cols(t, shared));
}

/// n x 1 column k of x.
inline nn::Var take_col(nn::Tape& t, nn::Var x, Eigen::Index k) {
  Matrix out = t.value(x).col(k);
  return t.push(std::move(out), t.requires_grad(x), [x, k](nn::Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
    d.col(k) = g.col(0);
    t.accumulate(x, d);
  });
}

struct CommunityContext {
  nn::Var comZ;
  nn::Var attention;  // n x k_max, rows sum to 1
};

/// comZ_v = sum_k alpha_vk kZ_v, alpha = softmax_k(concat(C_v, kZ_v) W_a),
/// with kZ = hop_ffn[k](concat(X, ..., O^k X)).
inline CommunityContext community_context(nn::Tape& t, EncoderParams& p, nn::Var C,
                                          const std::vector<Matrix>& hop_concat) {
  const int k_max = p.config.hops;
  if (k_max < 1) throw ConfigError("community_context: k_max must be >= 1");
  if (static_cast<int>(hop_concat.size()) < k_max)
    throw DimensionError("community_context: hop stack shorter than k_max + 1");
  nn::Var Wa = t.parameter(p.attention);
  std::vector<nn::Var> zs, logits;
  for (int k = 1; k <= k_max; ++k) {
    nn::Var z = nn::ffn_forward(t, p.hop_ffn[static_cast<std::size_t>(k - 1)],
                                t.constant(hop_concat[static_cast<std::size_t>(k - 1)]));
    std::array<nn::Var, 2> pair{C, z};
    logits.push_back(nn::matmul(t, nn::concat_cols(t, pair), Wa));
    zs.push_back(z);
  }
  nn::Var alpha = nn::row_softmax(t, nn::concat_cols(t, logits));
  nn::Var com = nn::mul_rows(t, zs[0], take_col(t, alpha, 0));
  for (int k = 1; k < k_max; ++k) com = nn::add(t, com, nn::mul_rows(t, zs[static_cast<std::size_t>(k)], take_col(t, alpha, k)));
  return {com, alpha};
}

/// Tape handles for one full forward pass.
struct EncoderForward {
  std::vector<nn::Var> C, P, comZ, attention;
  nn::Var U;
};

inline EncoderForward encoder_forward(nn::Tape& t, EncoderParams& p, const std::vector<EncoderInput>& inputs) {
  if (inputs.size() != p.config.num_layers)
    throw DimensionError("encoder_forward: expected " + std::to_string(p.config.num_layers) + " layers");
  EncoderForward out;
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    auto enc = encode_layer(t, p, r, t.constant(inputs[r].diffused));
    out.C.push_back(enc.C);
    out.P.push_back(enc.P);
  }
  out.U = combine_shared(t, p, out.C);
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    auto ctx = community_context(t, p, out.C[r], inputs[r].hop_concat);
    out.comZ.push_back(ctx.comZ);
    out.attention.push_back(ctx.attention);
  }
  return out;
}

/// Materialized representations (inference).
struct LayerRepresentations {
  std::vector<Matrix> C, P, comZ;
  Matrix U;
};

inline LayerRepresentations encode(const EncoderParams& params, const std::vector<EncoderInput>& inputs) {
  auto& p = const_cast<EncoderParams&>(params);  // the tape only reads values here
  nn::Tape t;
  auto fwd = encoder_forward(t, p, inputs);
  LayerRepresentations reps;
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    reps.C.push_back(t.value(fwd.C[r]));
    reps.P.push_back(t.value(fwd.P[r]));
    reps.comZ.push_back(t.value(fwd.comZ[r]));
  }
  reps.U = t.value(fwd.U);
  return reps;
}

}  // namespace enmcs
