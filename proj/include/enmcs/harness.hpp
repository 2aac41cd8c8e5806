#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "enmcs/emerge.hpp"
#include "enmcs/graph.hpp"

namespace enmcs {

enum class QueryMode { kTransductive, kInductive, kHybrid };

inline QueryMode parse_query_mode(const std::string& s) {
  if (s == "transductive") return QueryMode::kTransductive;
  if (s == "inductive") return QueryMode::kInductive;
  if (s == "hybrid") return QueryMode::kHybrid;
  throw ConfigError("unknown query mode '" + s + "'");
}

inline const char* to_string(QueryMode m) {
  switch (m) {
    case QueryMode::kTransductive: return "transductive";
    case QueryMode::kInductive: return "inductive";
    case QueryMode::kHybrid: return "hybrid";
  }
  return "?";
}

struct QueryCase {
  Query query;
  std::size_t community = 0;  // index into the community list
  NodeSet truth;
};

struct QuerySplit {
  std::vector<std::size_t> train;  // communities on the generation side
  std::vector<std::size_t> test;   // held out
};

/// Seeded ~1:1 split of community indices; odd counts put the extra one on the train side.
inline QuerySplit split_communities(std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t train = (count + 1) / 2;
  QuerySplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

/// Each query holds 1-3 distinct nodes of one community. Transductive draws
/// from every community, inductive only from the held-out half, hybrid from
/// every community after the same split.
inline std::vector<QueryCase> generate_queries(const std::vector<NodeSet>& communities, QueryMode mode,
                                               std::size_t count, std::uint64_t seed) {
  if (communities.empty()) throw ConfigError("generate_queries: no communities");
  for (const auto& c : communities)
    if (c.empty()) throw ConfigError("generate_queries: empty community");
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> pool;
  if (mode == QueryMode::kTransductive) {
    for (std::size_t i = 0; i < communities.size(); ++i) pool.push_back(i);
  } else {
    if (communities.size() < 2) throw ConfigError("generate_queries: split modes need at least two communities");
    auto split = split_communities(communities.size(), rng);
    if (mode == QueryMode::kInductive) {
      pool = split.test;
    } else {
      for (std::size_t i = 0; i < communities.size(); ++i) pool.push_back(i);
    }
  }

  std::vector<QueryCase> out;
  out.reserve(count);
  for (std::size_t q = 0; q < count; ++q) {
    const std::size_t c = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    const auto& members = communities[c];
    const std::size_t cap = std::min<std::size_t>(3, members.size());
    const std::size_t size = std::uniform_int_distribution<std::size_t>(1, cap)(rng);
    std::vector<NodeId> picked;
    std::sample(members.begin(), members.end(), std::back_inserter(picked), size, rng);
    out.push_back({Query{make_node_set(std::move(picked))}, c, members});
  }
  return out;
}

struct F1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline F1 f1_score(const NodeSet& predicted, const NodeSet& truth) {
  if (truth.empty()) throw ContractError("f1_score: empty ground truth");
  std::vector<NodeId> common;
  std::set_intersection(predicted.begin(), predicted.end(), truth.begin(), truth.end(), std::back_inserter(common));
  F1 out;
  const double hit = static_cast<double>(common.size());
  out.precision = predicted.empty() ? 0.0 : hit / static_cast<double>(predicted.size());
  out.recall = hit / static_cast<double>(truth.size());
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  NodeId n = 300;
  std::vector<NodeId> community_sizes{100, 100, 100};  // consecutive id blocks covering [0, n)
  std::size_t layers = 3;
  double p_in = 0.3;
  double p_out = 0.02;
  double layer_noise = 0.1;  // fraction of each layer's edges rewired
  int num_buckets = 8;
  int bump_dim = 16;          // 0 disables community feature bumps
  double bump_scale = 1.0;    // sd of each community's mean vector
  double bump_noise = 0.5;    // per-node sd around the community mean
  std::uint64_t seed = 1;
};

struct SyntheticGraph {
  MultilayerGraph graph;
  std::vector<NodeSet> communities;
};

/// Planted partition per layer, independent draws per layer, followed by
/// rewiring layer_noise of each layer's edges to uniformly random non-edges.
/// Features: degree-bucket one-hot per layer next to a per-community Gaussian
/// bump block shared by all layers.
inline SyntheticGraph synthetic_multilayer(const SyntheticSpec& spec) {
  if (spec.layers < 1) throw ConfigError("synthetic: need at least one layer");
  if (!(spec.p_in > spec.p_out) || spec.p_out < 0.0 || spec.p_in > 1.0)
    throw ConfigError("synthetic: need 0 <= p_out < p_in <= 1");
  if (spec.layer_noise < 0.0 || spec.layer_noise > 1.0) throw ConfigError("synthetic: layer_noise must lie in [0, 1]");
  NodeId covered = 0;
  for (NodeId s : spec.community_sizes) {
    if (s < 1) throw ConfigError("synthetic: empty community");
    covered += s;
  }
  if (covered != spec.n) throw ConfigError("synthetic: community sizes must sum to n");

  std::vector<NodeSet> communities;
  std::vector<int> label(static_cast<std::size_t>(spec.n));
  NodeId next = 0;
  for (std::size_t c = 0; c < spec.community_sizes.size(); ++c) {
    NodeSet members;
    for (NodeId k = 0; k < spec.community_sizes[c]; ++k, ++next) {
      members.push_back(next);
      label[static_cast<std::size_t>(next)] = static_cast<int>(c);
    }
    communities.push_back(std::move(members));
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<LayerGraph> layers;
  for (std::size_t r = 0; r < spec.layers; ++r) {
    std::set<Edge> edges;
    for (NodeId u = 0; u < spec.n; ++u)
      for (NodeId v = u + 1; v < spec.n; ++v) {
        const double p = label[static_cast<std::size_t>(u)] == label[static_cast<std::size_t>(v)] ? spec.p_in : spec.p_out;
        if (coin(rng) < p) edges.insert({u, v});
      }
    const auto rewire = static_cast<std::size_t>(spec.layer_noise * static_cast<double>(edges.size()));
    const std::size_t max_edges = static_cast<std::size_t>(spec.n) * static_cast<std::size_t>(spec.n - 1) / 2;
    if (rewire > 0 && edges.size() < max_edges) {
      std::vector<Edge> current(edges.begin(), edges.end());
      std::vector<Edge> removed;
      std::sample(current.begin(), current.end(), std::back_inserter(removed), rewire, rng);
      for (const auto& e : removed) edges.erase(e);
      std::uniform_int_distribution<NodeId> node(0, spec.n - 1);
      std::size_t added = 0;
      while (added < removed.size() && edges.size() < max_edges) {
        NodeId a = node(rng), b = node(rng);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        if (edges.insert({a, b}).second) ++added;
      }
    }
    layers.push_back(make_layer({edges.begin(), edges.end()}, spec.n));
  }

  auto onehot = fallback_features(layers, spec.n, spec.num_buckets);
  Matrix bumps(spec.n, spec.bump_dim);
  if (spec.bump_dim > 0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix means(static_cast<Eigen::Index>(communities.size()), spec.bump_dim);
    for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = spec.bump_scale * gauss(rng);
    for (NodeId v = 0; v < spec.n; ++v)
      for (int k = 0; k < spec.bump_dim; ++k)
        bumps(v, k) = means(label[static_cast<std::size_t>(v)], k) + spec.bump_noise * gauss(rng);
  }
  std::vector<Matrix> features;
  for (auto& x : onehot) {
    Matrix full(spec.n, x.cols() + spec.bump_dim);
    full.leftCols(x.cols()) = x;
    if (spec.bump_dim > 0) full.rightCols(spec.bump_dim) = bumps;
    features.push_back(std::move(full));
  }
  return {MultilayerGraph(spec.n, std::move(layers), std::move(features)), std::move(communities)};
}

/// Each layer reports the truth indicator flipped independently with its own rate.
inline DecisionTensor synthetic_decisions(const NodeSet& truth, NodeId n, const std::vector<double>& flip_rates,
                                          std::uint64_t seed) {
  if (flip_rates.empty()) throw ConfigError("synthetic_decisions: need at least one layer");
  for (double f : flip_rates)
    if (!(f >= 0.0 && f < 0.5)) throw ConfigError("synthetic_decisions: flip rates must lie in [0, 0.5)");
  std::vector<char> in(static_cast<std::size_t>(n), 0);
  for (NodeId v : truth) {
    if (v < 0 || v >= n) throw RangeError("synthetic_decisions: truth node out of range");
    in[static_cast<std::size_t>(v)] = 1;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  DecisionTensor d(n, 2, flip_rates.size());
  for (std::size_t r = 0; r < flip_rates.size(); ++r)
    for (NodeId i = 0; i < n; ++i) {
      const bool flip = coin(rng) < flip_rates[r];
      d.set(i, r, (in[static_cast<std::size_t>(i)] != 0) != flip ? 1 : 0);
    }
  return d;
}

}  // namespace enmcs
