#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <queue>
#include <vector>

#include "enmcs/emerge.hpp"
#include "enmcs/encoder.hpp"

namespace enmcs {

enum class Similarity { kCosine, kL1, kL2 };

struct ScoreConfig {
  double lambda = -1.0;  // weight of the layer-specific score
  double tau = 0.9;      // size damping in ESG
  Similarity similarity = Similarity::kCosine;
  bool connected_filter = false;  // keep only nodes reachable from the query inside the community
  bool parallel = true;

  void validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("score: tau must lie in (0, 1]");
    if (!std::isfinite(lambda)) throw ConfigError("score: lambda must be finite");
  }
};

struct CommunityScore {
  Vector shared;    // cS
  Vector specific;  // pS
  Vector combined;  // zscore(cS) + lambda zscore(pS)
};

/// Similarity of every row of `reps` to row q. Cosine is 0 against a zero vector.
inline Vector similarity_to(const Matrix& reps, NodeId q, Similarity kind) {
  const Eigen::Index n = reps.rows();
  Vector out(n);
  const auto target = reps.row(q);
  switch (kind) {
    case Similarity::kCosine: {
      const double tn = target.norm();
      for (Eigen::Index v = 0; v < n; ++v) {
        const double denom = reps.row(v).norm() * tn;
        out(v) = denom > 0.0 ? reps.row(v).dot(target) / denom : 0.0;
      }
      break;
    }
    case Similarity::kL1:
      for (Eigen::Index v = 0; v < n; ++v) out(v) = -(reps.row(v) - target).cwiseAbs().sum();
      break;
    case Similarity::kL2:
      for (Eigen::Index v = 0; v < n; ++v) out(v) = -(reps.row(v) - target).norm();
      break;
  }
  return out;
}

/// (x - mean) / population sd; all zeros when sd is 0.
inline Vector zscore(const Vector& x) {
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  if (!(sd > 0.0)) return Vector::Zero(x.size());
  return (x.array() - mean) / sd;
}

inline CommunityScore layer_community_scores(const NodeSet& query, const Matrix& shared, const Matrix& specific,
                                             const ScoreConfig& cfg = {}) {
  if (query.empty()) throw ContractError("layer_community_scores: empty query");
  if (shared.rows() != specific.rows()) throw DimensionError("layer_community_scores: row counts differ");
  CommunityScore s;
  s.shared = Vector::Zero(shared.rows());
  s.specific = Vector::Zero(specific.rows());
  for (NodeId q : query) {
    if (q < 0 || q >= shared.rows()) throw RangeError("layer_community_scores: query node out of range");
    s.shared += similarity_to(shared, q, cfg.similarity);
    s.specific += similarity_to(specific, q, cfg.similarity);
  }
  s.shared /= static_cast<double>(query.size());
  s.specific /= static_cast<double>(query.size());
  s.combined = zscore(s.shared) + cfg.lambda * zscore(s.specific);
  return s;
}

/// Expected score gain: (sum_{v in M} S_v - mean(S) |M|) / |M|^tau.
inline double esg(const Vector& scores, const NodeSet& members, double tau) {
  if (members.empty()) throw ContractError("esg: empty member set");
  double inside = 0.0;
  for (NodeId v : members) inside += scores(v);
  const double size = static_cast<double>(members.size());
  return (inside - scores.mean() * size) / std::pow(size, tau);
}

/// ESG of every prefix of a descending score order, via prefix sums.
/// value(k) is the ESG of the first k nodes, k = 1..n.
class PrefixEsg {
 public:
  PrefixEsg(const Vector& scores, std::vector<NodeId> order, double tau)
      : order_(std::move(order)), prefix_(order_.size() + 1, 0.0), tau_(tau) {
    for (std::size_t i = 0; i < order_.size(); ++i) prefix_[i + 1] = prefix_[i] + scores(order_[i]);
    mean_ = scores.mean();
  }

  double value(std::size_t k) const {
    const double size = static_cast<double>(k);
    return (prefix_[k] - mean_ * size) / std::pow(size, tau_);
  }
  std::size_t size() const { return order_.size(); }
  const std::vector<NodeId>& order() const { return order_; }

 private:
  std::vector<NodeId> order_;
  std::vector<double> prefix_;
  double mean_ = 0.0;
  double tau_;
};

/// Nodes by score, descending; equal scores by ascending id.
inline std::vector<NodeId> descending_order(const Vector& scores) {
  std::vector<NodeId> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) { return scores(a) > scores(b); });
  return order;
}

struct LayerCommunity {
  std::size_t layer = 0;
  NodeSet nodes;
  double esg = 0.0;           // ESG of the selected prefix
  std::size_t prefix = 0;     // number of top-ranked nodes selected
  int iterations = 0;         // binary-search steps
};

/// Binary search for the ESG peak over prefixes of the descending order. At
/// each probe the prefix through position mid is compared against the one
/// ending just before it; growth moves the lower bound past mid, anything
/// else (ties included) pulls the upper bound to mid.
inline LayerCommunity identify_prefix(const PrefixEsg& esg_of) {
  std::size_t lo = 0, hi = esg_of.size();
  int steps = 0;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    ++steps;
    // the empty prefix is never a candidate, so position 0 always grows
    const bool grows = mid == 0 || esg_of.value(mid + 1) > esg_of.value(mid);
    if (grows)
      lo = mid + 1;
    else
      hi = mid;
  }
  LayerCommunity out;
  out.prefix = hi;
  out.esg = esg_of.value(hi);
  out.iterations = steps;
  return out;
}

/// Smallest prefix length with the largest ESG, by exhaustive scan.
inline std::size_t best_prefix_exhaustive(const PrefixEsg& esg_of) {
  std::size_t best = 1;
  for (std::size_t k = 2; k <= esg_of.size(); ++k)
    if (esg_of.value(k) > esg_of.value(best)) best = k;
  return best;
}

/// True when prefix ESG rises strictly to a peak and never rises after it,
/// i.e. the binary-search predicate is monotone.
inline bool prefix_esg_unimodal(const PrefixEsg& esg_of) {
  bool falling = false;
  for (std::size_t k = 1; k < esg_of.size(); ++k) {
    const bool grows = esg_of.value(k + 1) > esg_of.value(k);
    if (grows && falling) return false;
    if (!grows) falling = true;
  }
  return true;
}

/// Breadth-first restriction of `members` to nodes reachable from the query
/// through edges of any layer whose endpoints are both members.
inline NodeSet connected_to_query(const NodeSet& members, const NodeSet& query, const MultilayerGraph& g) {
  std::vector<char> in(static_cast<std::size_t>(g.num_nodes()), 0), seen(in.size(), 0);
  for (NodeId v : members) in[static_cast<std::size_t>(v)] = 1;
  std::queue<NodeId> frontier;
  for (NodeId q : query) {
    seen[static_cast<std::size_t>(q)] = 1;
    frontier.push(q);
  }
  while (!frontier.empty()) {
    const NodeId u = frontier.front();
    frontier.pop();
    for (const auto& layer : g.layers())
      for (SparseMatrix::InnerIterator it(layer.adjacency, u); it; ++it) {
        const auto w = static_cast<std::size_t>(it.col());
        if (in[w] && !seen[w]) {
          seen[w] = 1;
          frontier.push(static_cast<NodeId>(w));
        }
      }
  }
  NodeSet out;
  for (std::size_t v = 0; v < seen.size(); ++v)
    if (seen[v]) out.push_back(static_cast<NodeId>(v));
  return out;
}

/// Top-ESG prefix of the layer's ranking, united with the query.
inline LayerCommunity identify_community(const Vector& scores, const NodeSet& query, const ScoreConfig& cfg = {},
                                         const MultilayerGraph* graph = nullptr) {
  cfg.validate();
  if (query.empty()) throw ContractError("identify_community: empty query");
  PrefixEsg esg_of(scores, descending_order(scores), cfg.tau);
  LayerCommunity out = identify_prefix(esg_of);
  std::vector<NodeId> nodes(esg_of.order().begin(), esg_of.order().begin() + static_cast<std::ptrdiff_t>(out.prefix));
  nodes.insert(nodes.end(), query.begin(), query.end());
  out.nodes = make_node_set(std::move(nodes));
  if (cfg.connected_filter && graph) out.nodes = connected_to_query(out.nodes, query, *graph);
  return out;
}

struct SearchResult {
  std::vector<LayerCommunity> communities;  // layer order
  std::vector<CommunityScore> scores;
  DecisionTensor decisions;
};

/// Scores and identifies the community independently in every layer, then
/// packs the per-layer memberships into a decision tensor.
inline SearchResult search_all_layers(const NodeSet& query, const LayerRepresentations& reps,
                                      const ScoreConfig& cfg = {}, const MultilayerGraph* graph = nullptr) {
  cfg.validate();
  if (query.empty()) throw ContractError("search_all_layers: empty query");
  const std::size_t layers = reps.C.size();
  if (layers == 0 || reps.P.size() != layers) throw DimensionError("search_all_layers: no layers");
  const auto n = static_cast<NodeId>(reps.C.front().rows());

  auto one = [&](std::size_t r) {
    auto score = layer_community_scores(query, reps.C[r], reps.P[r], cfg);
    auto community = identify_community(score.combined, query, cfg, graph);
    community.layer = r;
    return std::make_pair(std::move(score), std::move(community));
  };

  std::vector<std::pair<CommunityScore, LayerCommunity>> results;
  if (cfg.parallel && layers > 1) {
    std::vector<std::future<std::pair<CommunityScore, LayerCommunity>>> jobs;
    for (std::size_t r = 0; r < layers; ++r) jobs.push_back(std::async(std::launch::async, one, r));
    for (auto& j : jobs) results.push_back(j.get());
  } else {
    for (std::size_t r = 0; r < layers; ++r) results.push_back(one(r));
  }

  SearchResult out{{}, {}, DecisionTensor(n, 2, layers)};
  for (std::size_t r = 0; r < layers; ++r) {
    for (NodeId v : results[r].second.nodes) out.decisions.set(v, r, 1);
    out.scores.push_back(std::move(results[r].first));
    out.communities.push_back(std::move(results[r].second));
  }
  return out;
}

}  // namespace enmcs
