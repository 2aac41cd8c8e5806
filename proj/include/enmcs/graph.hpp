#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "enmcs/error.hpp"

namespace enmcs {

using NodeId = int;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using NodeSet = std::vector<NodeId>;  // sorted, unique

struct Edge {
  NodeId u;
  NodeId v;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// One relation type over the shared node set. Edges are stored with u < v,
/// sorted and unique; `adjacency` is the symmetric binary matrix they induce.
struct LayerGraph {
  std::vector<Edge> edges;
  SparseMatrix adjacency;

  std::vector<int> degrees() const {
    std::vector<int> deg(static_cast<std::size_t>(adjacency.rows()), 0);
    for (const auto& e : edges) {
      ++deg[static_cast<std::size_t>(e.u)];
      ++deg[static_cast<std::size_t>(e.v)];
    }
    return deg;
  }
};

/// Builds a layer from an arbitrary edge list. Orientation and duplicates are
/// normalized; self-loops and out-of-range ids are rejected.
inline LayerGraph make_layer(std::vector<Edge> edges, NodeId n) {
  for (auto& e : edges) {
    if (e.u == e.v) throw RangeError("self-loop on node " + std::to_string(e.u));
    if (e.u < 0 || e.v < 0 || e.u >= n || e.v >= n)
      throw RangeError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                       ") out of range for n=" + std::to_string(n));
    if (e.u > e.v) std::swap(e.u, e.v);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(edges.size() * 2);
  for (const auto& e : edges) {
    triplets.emplace_back(e.u, e.v, 1.0);
    triplets.emplace_back(e.v, e.u, 1.0);
  }
  LayerGraph layer;
  layer.edges = std::move(edges);
  layer.adjacency.resize(n, n);
  layer.adjacency.setFromTriplets(triplets.begin(), triplets.end());
  layer.adjacency.makeCompressed();
  return layer;
}

/// Node set shared by every layer, one adjacency and one feature matrix per layer.
/// Immutable once built.
class MultilayerGraph {
 public:
  MultilayerGraph(NodeId n, std::vector<LayerGraph> layers, std::vector<Matrix> features)
      : n_(n), layers_(std::move(layers)), features_(std::move(features)) {
    if (layers_.empty()) throw ConfigError("multilayer graph needs at least one layer");
    if (features_.size() != layers_.size())
      throw DimensionError("expected one feature matrix per layer");
    for (std::size_t r = 0; r < layers_.size(); ++r) {
      if (layers_[r].adjacency.rows() != n_ || layers_[r].adjacency.cols() != n_)
        throw DimensionError("layer " + std::to_string(r) + " adjacency is not n x n");
      if (features_[r].rows() != n_ || features_[r].cols() != features_[0].cols())
        throw DimensionError("feature matrices must all be n x f");
    }
  }

  NodeId num_nodes() const { return n_; }
  std::size_t num_layers() const { return layers_.size(); }
  Eigen::Index feature_dim() const { return features_.front().cols(); }
  const LayerGraph& layer(std::size_t r) const { return layers_.at(r); }
  const std::vector<LayerGraph>& layers() const { return layers_; }
  const Matrix& features(std::size_t r) const { return features_.at(r); }
  const std::vector<Matrix>& features() const { return features_; }

  MultilayerGraph with_features(std::vector<Matrix> features) const {
    return MultilayerGraph(n_, layers_, std::move(features));
  }

 private:
  NodeId n_;
  std::vector<LayerGraph> layers_;
  std::vector<Matrix> features_;
};

/// Query node ids, sorted and unique.
struct Query {
  NodeSet nodes;
};

inline NodeSet make_node_set(std::vector<NodeId> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

/// A ω·I + A. ω = 0 returns A unchanged.
inline SparseMatrix augment_adjacency(const SparseMatrix& adjacency, double self_loop_weight = 1.0) {
  if (self_loop_weight < 0.0 || !std::isfinite(self_loop_weight))
    throw ConfigError("self-loop weight must be a finite value >= 0");
  if (self_loop_weight == 0.0) return adjacency;
  SparseMatrix identity(adjacency.rows(), adjacency.cols());
  identity.setIdentity();
  SparseMatrix out = adjacency + self_loop_weight * identity;
  out.makeCompressed();
  return out;
}

/// One-hot of min(floor(log2(deg + 1)), num_buckets - 1) per node and layer.
inline std::vector<Matrix> fallback_features(const std::vector<LayerGraph>& layers, NodeId n,
                                             int num_buckets = 8) {
  if (num_buckets < 1) throw ConfigError("num_buckets must be >= 1");
  std::vector<Matrix> out;
  out.reserve(layers.size());
  for (const auto& layer : layers) {
    Matrix x = Matrix::Zero(n, num_buckets);
    const auto deg = layer.degrees();
    for (NodeId v = 0; v < n; ++v) {
      // integer log2 avoids floating-point edge cases at powers of two
      unsigned value = static_cast<unsigned>(deg[static_cast<std::size_t>(v)]) + 1u;
      int bucket = 0;
      while (value > 1u) {
        value >>= 1u;
        ++bucket;
      }
      x(v, std::min(bucket, num_buckets - 1)) = 1.0;
    }
    out.push_back(std::move(x));
  }
  return out;
}

inline std::vector<Matrix> fallback_features(const MultilayerGraph& g, int num_buckets = 8) {
  return fallback_features(g.layers(), g.num_nodes(), num_buckets);
}

// ---------------------------------------------------------------------------
// Text formats

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> tokens;
  for (std::string tok; in >> tok;) tokens.push_back(std::move(tok));
  return tokens;
}

inline bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  return in;
}

inline NodeId parse_id(const std::string& token, const std::string& source, std::size_t line) {
  std::size_t used = 0;
  long long value = 0;
  try {
    value = std::stoll(token, &used);
  } catch (const std::exception&) {
    throw ParseError(source, line, "invalid node id '" + token + "'");
  }
  if (used != token.size() || value < 0)
    throw ParseError(source, line, "invalid node id '" + token + "'");
  if (value > std::numeric_limits<NodeId>::max())
    throw RangeError(source + ":" + std::to_string(line) + ": node id " + token + " too large");
  return static_cast<NodeId>(value);
}

inline double parse_real(const std::string& token, const std::string& source, std::size_t line) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(token, &used);
  } catch (const std::exception&) {
    throw ParseError(source, line, "invalid real '" + token + "'");
  }
  if (used != token.size() || !std::isfinite(value))
    throw ParseError(source, line, "invalid real '" + token + "'");
  return value;
}

}  // namespace detail

/// Label -> dense id table, one "label id" pair per line.
using IdMap = std::unordered_map<std::string, NodeId>;

inline IdMap read_id_map(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  IdMap map;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (detail::is_blank(line) || line[0] == '#') continue;
    const auto tok = detail::split_ws(line);
    if (tok.size() != 2) throw ParseError(path.string(), lineno, "expected 'label id'");
    map[tok[0]] = detail::parse_id(tok[1], path.string(), lineno);
  }
  return map;
}

struct EdgeFile {
  std::vector<Edge> edges;
  std::optional<NodeId> declared_n;
};

inline EdgeFile read_edge_file(const std::filesystem::path& path, const IdMap* id_map = nullptr) {
  auto in = detail::open_input(path);
  const std::string src = path.string();
  EdgeFile out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (detail::is_blank(line)) continue;
    if (line[0] == '#') {
      if (lineno == 1 && line.rfind("#n=", 0) == 0) {
        out.declared_n = detail::parse_id(line.substr(3), src, lineno);
      }
      continue;
    }
    const auto tok = detail::split_ws(line);
    if (tok.size() == 3) throw ParseError(src, lineno, "weighted edges are not supported");
    if (tok.size() != 2) throw ParseError(src, lineno, "expected two node ids");
    Edge e{};
    if (id_map) {
      auto a = id_map->find(tok[0]);
      auto b = id_map->find(tok[1]);
      if (a == id_map->end() || b == id_map->end())
        throw ParseError(src, lineno, "label missing from id map");
      e = {a->second, b->second};
    } else {
      e = {detail::parse_id(tok[0], src, lineno), detail::parse_id(tok[1], src, lineno)};
    }
    if (e.u == e.v) throw ParseError(src, lineno, "self-loops are not allowed");
    if (out.declared_n && (e.u >= *out.declared_n || e.v >= *out.declared_n))
      throw RangeError(src + ":" + std::to_string(lineno) + ": node id exceeds declared n=" +
                       std::to_string(*out.declared_n));
    out.edges.push_back(e);
  }
  return out;
}

inline Matrix read_feature_file(const std::filesystem::path& path, NodeId n) {
  auto in = detail::open_input(path);
  const std::string src = path.string();
  std::vector<std::vector<double>> rows;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (detail::is_blank(line) || line[0] == '#') continue;
    std::vector<double> row;
    for (const auto& tok : detail::split_ws(line)) row.push_back(detail::parse_real(tok, src, lineno));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(src, lineno, "ragged feature row");
    rows.push_back(std::move(row));
  }
  if (static_cast<NodeId>(rows.size()) != n)
    throw DimensionError(src + ": expected " + std::to_string(n) + " feature rows, found " +
                         std::to_string(rows.size()));
  if (rows.empty() || rows.front().empty()) throw DimensionError(src + ": empty feature matrix");
  Matrix x(n, static_cast<Eigen::Index>(rows.front().size()));
  for (NodeId i = 0; i < n; ++i)
    for (std::size_t j = 0; j < rows[static_cast<std::size_t>(i)].size(); ++j)
      x(i, static_cast<Eigen::Index>(j)) = rows[static_cast<std::size_t>(i)][j];
  return x;
}

/// Loads every layer file, infers n (max of declared n and 1 + max id), and
/// attaches features: none -> degree-bucket fallback, one -> replicated across
/// layers, otherwise one per layer.
inline MultilayerGraph load_multilayer_graph(const std::vector<std::filesystem::path>& layer_paths,
                                             const std::vector<std::filesystem::path>& feature_paths = {},
                                             const IdMap* id_map = nullptr, int num_buckets = 8) {
  if (layer_paths.empty()) throw ConfigError("no layer files given");
  std::vector<EdgeFile> files;
  NodeId n = 0;
  for (const auto& p : layer_paths) {
    files.push_back(read_edge_file(p, id_map));
    const auto& f = files.back();
    if (f.declared_n) n = std::max(n, *f.declared_n);
    for (const auto& e : f.edges) n = std::max({n, e.u + 1, e.v + 1});
  }
  std::vector<LayerGraph> layers;
  for (auto& f : files) layers.push_back(make_layer(std::move(f.edges), n));

  std::vector<Matrix> features;
  if (feature_paths.empty()) {
    features = fallback_features(layers, n, num_buckets);
  } else if (feature_paths.size() == 1) {
    Matrix x = read_feature_file(feature_paths.front(), n);
    features.assign(layers.size(), x);
  } else if (feature_paths.size() == layers.size()) {
    for (const auto& p : feature_paths) features.push_back(read_feature_file(p, n));
  } else {
    throw ConfigError("feature files must number 0, 1, or one per layer");
  }
  return MultilayerGraph(n, std::move(layers), std::move(features));
}

inline void write_edge_file(const std::filesystem::path& path, const LayerGraph& layer, NodeId n) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "#n=" << n << '\n';
  for (const auto& e : layer.edges) out << e.u << ' ' << e.v << '\n';
}

inline void write_feature_file(const std::filesystem::path& path, const Matrix& x) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? " " : "") << x(i, j);
    out << '\n';
  }
}

/// Communities file and queries file share the format: one node set per line.
inline std::vector<NodeSet> read_node_sets(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  const std::string src = path.string();
  std::vector<NodeSet> sets;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (detail::is_blank(line) || line[0] == '#') continue;
    std::vector<NodeId> ids;
    for (const auto& tok : detail::split_ws(line)) ids.push_back(detail::parse_id(tok, src, lineno));
    sets.push_back(make_node_set(std::move(ids)));
  }
  return sets;
}

inline void write_node_sets(const std::filesystem::path& path, const std::vector<NodeSet>& sets) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& s : sets) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
}

inline std::vector<Query> read_queries(const std::filesystem::path& path, NodeId n) {
  std::vector<Query> queries;
  for (auto& s : read_node_sets(path)) {
    if (s.empty()) continue;
    if (s.back() >= n) throw RangeError(path.string() + ": query node out of range");
    queries.push_back(Query{std::move(s)});
  }
  return queries;
}

}  // namespace enmcs
