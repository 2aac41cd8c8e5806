#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "enmcs/diffusion.hpp"
#include "enmcs/emerge.hpp"
#include "enmcs/encoder.hpp"
#include "enmcs/harness.hpp"
#include "enmcs/holosearch.hpp"
#include "enmcs/training.hpp"

namespace enmcs {

// ---------------------------------------------------------------------------
// Configuration: flat "key = value" lines, '#' comments.

using KeyValues = std::map<std::string, std::string>;

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  KeyValues kv;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (detail::is_blank(line)) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), lineno, "expected 'key = value'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(path.string(), lineno, "empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct RunConfig {
  // dataset
  std::vector<std::filesystem::path> layer_paths;
  std::vector<std::filesystem::path> feature_paths;
  std::filesystem::path communities_path;
  std::filesystem::path queries_path;  // optional; generated from communities otherwise
  bool synthetic = false;
  SyntheticSpec synth{};

  // model
  HeatKernelConfig heat{};
  double self_loop_weight = 1.0;
  int num_buckets = 8;
  EncoderConfig encoder{};
  LossConfig loss{};
  ScoreConfig score{};
  EMConfig em{};

  // run
  std::uint64_t seed = 1;
  QueryMode mode = QueryMode::kTransductive;
  std::size_t queries = 30;
  std::filesystem::path out_dir;

  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& kv) {
    for (const auto& [k, v] : kv) set(k, v);
  }
  KeyValues to_key_values() const;
};

namespace detail {

inline double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  auto paths = [&] {
    std::vector<std::filesystem::path> out;
    for (auto& s : split_list(value)) out.emplace_back(s);
    return out;
  };
  if (key == "layers") layer_paths = paths();
  else if (key == "features") feature_paths = paths();
  else if (key == "communities") communities_path = value;
  else if (key == "queries_file") queries_path = value;
  else if (key == "synthetic") synthetic = to_bool(key, value);
  else if (key == "synthetic.n") synth.n = static_cast<NodeId>(to_int(key, value));
  else if (key == "synthetic.community_sizes") {
    synth.community_sizes.clear();
    for (auto& s : split_list(value)) synth.community_sizes.push_back(static_cast<NodeId>(to_int(key, s)));
  }
  else if (key == "synthetic.layers") synth.layers = static_cast<std::size_t>(to_int(key, value));
  else if (key == "synthetic.p_in") synth.p_in = to_real(key, value);
  else if (key == "synthetic.p_out") synth.p_out = to_real(key, value);
  else if (key == "synthetic.layer_noise") synth.layer_noise = to_real(key, value);
  else if (key == "synthetic.bump_dim") synth.bump_dim = static_cast<int>(to_int(key, value));
  else if (key == "synthetic.bump_scale") synth.bump_scale = to_real(key, value);
  else if (key == "synthetic.bump_noise") synth.bump_noise = to_real(key, value);
  else if (key == "heat.t") heat.t = to_real(key, value);
  else if (key == "heat.theta_threshold") heat.theta_threshold = to_real(key, value);
  else if (key == "self_loop_weight") self_loop_weight = to_real(key, value);
  else if (key == "num_buckets") num_buckets = static_cast<int>(to_int(key, value));
  else if (key == "hidden_dim") encoder.hidden_dim = to_int(key, value);
  else if (key == "hops") encoder.hops = static_cast<int>(to_int(key, value));
  else if (key == "ffn_depth") encoder.ffn_depth = static_cast<int>(to_int(key, value));
  else if (key == "share_layer_weights") encoder.share_layer_weights = to_bool(key, value);
  else if (key == "alpha") loss.alpha = to_real(key, value);
  else if (key == "beta") loss.beta = to_real(key, value);
  else if (key == "margin") loss.margin = to_real(key, value);
  else if (key == "neg_samples_per_node") loss.neg_samples_per_node = static_cast<int>(to_int(key, value));
  else if (key == "all_pairs") loss.all_pairs = to_bool(key, value);
  else if (key == "literal_sign") loss.literal_sign = to_bool(key, value);
  else if (key == "pearson") {
    if (value == "flattened") loss.pearson = PearsonMode::kFlattened;
    else if (value == "columnwise") loss.pearson = PearsonMode::kColumnwise;
    else throw ConfigError("pearson must be flattened or columnwise");
  }
  else if (key == "epochs") loss.epochs = static_cast<int>(to_int(key, value));
  else if (key == "patience_window") loss.patience_window = static_cast<int>(to_int(key, value));
  else if (key == "min_improvement") loss.min_improvement = to_real(key, value);
  else if (key == "lr_init") loss.lr_init = to_real(key, value);
  else if (key == "lr_peak") loss.lr_peak = to_real(key, value);
  else if (key == "weight_decay") loss.adam.weight_decay = to_real(key, value);
  else if (key == "lambda") score.lambda = to_real(key, value);
  else if (key == "tau") score.tau = to_real(key, value);
  else if (key == "similarity") {
    if (value == "cosine") score.similarity = Similarity::kCosine;
    else if (value == "l1") score.similarity = Similarity::kL1;
    else if (value == "l2") score.similarity = Similarity::kL2;
    else throw ConfigError("similarity must be cosine, l1 or l2");
  }
  else if (key == "connected_filter") score.connected_filter = to_bool(key, value);
  else if (key == "parallel_search") score.parallel = to_bool(key, value);
  else if (key == "em.tolerance") em.tolerance = to_real(key, value);
  else if (key == "em.max_iterations") em.max_iterations = static_cast<int>(to_int(key, value));
  else if (key == "em.clamp_floor") em.clamp_floor = to_real(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(to_int(key, value));
  else if (key == "mode") mode = parse_query_mode(value);
  else if (key == "queries") queries = static_cast<std::size_t>(to_int(key, value));
  else if (key == "out") out_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

inline KeyValues RunConfig::to_key_values() const {
  using detail::fmt;
  KeyValues kv;
  auto join = [](const std::vector<std::filesystem::path>& ps) {
    std::string s;
    for (std::size_t i = 0; i < ps.size(); ++i) s += (i ? "," : "") + ps[i].string();
    return s;
  };
  if (!layer_paths.empty()) kv["layers"] = join(layer_paths);
  if (!feature_paths.empty()) kv["features"] = join(feature_paths);
  if (!communities_path.empty()) kv["communities"] = communities_path.string();
  if (!queries_path.empty()) kv["queries_file"] = queries_path.string();
  kv["heat.t"] = fmt(heat.t);
  kv["heat.theta_threshold"] = fmt(heat.theta_threshold);
  kv["self_loop_weight"] = fmt(self_loop_weight);
  kv["num_buckets"] = std::to_string(num_buckets);
  kv["hidden_dim"] = std::to_string(encoder.hidden_dim);
  kv["hops"] = std::to_string(encoder.hops);
  kv["ffn_depth"] = std::to_string(encoder.ffn_depth);
  kv["share_layer_weights"] = encoder.share_layer_weights ? "true" : "false";
  kv["alpha"] = fmt(loss.alpha);
  kv["beta"] = fmt(loss.beta);
  kv["margin"] = fmt(loss.margin);
  kv["neg_samples_per_node"] = std::to_string(loss.neg_samples_per_node);
  kv["epochs"] = std::to_string(loss.epochs);
  kv["lambda"] = fmt(score.lambda);
  kv["tau"] = fmt(score.tau);
  kv["em.tolerance"] = fmt(em.tolerance);
  kv["seed"] = std::to_string(seed);
  kv["mode"] = to_string(mode);
  kv["queries"] = std::to_string(queries);
  return kv;
}

inline void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

// ---------------------------------------------------------------------------
// Stages

struct Dataset {
  MultilayerGraph graph;
  std::vector<NodeSet> communities;
};

inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.synthetic) {
    SyntheticSpec spec = cfg.synth;
    spec.seed = cfg.seed;
    spec.num_buckets = cfg.num_buckets;
    auto s = synthetic_multilayer(spec);
    return {std::move(s.graph), std::move(s.communities)};
  }
  auto graph = load_multilayer_graph(cfg.layer_paths, cfg.feature_paths, nullptr, cfg.num_buckets);
  std::vector<NodeSet> communities;
  if (!cfg.communities_path.empty()) communities = read_node_sets(cfg.communities_path);
  return {std::move(graph), std::move(communities)};
}

/// Parameter-free encoder inputs; computed once per graph.
inline std::vector<EncoderInput> prepare_inputs(const MultilayerGraph& g, const RunConfig& cfg) {
  return make_encoder_inputs(diffuse_graph(g, cfg.heat, cfg.encoder.hops, cfg.self_loop_weight));
}

inline EncoderConfig encoder_config_for(const MultilayerGraph& g, const RunConfig& cfg) {
  EncoderConfig enc = cfg.encoder;
  enc.feature_dim = g.feature_dim();
  enc.num_layers = g.num_layers();
  return enc;
}

/// Community that holds every query node (first match), the ground truth of a query.
inline std::optional<std::size_t> community_of(const NodeSet& query, const std::vector<NodeSet>& communities) {
  for (std::size_t c = 0; c < communities.size(); ++c)
    if (std::includes(communities[c].begin(), communities[c].end(), query.begin(), query.end())) return c;
  return std::nullopt;
}

struct QueryOutcome {
  std::size_t index = 0;
  NodeSet query;
  NodeSet truth;
  std::vector<LayerCommunity> layers;
  ConsensusState consensus;
  NodeSet predicted;
  NodeSet voted;
  F1 score;
  std::vector<double> layer_f1;
  double vote_f1 = 0.0;
};

struct StageTimes {
  double load = 0, diffuse = 0, train = 0, search = 0, merge = 0;
};

struct EvalReport {
  std::vector<QueryOutcome> queries;
  TrainReport training;
  StageTimes seconds;

  double mean_f1() const { return mean_of([](const QueryOutcome& q) { return q.score.f1; }); }
  double std_f1() const {
    if (queries.empty()) return 0.0;
    const double m = mean_f1();
    double acc = 0.0;
    for (const auto& q : queries) acc += (q.score.f1 - m) * (q.score.f1 - m);
    return std::sqrt(acc / static_cast<double>(queries.size()));
  }
  double mean_vote_f1() const { return mean_of([](const QueryOutcome& q) { return q.vote_f1; }); }
  std::vector<double> mean_layer_f1() const {
    if (queries.empty()) return {};
    std::vector<double> out(queries.front().layer_f1.size(), 0.0);
    for (const auto& q : queries)
      for (std::size_t r = 0; r < out.size(); ++r) out[r] += q.layer_f1[r];
    for (auto& x : out) x /= static_cast<double>(queries.size());
    return out;
  }
  double best_layer_f1() const {
    const auto per = mean_layer_f1();
    return per.empty() ? 0.0 : *std::max_element(per.begin(), per.end());
  }

  /// One row per query, sorted by query index. Contains no timings, so equal
  /// runs produce identical bytes.
  void write_csv(std::ostream& out) const {
    using detail::fmt;
    out << "query_nodes,f1,precision,recall,layer_f1,vote_f1,em_iterations\n";
    for (const auto& q : queries) {
      for (std::size_t i = 0; i < q.query.size(); ++i) out << (i ? " " : "") << q.query[i];
      out << ',' << fmt(q.score.f1) << ',' << fmt(q.score.precision) << ',' << fmt(q.score.recall) << ',';
      for (std::size_t r = 0; r < q.layer_f1.size(); ++r) out << (r ? ";" : "") << fmt(q.layer_f1[r]);
      out << ',' << fmt(q.vote_f1) << ',' << q.consensus.iterations << '\n';
    }
  }

  nlohmann::json summary() const {
    nlohmann::json j;
    j["queries"] = queries.size();
    j["mean_f1"] = mean_f1();
    j["std_f1"] = std_f1();
    j["mean_vote_f1"] = mean_vote_f1();
    j["mean_layer_f1"] = mean_layer_f1();
    j["best_layer_f1"] = best_layer_f1();
    j["train_epochs"] = training.stopped_epoch;
    j["seconds"] = {{"load", seconds.load},     {"diffuse", seconds.diffuse}, {"train", seconds.train},
                    {"search", seconds.search}, {"merge", seconds.merge}};
    return j;
  }

  double mean_of(auto&& field) const {
    if (queries.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& q : queries) acc += field(q);
    return acc / static_cast<double>(queries.size());
  }
};

// JSON records ---------------------------------------------------------------

inline nlohmann::json to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json layer_record(const NodeSet& query, const LayerCommunity& c) {
  return {{"query", query}, {"layer", c.layer}, {"nodes", c.nodes}, {"esg", c.esg}};
}

inline nlohmann::json consensus_record(const NodeSet& query, const NodeSet& nodes, const ConsensusState& s) {
  nlohmann::json pis = nlohmann::json::array();
  for (const auto& p : s.pi) pis.push_back(to_json(p));
  std::vector<double> t_in, t_in_softmax;
  for (Eigen::Index i = 0; i < s.T.rows(); ++i) {
    t_in.push_back(s.T(i, 1));
    t_in_softmax.push_back(s.T_softmax(i, 1));
  }
  return {{"query", query},
          {"nodes", nodes},
          {"T", {{"in", t_in}, {"in_softmax", t_in_softmax}}},
          {"pi", pis},
          {"eta", std::vector<double>(s.eta.data(), s.eta.data() + s.eta.size())},
          {"iterations", s.iterations},
          {"converged", s.converged}};
}

/// Search every layer, merge with EM, and score against `truth` when given.
inline QueryOutcome answer_query(std::size_t index, const NodeSet& query, const NodeSet* truth,
                                 const LayerRepresentations& reps, const MultilayerGraph& g, const RunConfig& cfg,
                                 StageTimes* times = nullptr) {
  using clock = std::chrono::steady_clock;
  QueryOutcome q;
  q.index = index;
  q.query = query;
  auto t0 = clock::now();
  auto search = search_all_layers(query, reps, cfg.score, &g);
  auto t1 = clock::now();
  q.consensus = run_em(search.decisions, cfg.em);
  q.predicted = extract_community(q.consensus, query);
  q.voted = make_node_set([&] {
    auto v = majority_vote(search.decisions);
    v.insert(v.end(), query.begin(), query.end());
    return v;
  }());
  auto t2 = clock::now();
  if (times) {
    times->search += std::chrono::duration<double>(t1 - t0).count();
    times->merge += std::chrono::duration<double>(t2 - t1).count();
  }
  q.layers = std::move(search.communities);
  if (truth) {
    q.truth = *truth;
    q.score = f1_score(q.predicted, *truth);
    q.vote_f1 = f1_score(q.voted, *truth).f1;
    for (const auto& c : q.layers) q.layer_f1.push_back(f1_score(c.nodes, *truth).f1);
  }
  return q;
}

/// load -> diffuse -> train -> per query: search, EM merge, extract, F1
/// (EM and majority vote are both scored on the same decisions).
inline EvalReport run_pipeline(const Dataset& data, const RunConfig& cfg,
                               const std::vector<QueryCase>* fixed_queries = nullptr) {
  using clock = std::chrono::steady_clock;
  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      throw Error(std::string(name) + " stage: " + e.what());
    }
  };
  EvalReport report;
  auto t0 = clock::now();
  auto inputs = stage("diffuse", [&] { return prepare_inputs(data.graph, cfg); });
  auto t1 = clock::now();
  auto trained = stage("train", [&] {
    return train(inputs, encoder_config_for(data.graph, cfg), cfg.loss, cfg.seed);
  });
  auto t2 = clock::now();
  report.seconds.diffuse = std::chrono::duration<double>(t1 - t0).count();
  report.seconds.train = std::chrono::duration<double>(t2 - t1).count();
  report.training = trained.report;

  std::vector<QueryCase> cases = fixed_queries
                                     ? *fixed_queries
                                     : stage("queries", [&] {
                                         return generate_queries(data.communities, cfg.mode, cfg.queries, cfg.seed);
                                       });
  const auto reps = encode(trained.params, inputs);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    report.queries.push_back(stage("search/merge", [&] {
      return answer_query(i, cases[i].query.nodes, &cases[i].truth, reps, data.graph, cfg, &report.seconds);
    }));
  }
  return report;
}

inline void write_outputs(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "report.csv");
    report.write_csv(csv);
  }
  {
    std::ofstream js(dir / "summary.json");
    js << report.summary().dump(2) << '\n';
  }
  report.training.write_csv(dir / "train.csv");
  std::ofstream layers(dir / "layers.jsonl");
  std::ofstream consensus(dir / "consensus.jsonl");
  for (const auto& q : report.queries) {
    for (const auto& c : q.layers) layers << layer_record(q.query, c).dump() << '\n';
    consensus << consensus_record(q.query, q.predicted, q.consensus).dump() << '\n';
  }
}

}  // namespace enmcs
