// Command-line front end: generate, train, search, merge, evaluate, pipeline.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "enmcs/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::size_t> queries;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--mode", o.mode, "query mode")->check(CLI::IsMember({"transductive", "inductive", "hybrid"}));
  cmd->add_option("--queries", o.queries, "number of generated queries");
  cmd->add_option("--out", o.out, "output directory");
}

enmcs::RunConfig resolve(const CommonOptions& o) {
  enmcs::RunConfig cfg;
  if (!o.config.empty()) {
    const fs::path path(o.config);
    auto kv = enmcs::read_key_values(path);
    // relative dataset paths are relative to the config file
    for (const char* key : {"layers", "features", "communities", "queries_file"}) {
      auto it = kv.find(key);
      if (it == kv.end()) continue;
      std::string joined;
      for (auto& p : enmcs::detail::split_list(it->second)) {
        fs::path resolved = fs::path(p).is_absolute() ? fs::path(p) : path.parent_path() / p;
        joined += (joined.empty() ? "" : ",") + resolved.string();
      }
      it->second = joined;
    }
    cfg.apply(kv);
  }
  for (const auto& s : o.overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw enmcs::ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.mode) cfg.mode = enmcs::parse_query_mode(*o.mode);
  if (o.queries) cfg.queries = *o.queries;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "enmcs_out";
  return cfg;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw enmcs::Error("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!enmcs::detail::is_blank(line)) out.push_back(json::parse(line));
  return out;
}

std::vector<enmcs::QueryCase> load_or_generate_queries(const enmcs::RunConfig& cfg, const enmcs::Dataset& data) {
  if (!cfg.queries_path.empty()) {
    std::vector<enmcs::QueryCase> cases;
    for (auto& q : enmcs::read_queries(cfg.queries_path, data.graph.num_nodes())) {
      enmcs::QueryCase c;
      c.query = q;
      if (auto idx = enmcs::community_of(q.nodes, data.communities)) {
        c.community = *idx;
        c.truth = data.communities[*idx];
      }
      cases.push_back(std::move(c));
    }
    return cases;
  }
  return enmcs::generate_queries(data.communities, cfg.mode, cfg.queries, cfg.seed);
}

int cmd_generate(const CommonOptions& o) {
  auto cfg = resolve(o);
  cfg.synthetic = true;
  auto data = enmcs::load_dataset(cfg);
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> layers, features;
  for (std::size_t r = 0; r < data.graph.num_layers(); ++r) {
    const auto name = "layer_" + std::to_string(r) + ".txt";
    const auto feat = "features_" + std::to_string(r) + ".txt";
    enmcs::write_edge_file(cfg.out_dir / name, data.graph.layer(r), data.graph.num_nodes());
    enmcs::write_feature_file(cfg.out_dir / feat, data.graph.features(r));
    layers.push_back(name);
    features.push_back(feat);
  }
  enmcs::write_node_sets(cfg.out_dir / "communities.txt", data.communities);
  std::vector<enmcs::NodeSet> queries;
  for (auto& q : enmcs::generate_queries(data.communities, cfg.mode, cfg.queries, cfg.seed)) queries.push_back(q.query.nodes);
  enmcs::write_node_sets(cfg.out_dir / "queries.txt", queries);

  std::ofstream conf(cfg.out_dir / "dataset.conf");
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  conf << "layers = " << join(layers) << "\nfeatures = " << join(features)
       << "\ncommunities = communities.txt\nqueries_file = queries.txt\n";
  std::cout << json{{"nodes", data.graph.num_nodes()},
                    {"layers", data.graph.num_layers()},
                    {"communities", data.communities.size()},
                    {"queries", queries.size()},
                    {"out", cfg.out_dir.string()}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_train(const CommonOptions& o) {
  auto cfg = resolve(o);
  auto data = enmcs::load_dataset(cfg);
  auto inputs = enmcs::prepare_inputs(data.graph, cfg);
  auto result = enmcs::train(inputs, enmcs::encoder_config_for(data.graph, cfg), cfg.loss, cfg.seed);
  fs::create_directories(cfg.out_dir);
  enmcs::nn::save_checkpoint(cfg.out_dir / "model.ckpt", result.params.parameters());
  result.report.write_csv(cfg.out_dir / "train.csv");
  enmcs::write_key_values(cfg.out_dir / "model.conf", cfg.to_key_values());
  const auto& last = result.report.epochs.back();
  std::cout << json{{"epochs", result.report.stopped_epoch},
                    {"first_total", result.report.epochs.front().total},
                    {"final_total", last.total},
                    {"seconds", result.report.wall_seconds}}
                   .dump()
            << '\n';
  std::cerr << "trained " << result.report.stopped_epoch << " epochs, loss " << result.report.epochs.front().total
            << " -> " << last.total << '\n';
  return 0;
}

int cmd_search(const CommonOptions& o, const std::string& model) {
  auto cfg = resolve(o);
  auto data = enmcs::load_dataset(cfg);
  auto inputs = enmcs::prepare_inputs(data.graph, cfg);
  auto params = enmcs::make_encoder(enmcs::encoder_config_for(data.graph, cfg), cfg.seed);
  enmcs::nn::load_checkpoint(fs::path(model), params.parameters());
  const auto reps = enmcs::encode(params, inputs);
  fs::create_directories(cfg.out_dir);
  std::ofstream layers(cfg.out_dir / "layers.jsonl");
  std::ofstream scores(cfg.out_dir / "scores.csv");
  scores << "query_index,layer,node,shared,specific,combined\n";
  scores.precision(10);
  const auto cases = load_or_generate_queries(cfg, data);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto result = enmcs::search_all_layers(cases[i].query.nodes, reps, cfg.score, &data.graph);
    for (const auto& c : result.communities) {
      auto rec = enmcs::layer_record(cases[i].query.nodes, c);
      rec["num_nodes"] = data.graph.num_nodes();
      layers << rec.dump() << '\n';
    }
    for (std::size_t r = 0; r < result.scores.size(); ++r)
      for (Eigen::Index v = 0; v < result.scores[r].combined.size(); ++v)
        scores << i << ',' << r << ',' << v << ',' << result.scores[r].shared(v) << ','
               << result.scores[r].specific(v) << ',' << result.scores[r].combined(v) << '\n';
  }
  std::cerr << "searched " << cases.size() << " queries\n";
  return 0;
}

int cmd_merge(const CommonOptions& o, const std::string& layers_path) {
  auto cfg = resolve(o);
  auto records = read_jsonl(layers_path);
  // consecutive records with the same query form one decision tensor
  fs::create_directories(cfg.out_dir);
  std::ofstream out(cfg.out_dir / "consensus.jsonl");
  std::size_t groups = 0;
  for (std::size_t i = 0; i < records.size();) {
    const auto query = records[i]["query"].get<enmcs::NodeSet>();
    const auto n = records[i]["num_nodes"].get<enmcs::NodeId>();
    std::vector<enmcs::NodeSet> per_layer;
    std::size_t k = i;
    for (; k < records.size() && records[k]["query"].get<enmcs::NodeSet>() == query; ++k)
      per_layer.push_back(records[k]["nodes"].get<enmcs::NodeSet>());
    auto state = enmcs::run_em(enmcs::DecisionTensor::from_communities(n, per_layer), cfg.em);
    out << enmcs::consensus_record(query, enmcs::extract_community(state, query), state).dump() << '\n';
    ++groups;
    i = k;
  }
  std::cerr << "merged " << groups << " queries\n";
  return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::string& predictions, const std::string& layers_path) {
  auto cfg = resolve(o);
  if (cfg.communities_path.empty()) throw enmcs::ConfigError("evaluate needs 'communities' in the config");
  const auto communities = enmcs::read_node_sets(cfg.communities_path);
  std::map<enmcs::NodeSet, std::vector<enmcs::NodeSet>> layer_sets;
  if (!layers_path.empty())
    for (auto& rec : read_jsonl(layers_path))
      layer_sets[rec["query"].get<enmcs::NodeSet>()].push_back(rec["nodes"].get<enmcs::NodeSet>());

  enmcs::EvalReport report;
  std::size_t index = 0;
  for (auto& rec : read_jsonl(predictions)) {
    enmcs::QueryOutcome q;
    q.index = index++;
    q.query = rec["query"].get<enmcs::NodeSet>();
    q.predicted = rec["nodes"].get<enmcs::NodeSet>();
    q.consensus.iterations = rec.value("iterations", 0);
    auto c = enmcs::community_of(q.query, communities);
    if (!c) throw enmcs::ContractError("query has no ground-truth community");
    q.truth = communities[*c];
    q.score = enmcs::f1_score(q.predicted, q.truth);
    if (auto it = layer_sets.find(q.query); it != layer_sets.end()) {
      for (const auto& s : it->second) q.layer_f1.push_back(enmcs::f1_score(s, q.truth).f1);
      const auto n = std::max<enmcs::NodeId>(1, [&] {
        enmcs::NodeId m = 0;
        for (const auto& s : it->second)
          if (!s.empty()) m = std::max(m, s.back() + 1);
        return m;
      }());
      auto voted = enmcs::majority_vote(enmcs::DecisionTensor::from_communities(n, it->second));
      voted.insert(voted.end(), q.query.begin(), q.query.end());
      q.vote_f1 = enmcs::f1_score(enmcs::make_node_set(voted), q.truth).f1;
    }
    report.queries.push_back(std::move(q));
  }
  fs::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir / "report.csv");
  report.write_csv(csv);
  const auto summary = report.summary();
  std::ofstream(cfg.out_dir / "summary.json") << summary.dump(2) << '\n';
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_pipeline(const CommonOptions& o) {
  auto cfg = resolve(o);
  const auto t0 = std::chrono::steady_clock::now();
  auto data = enmcs::load_dataset(cfg);
  const double load = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<enmcs::QueryCase> fixed;
  const bool use_file = !cfg.queries_path.empty();
  if (use_file) fixed = load_or_generate_queries(cfg, data);
  auto report = enmcs::run_pipeline(data, cfg, use_file ? &fixed : nullptr);
  report.seconds.load = load;
  enmcs::write_outputs(report, cfg.out_dir);
  const auto summary = report.summary();
  std::cout << summary.dump() << '\n';
  std::cerr << "mean F1 " << report.mean_f1() << " (vote " << report.mean_vote_f1() << ", best layer "
            << report.best_layer_f1() << ") over " << report.queries.size() << " queries -> " << cfg.out_dir.string()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble multilayer community search"};
  app.require_subcommand(1);

  CommonOptions generate_opts, train_opts, search_opts, merge_opts, evaluate_opts, pipeline_opts;
  std::string model, layers_file, merge_layers, predictions;

  auto* generate = app.add_subcommand("generate", "write a synthetic planted-partition dataset");
  add_common(generate, generate_opts);
  auto* train = app.add_subcommand("train", "train the encoder and save a checkpoint");
  add_common(train, train_opts);
  auto* search = app.add_subcommand("search", "per-layer communities for each query");
  add_common(search, search_opts);
  search->add_option("--model", model, "checkpoint from 'train'")->required();
  auto* merge = app.add_subcommand("merge", "EM consensus over per-layer communities");
  add_common(merge, merge_opts);
  merge->add_option("--layers", merge_layers, "layers.jsonl from 'search'")->required();
  auto* evaluate = app.add_subcommand("evaluate", "F1 of consensus communities against ground truth");
  add_common(evaluate, evaluate_opts);
  evaluate->add_option("--predictions", predictions, "consensus.jsonl from 'merge'")->required();
  evaluate->add_option("--layers", layers_file, "layers.jsonl for per-layer and vote F1");
  auto* pipeline = app.add_subcommand("pipeline", "train, search, merge and evaluate in one run");
  add_common(pipeline, pipeline_opts);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*generate) return cmd_generate(generate_opts);
    if (*train) return cmd_train(train_opts);
    if (*search) return cmd_search(search_opts, model);
    if (*merge) return cmd_merge(merge_opts, merge_layers);
    if (*evaluate) return cmd_evaluate(evaluate_opts, predictions, layers_file);
    if (*pipeline) return cmd_pipeline(pipeline_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
