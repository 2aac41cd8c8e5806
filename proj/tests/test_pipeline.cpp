#include <gtest/gtest.h>

#include <chrono>

#include "enmcs/pipeline.hpp"
#include "support.hpp"

using namespace enmcs;
using testing_support::TempDir;

namespace {

RunConfig small_run(std::uint64_t seed = 4) {
  RunConfig cfg;
  cfg.synthetic = true;
  cfg.synth.n = 60;
  cfg.synth.community_sizes = {20, 20, 20};
  cfg.synth.layers = 2;
  cfg.encoder.hidden_dim = 16;
  cfg.loss.epochs = 10;
  cfg.queries = 6;
  cfg.seed = seed;
  return cfg;
}

std::string csv_of(const EvalReport& r) {
  std::ostringstream out;
  r.write_csv(out);
  return out.str();
}

}  // namespace

TEST(Config, ParsesKeyValuesWithComments) {
  TempDir dir;
  auto p = dir.write("run.conf", "# header\nseed = 12\n\nlambda=-0.5  # trailing\n  tau =0.8\n");
  auto kv = read_key_values(p);
  EXPECT_EQ(kv.at("seed"), "12");
  EXPECT_EQ(kv.at("lambda"), "-0.5");
  RunConfig cfg;
  cfg.apply(kv);
  EXPECT_EQ(cfg.seed, 12u);
  EXPECT_DOUBLE_EQ(cfg.score.lambda, -0.5);
  EXPECT_DOUBLE_EQ(cfg.score.tau, 0.8);
}

TEST(Config, MalformedLineNamesLine) {
  TempDir dir;
  try {
    read_key_values(dir.write("bad.conf", "seed = 1\nnonsense\n"));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("learning_rate", "0.1"), ConfigError);
  EXPECT_THROW(cfg.set("epochs", "many"), ConfigError);
  EXPECT_THROW(cfg.set("alpha", "0.5x"), ConfigError);
  EXPECT_THROW(cfg.set("pearson", "spearman"), ConfigError);
  EXPECT_THROW(cfg.set("mode", "both"), ConfigError);
  EXPECT_THROW(cfg.set("share_layer_weights", "maybe"), ConfigError);
}

TEST(Config, EveryExposedKeyRoundTrips) {
  RunConfig cfg;
  cfg.set("hidden_dim", "32");
  cfg.set("lambda", "-0.25");
  cfg.set("mode", "hybrid");
  cfg.set("synthetic.community_sizes", "10,20,30");
  EXPECT_EQ(cfg.synth.community_sizes, (std::vector<NodeId>{10, 20, 30}));
  RunConfig copy;
  copy.apply(cfg.to_key_values());
  EXPECT_EQ(copy.encoder.hidden_dim, 32);
  EXPECT_DOUBLE_EQ(copy.score.lambda, -0.25);
  EXPECT_EQ(copy.mode, QueryMode::kHybrid);
  EXPECT_EQ(copy.to_key_values(), cfg.to_key_values());
}

TEST(Dataset, FilesMatchGeneratedGraph) {
  TempDir dir;
  auto cfg = small_run();
  auto data = load_dataset(cfg);
  RunConfig from_files;
  for (std::size_t r = 0; r < data.graph.num_layers(); ++r) {
    const auto layer = dir.path() / ("l" + std::to_string(r));
    const auto feat = dir.path() / ("f" + std::to_string(r));
    write_edge_file(layer, data.graph.layer(r), data.graph.num_nodes());
    write_feature_file(feat, data.graph.features(r));
    from_files.layer_paths.push_back(layer);
    from_files.feature_paths.push_back(feat);
  }
  write_node_sets(dir.path() / "c", data.communities);
  from_files.communities_path = dir.path() / "c";
  auto loaded = load_dataset(from_files);
  EXPECT_EQ(loaded.communities, data.communities);
  for (std::size_t r = 0; r < data.graph.num_layers(); ++r) {
    EXPECT_EQ(loaded.graph.layer(r).edges, data.graph.layer(r).edges);
    EXPECT_EQ(loaded.graph.features(r), data.graph.features(r));  // 17 digits round-trip exactly
  }
}

TEST(Pipeline, IdenticalRunsGiveIdenticalReports) {
  auto cfg = small_run();
  auto data = load_dataset(cfg);
  auto a = run_pipeline(data, cfg);
  auto b = run_pipeline(load_dataset(cfg), cfg);
  EXPECT_EQ(csv_of(a), csv_of(b));
  EXPECT_EQ(a.queries.size(), 6u);
}

TEST(Pipeline, ReportShape) {
  auto cfg = small_run();
  auto r = run_pipeline(load_dataset(cfg), cfg);
  const auto csv = csv_of(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "query_nodes,f1,precision,recall,layer_f1,vote_f1,em_iterations");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  for (const auto& q : r.queries) {
    EXPECT_EQ(q.layers.size(), 2u);
    EXPECT_EQ(q.layer_f1.size(), 2u);
    EXPECT_TRUE(std::includes(q.predicted.begin(), q.predicted.end(), q.query.begin(), q.query.end()));
    EXPECT_GE(q.score.f1, 0.0);
    EXPECT_LE(q.score.f1, 1.0);
  }
  auto s = r.summary();
  EXPECT_EQ(s["queries"], 6);
  EXPECT_TRUE(s["seconds"].contains("train"));
  EXPECT_GE(r.seconds.train, 0.0);
}

TEST(Pipeline, SeparableInstanceIsSolved) {
  RunConfig cfg;
  cfg.synthetic = true;
  cfg.synth.n = 150;
  cfg.synth.community_sizes = {50, 50, 50};
  cfg.synth.layers = 2;
  cfg.synth.p_out = 0.0;
  cfg.synth.layer_noise = 0.0;
  cfg.synth.bump_scale = 3.0;
  cfg.synth.bump_noise = 0.1;
  cfg.encoder.hidden_dim = 64;
  cfg.queries = 15;
  cfg.seed = 2;
  auto r = run_pipeline(load_dataset(cfg), cfg);
  EXPECT_GE(r.mean_f1(), 0.95) << r.summary().dump();
}

TEST(Pipeline, StageFailuresNameTheStage) {
  auto cfg = small_run();
  cfg.loss.epochs = 0;
  try {
    run_pipeline(load_dataset(cfg), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("train stage"), std::string::npos) << e.what();
  }
  cfg = small_run();
  cfg.self_loop_weight = -1.0;
  try {
    run_pipeline(load_dataset(cfg), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("diffuse stage"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, FixedQueriesAreUsed) {
  auto cfg = small_run();
  auto data = load_dataset(cfg);
  std::vector<QueryCase> fixed{{Query{{0, 1}}, 0, data.communities[0]}, {Query{{45}}, 2, data.communities[2]}};
  auto r = run_pipeline(data, cfg, &fixed);
  ASSERT_EQ(r.queries.size(), 2u);
  EXPECT_EQ(r.queries[1].query, (NodeSet{45}));
  EXPECT_EQ(r.queries[1].truth, data.communities[2]);
}

TEST(Outputs, FilesAndRecords) {
  TempDir dir;
  auto cfg = small_run();
  auto r = run_pipeline(load_dataset(cfg), cfg);
  write_outputs(r, dir.path());
  for (const char* f : {"report.csv", "summary.json", "train.csv", "layers.jsonl", "consensus.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
  std::ifstream layers(dir.path() / "layers.jsonl");
  std::string line;
  int count = 0;
  while (std::getline(layers, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("query") && j.contains("layer") && j.contains("nodes") && j.contains("esg"));
    ++count;
  }
  EXPECT_EQ(count, 12);
  std::ifstream consensus(dir.path() / "consensus.jsonl");
  std::getline(consensus, line);
  auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["T"]["in"].size(), 60u);
  EXPECT_EQ(j["T"]["in_softmax"].size(), 60u);
  EXPECT_EQ(j["pi"].size(), 2u);
  EXPECT_TRUE(j.contains("iterations"));
}

TEST(EmStage, TimeGrowsRoughlyLinearlyWithLayers) {
  NodeSet truth;
  for (NodeId v = 0; v < 2000; ++v) truth.push_back(v);
  EMConfig cfg;
  cfg.tolerance = 1e-300;  // always run the full iteration budget
  cfg.max_iterations = 30;
  std::vector<double> seconds;
  for (std::size_t layers : {2u, 4u, 8u}) {
    auto d = synthetic_decisions(truth, 20000, std::vector<double>(layers, 0.2), 3);
    double best = 1e9;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      auto s = run_em(d, cfg);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      EXPECT_EQ(s.iterations, 30);
    }
    seconds.push_back(best);
  }
  // linear in r_max up to a fixed per-node overhead: quadrupling layers costs
  // more than the base run but well under the quadratic factor 16
  EXPECT_GT(seconds[2], seconds[0]);
  EXPECT_LT(seconds[2] / seconds[0], 8.0);
  EXPECT_LT(seconds[1] / seconds[0], 4.0);
}
