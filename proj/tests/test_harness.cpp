#include <gtest/gtest.h>

#include "enmcs/harness.hpp"
#include "support.hpp"

using namespace enmcs;

namespace {

std::vector<NodeSet> blocks(std::initializer_list<int> sizes) {
  std::vector<NodeSet> out;
  NodeId next = 0;
  for (int s : sizes) {
    NodeSet c;
    for (int k = 0; k < s; ++k) c.push_back(next++);
    out.push_back(c);
  }
  return out;
}

bool subset(const NodeSet& a, const NodeSet& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

}  // namespace

TEST(GenerateQueries, TransductiveContainment) {
  auto qs = generate_queries({{0, 1, 2}}, QueryMode::kTransductive, 50, 1);
  ASSERT_EQ(qs.size(), 50u);
  for (const auto& q : qs) {
    EXPECT_TRUE(subset(q.query.nodes, {0, 1, 2}));
    EXPECT_EQ(q.truth, (NodeSet{0, 1, 2}));
  }
}

TEST(GenerateQueries, SizesBetweenOneAndThreeAndAllSeen) {
  auto qs = generate_queries(blocks({10, 10, 1}), QueryMode::kTransductive, 300, 2);
  std::set<std::size_t> sizes;
  for (const auto& q : qs) {
    EXPECT_GE(q.query.nodes.size(), 1u);
    EXPECT_LE(q.query.nodes.size(), 3u);
    EXPECT_LE(q.query.nodes.size(), q.truth.size());
    EXPECT_TRUE(std::is_sorted(q.query.nodes.begin(), q.query.nodes.end()));
    EXPECT_TRUE(subset(q.query.nodes, q.truth));
    sizes.insert(q.query.nodes.size());
  }
  EXPECT_EQ(sizes, (std::set<std::size_t>{1, 2, 3}));
}

TEST(GenerateQueries, DeterministicPerSeed) {
  auto c = blocks({8, 8, 8, 8});
  auto a = generate_queries(c, QueryMode::kHybrid, 40, 7);
  auto b = generate_queries(c, QueryMode::kHybrid, 40, 7);
  auto d = generate_queries(c, QueryMode::kHybrid, 40, 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].query.nodes, b[i].query.nodes);
    EXPECT_EQ(a[i].community, b[i].community);
    differs = differs || a[i].query.nodes != d[i].query.nodes;
  }
  EXPECT_TRUE(differs);
}

TEST(GenerateQueries, InductiveUsesOnlyHeldOutCommunities) {
  auto c = blocks({5, 5, 5, 5, 5});
  std::mt19937_64 rng(3);
  const auto split = split_communities(5, rng);
  EXPECT_EQ(split.train.size(), 3u);  // odd count: extra goes to training
  EXPECT_EQ(split.test.size(), 2u);
  auto qs = generate_queries(c, QueryMode::kInductive, 100, 3);
  std::set<std::size_t> used;
  for (const auto& q : qs) used.insert(q.community);
  EXPECT_EQ(used, std::set<std::size_t>(split.test.begin(), split.test.end()));
}

TEST(GenerateQueries, HybridDrawsFromEverywhere) {
  auto qs = generate_queries(blocks({5, 5, 5, 5}), QueryMode::kHybrid, 200, 4);
  std::set<std::size_t> used;
  for (const auto& q : qs) used.insert(q.community);
  EXPECT_EQ(used.size(), 4u);
}

TEST(GenerateQueries, Errors) {
  EXPECT_THROW(generate_queries({{0, 1}}, QueryMode::kInductive, 3, 1), ConfigError);
  EXPECT_THROW(generate_queries({}, QueryMode::kTransductive, 3, 1), ConfigError);
  EXPECT_THROW(generate_queries({{0}, {}}, QueryMode::kTransductive, 3, 1), ConfigError);
  EXPECT_THROW(parse_query_mode("sideways"), ConfigError);
  EXPECT_EQ(parse_query_mode("inductive"), QueryMode::kInductive);
  EXPECT_STREQ(to_string(QueryMode::kHybrid), "hybrid");
}

TEST(F1Score, Examples) {
  auto same = f1_score({1, 2, 3}, {1, 2, 3});
  EXPECT_EQ(same.f1, 1.0);
  EXPECT_EQ(f1_score({4, 5}, {1, 2, 3}).f1, 0.0);
  auto partial = f1_score({1, 2, 3}, {2, 3, 4});
  EXPECT_NEAR(partial.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(partial.recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(partial.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(f1_score({}, {1}).f1, 0.0);
  EXPECT_THROW(f1_score({1}, {}), ContractError);
}

TEST(F1Score, InvariantUnderRelabeling) {
  std::mt19937_64 rng(5);
  std::vector<NodeId> perm(100);
  std::iota(perm.begin(), perm.end(), 0);
  std::uniform_int_distribution<NodeId> pick(0, 99);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<NodeId> a, b;
    for (int k = 0; k < 30; ++k) a.push_back(pick(rng));
    for (int k = 0; k < 25; ++k) b.push_back(pick(rng));
    auto relabel = [&](const std::vector<NodeId>& xs) {
      std::vector<NodeId> out;
      for (NodeId x : xs) out.push_back(perm[x]);
      return make_node_set(out);
    };
    EXPECT_DOUBLE_EQ(f1_score(make_node_set(a), make_node_set(b)).f1, f1_score(relabel(a), relabel(b)).f1);
  }
}

TEST(Synthetic, NoCrossEdgesWithoutNoise) {
  SyntheticSpec spec;
  spec.n = 90;
  spec.community_sizes = {30, 30, 30};
  spec.p_out = 0.0;
  spec.layer_noise = 0.0;
  auto s = synthetic_multilayer(spec);
  for (const auto& layer : s.graph.layers())
    for (const auto& e : layer.edges) EXPECT_EQ(e.u / 30, e.v / 30);
}

TEST(Synthetic, WithinCommunityEdgesMatchBinomial) {
  // no rewiring, so the within-block count is Binomial(C(100,2), p_in) per layer
  const double pairs = 100.0 * 99.0 / 2.0;
  const double mean = pairs * 0.3, sd = std::sqrt(pairs * 0.3 * 0.7);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.layer_noise = 0.0;
    spec.seed = seed;
    auto s = synthetic_multilayer(spec);
    for (const auto& layer : s.graph.layers()) {
      int within = 0;
      for (const auto& e : layer.edges)
        if (e.u < 100 && e.v < 100) ++within;
      EXPECT_LT(std::abs(within - mean), 3.0 * sd) << "seed " << seed;
    }
  }
}

TEST(Synthetic, RewiringKeepsEdgeCount) {
  SyntheticSpec spec;
  auto noisy = synthetic_multilayer(spec);
  spec.layer_noise = 0.0;
  auto clean = synthetic_multilayer(spec);
  // the same seed draws the same first-layer planted edges before rewiring
  EXPECT_EQ(noisy.graph.layer(0).edges.size(), clean.graph.layer(0).edges.size());
  EXPECT_NE(noisy.graph.layer(0).edges, clean.graph.layer(0).edges);
}

TEST(Synthetic, DeterministicAndShaped) {
  SyntheticSpec spec;
  spec.seed = 9;
  auto a = synthetic_multilayer(spec);
  auto b = synthetic_multilayer(spec);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(a.graph.layer(r).edges, b.graph.layer(r).edges);
    EXPECT_EQ(a.graph.features(r), b.graph.features(r));
  }
  EXPECT_EQ(a.graph.num_nodes(), 300);
  EXPECT_EQ(a.graph.feature_dim(), spec.num_buckets + spec.bump_dim);
  ASSERT_EQ(a.communities.size(), 3u);
  EXPECT_EQ(a.communities[1].front(), 100);
  EXPECT_NE(a.graph.layer(0).edges, a.graph.layer(1).edges);
}

TEST(Synthetic, InfeasibleSpecsRejected) {
  SyntheticSpec spec;
  spec.p_out = 0.5;
  spec.p_in = 0.3;
  EXPECT_THROW(synthetic_multilayer(spec), ConfigError);
  spec = {};
  spec.community_sizes = {100, 100};
  EXPECT_THROW(synthetic_multilayer(spec), ConfigError);
  spec = {};
  spec.layers = 0;
  EXPECT_THROW(synthetic_multilayer(spec), ConfigError);
}

TEST(SyntheticDecisions, NoiselessEqualsTruth) {
  const NodeSet truth{1, 4, 6};
  auto d = synthetic_decisions(truth, 10, {0.0, 0.0, 0.0}, 1);
  for (std::size_t r = 0; r < 3; ++r)
    for (NodeId i = 0; i < 10; ++i) {
      EXPECT_EQ(d.label(i, r), std::binary_search(truth.begin(), truth.end(), i) ? 1 : 0);
      EXPECT_EQ(d(i, 0, r) + d(i, 1, r), 1);
    }
}

TEST(SyntheticDecisions, FlipFrequencyWithinThreeSigma) {
  NodeSet truth;
  for (NodeId v = 0; v < 200; ++v) truth.push_back(v);
  const std::vector<double> rates{0.05, 0.15, 0.25, 0.35};
  auto d = synthetic_decisions(truth, 2000, rates, 17);
  for (std::size_t r = 0; r < rates.size(); ++r) {
    int flips = 0;
    for (NodeId i = 0; i < 2000; ++i) flips += d.label(i, r) != (i < 200 ? 1 : 0);
    const double sd = std::sqrt(2000.0 * rates[r] * (1.0 - rates[r]));
    EXPECT_LT(std::abs(flips - 2000.0 * rates[r]), 3.0 * sd) << "layer " << r;
  }
}

TEST(SyntheticDecisions, UnidentifiableRatesRejected) {
  EXPECT_THROW(synthetic_decisions({0}, 5, {0.5}, 1), ConfigError);
  EXPECT_THROW(synthetic_decisions({0}, 5, {-0.1}, 1), ConfigError);
  EXPECT_THROW(synthetic_decisions({0}, 5, {}, 1), ConfigError);
  EXPECT_THROW(synthetic_decisions({7}, 5, {0.1}, 1), RangeError);
}
