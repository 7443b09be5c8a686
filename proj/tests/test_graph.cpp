#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <set>

#include "test_util.hpp"

using namespace fedgala;
using fgt::small_graph;

namespace {

DomainSpec blocks_spec(std::size_t classes, std::size_t per_class, double p_in, double p_out) {
  DomainSpec s;
  s.class_means = Matrix::Identity(static_cast<Eigen::Index>(classes), 4) * 3.0;
  s.noise_std = 1.0;
  s.p_in = p_in;
  s.p_out = p_out;
  s.nodes_per_class.assign(classes, per_class);
  s.token_len = 3;
  s.token_bins = 2;
  s.vocab = static_cast<std::uint32_t>(classes * 6);
  return s;
}

std::size_t count_components(const Graph& g) {
  std::vector<int> seen(g.num_nodes(), 0);
  std::size_t comps = 0;
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    if (seen[s]) continue;
    ++comps;
    std::vector<NodeId> stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (auto v : g.neighbors(u))
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
    }
  }
  return comps;
}

}  // namespace

TEST(Graph, RejectsSelfLoopsDuplicatesAndBadShapes) {
  EXPECT_THROW(small_graph(3, {{1, 1}}), Error);
  EXPECT_THROW(small_graph(3, {{0, 1}, {1, 0}}), Error);
  EXPECT_THROW(small_graph(3, {{0, 3}}), Error);
  EXPECT_THROW(Graph(2, {}, Matrix::Zero(3, 2), {0, 0}, {{0}, {1}}, 1, 4), Error);
  EXPECT_THROW(Graph(2, {}, Matrix::Zero(2, 2), {0, 0}, {{0}, {}}, 1, 4), Error);
  EXPECT_THROW(Graph(2, {}, Matrix::Zero(2, 2), {0, 0}, {{0}, {4}}, 1, 4), Error);
}

TEST(Graph, CanonicalizesEdges) {
  const Graph g = small_graph(4, {{3, 1}, {2, 0}, {0, 1}});
  const std::vector<Edge> expect{{0, 1}, {0, 2}, {1, 3}};
  EXPECT_EQ(g.edges(), expect);
  EXPECT_EQ(g.neighbors(0), (std::vector<NodeId>{1, 2}));
  EXPECT_EQ(g.neighbors(1), (std::vector<NodeId>{0, 3}));
}

TEST(Synthetic, FullBlocksGiveOneComponentPerClass) {
  const Graph g = generate_synthetic(blocks_spec(2, 4, 1.0, 0.0), 3);
  EXPECT_EQ(g.num_nodes(), 8u);
  EXPECT_EQ(g.num_edges(), 12u);
  EXPECT_EQ(count_components(g), 2u);
}

TEST(Synthetic, EdgeCountWithinThreeSigmaOfBinomialMean) {
  const Graph g = generate_synthetic(blocks_spec(3, 30, 0.3, 0.02), 7);
  const double mean = 3 * (30.0 * 29.0 / 2.0) * 0.3 + 3 * 900 * 0.02;
  const double var = 3 * 435 * 0.3 * 0.7 + 2700 * 0.02 * 0.98;
  EXPECT_DOUBLE_EQ(mean, 445.5);
  EXPECT_NEAR(static_cast<double>(g.num_edges()), mean, 3.0 * std::sqrt(var));
}

TEST(Synthetic, SeedDeterminismAndSensitivity) {
  const auto spec = blocks_spec(3, 30, 0.3, 0.02);
  const Graph a = generate_synthetic(spec, 7), b = generate_synthetic(spec, 7), c = generate_synthetic(spec, 8);
  EXPECT_EQ(a.edges(), b.edges());
  EXPECT_EQ(checksum(a.features()), checksum(b.features()));
  EXPECT_EQ(a.tokens(), b.tokens());
  EXPECT_NE(a.edges(), c.edges());
}

TEST(Synthetic, TokensStayInsideTheClassRange) {
  const auto spec = blocks_spec(3, 10, 0.3, 0.02);
  const Graph g = generate_synthetic(spec, 1);
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    ASSERT_EQ(g.tokens()[v].size(), spec.token_len);
    for (std::size_t j = 0; j < spec.token_len; ++j) {
      const auto t = g.tokens()[v][j];
      const auto lo = g.labels()[v] * spec.tokens_per_class() + j * spec.token_bins;
      EXPECT_GE(t, lo);
      EXPECT_LT(t, lo + spec.token_bins);
    }
  }
}

TEST(Synthetic, RejectsDegenerateSpecs) {
  EXPECT_THROW(generate_synthetic(blocks_spec(1, 4, 0.5, 0.1), 1), Error);
  EXPECT_THROW(generate_synthetic(blocks_spec(2, 0, 0.5, 0.1), 1), Error);
  EXPECT_THROW(generate_synthetic(blocks_spec(2, 4, 0.1, 0.1), 1), Error);
}

TEST(AverageDegree, Examples) {
  EXPECT_DOUBLE_EQ(average_degree(small_graph(3, {{0, 1}, {1, 2}, {0, 2}})), 2.0);
  EXPECT_DOUBLE_EQ(average_degree(small_graph(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}})), 1.6);
  EXPECT_DOUBLE_EQ(average_degree(small_graph(5, {})), 0.0);
}

TEST(RandomWalkPE, SingleEdge) {
  const auto pe = random_walk_pe(small_graph(2, {{0, 1}}), 2);
  EXPECT_EQ(pe.values, (Matrix(2, 2) << 0, 1, 0, 1).finished());
}

TEST(RandomWalkPE, Triangle) {
  const auto pe = random_walk_pe(small_graph(3, {{0, 1}, {1, 2}, {0, 2}}), 2);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(pe.values(i, 0), 0.0, 1e-15);
    EXPECT_NEAR(pe.values(i, 1), 0.5, 1e-15);
  }
}

TEST(RandomWalkPE, IsolatedNodeIsZero) {
  const auto pe = random_walk_pe(small_graph(3, {{0, 1}}), 4);
  EXPECT_TRUE(pe.values.row(2).isZero(0.0));
}

TEST(RandomWalkPE, MatchesPathEnumeration) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = small_graph(6, fgt::random_edges(6, 0.4, rng));
    const auto pe = random_walk_pe(g, 5);
    const Matrix oracle = fgt::enumerate_return_probabilities(g, 5);
    EXPECT_LT((pe.values - oracle).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(pe.values.minCoeff(), 0.0);
    EXPECT_LE(pe.values.maxCoeff(), 1.0);
  }
}

TEST(RandomWalkPE, PermutationEquivariant) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 9;
    const auto edges = fgt::random_edges(n, 0.35, rng);
    std::vector<NodeId> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Edge> permuted;
    for (auto [u, v] : edges) permuted.emplace_back(perm[u], perm[v]);
    const auto a = random_walk_pe(small_graph(n, edges), 6);
    const auto b = random_walk_pe(small_graph(n, permuted), 6);
    for (std::size_t i = 0; i < n; ++i)
      EXPECT_LT((a.values.row(static_cast<Eigen::Index>(i)) - b.values.row(perm[i])).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(NeighborSummary, Examples) {
  const Graph iso(1, {}, Matrix::Zero(1, 1), {0}, {{5, 6}}, 1, 10);
  EXPECT_EQ(neighbor_summary(iso, 0), (TokenSeq{5, 6, 10}));

  const Graph g(3, {{0, 2}, {0, 1}}, Matrix::Zero(3, 1), {0, 0, 0}, {{1}, {2}, {3}}, 1, 10);
  EXPECT_EQ(neighbor_summary(g, 0), (TokenSeq{1, 10, 2, 3}));
  EXPECT_EQ(neighbor_summary(g, 0, 3), (TokenSeq{1, 10, 2}));
}

TEST(NeighborSummary, DependsOnlyOnClosedNeighborhood) {
  const Graph a(4, {{0, 1}, {2, 3}}, Matrix::Zero(4, 1), {0, 0, 0, 0}, {{1}, {2}, {3}, {4}}, 1, 10);
  const Graph b(4, {{0, 1}}, Matrix::Zero(4, 1), {0, 0, 0, 0}, {{1}, {2}, {7}, {8}}, 1, 10);
  EXPECT_EQ(neighbor_summary(a, 0), neighbor_summary(b, 0));
}

TEST(Partition, SingleShardIsTheInput) {
  const Graph g = generate_synthetic(blocks_spec(2, 10, 0.4, 0.05), 2);
  const auto shards = partition(g, 1, PartitionStrategy::edge_cut, 1);
  ASSERT_EQ(shards.size(), 1u);
  EXPECT_EQ(shards[0].graph.edges(), g.edges());
  EXPECT_EQ(shards[0].graph.features(), g.features());
  EXPECT_DOUBLE_EQ(shards[0].avg_degree, average_degree(g));
}

TEST(Partition, LabelStratifiedNineNodes) {
  const Graph g = fgt::small_graph(9, {}, Matrix::Zero(9, 1), 3);
  const auto shards = partition(g, 3, PartitionStrategy::label_stratified, 4);
  for (const auto& s : shards) {
    std::multiset<ClassId> classes(s.graph.labels().begin(), s.graph.labels().end());
    EXPECT_EQ(classes, (std::multiset<ClassId>{0, 1, 2}));
  }
}

TEST(Partition, PathSplitDropsTheMiddleEdge) {
  const Graph g = small_graph(4, {{0, 1}, {1, 2}, {2, 3}});
  const auto shards = partition_by_assignment(g, {0, 0, 1, 1}, 2);
  EXPECT_EQ(shards[0].graph.num_edges() + shards[1].graph.num_edges(), 2u);
  EXPECT_EQ(shards[0].global_ids, (std::vector<NodeId>{0, 1}));
  EXPECT_EQ(shards[1].global_ids, (std::vector<NodeId>{2, 3}));
}

TEST(Partition, DisjointExhaustiveAndNeverDenser) {
  Rng rng(9);
  for (std::size_t n = 2; n <= 50; n += 4) {
    const Graph g = small_graph(n, fgt::random_edges(n, 0.15, rng));
    for (auto strategy : {PartitionStrategy::edge_cut, PartitionStrategy::label_stratified})
      for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::min<std::size_t>(5, n)}) {
        const auto shards = partition(g, k, strategy, n * 31 + k);
        std::vector<int> hits(n, 0);
        std::size_t kept = 0;
        for (const auto& s : shards) {
          for (auto v : s.global_ids) ++hits[v];
          kept += s.graph.num_edges();
          if (s.graph.num_nodes() > 0) {
            EXPECT_DOUBLE_EQ(s.avg_degree, 2.0 * static_cast<double>(s.graph.num_edges()) / static_cast<double>(s.graph.num_nodes()));
          }
        }
        EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
        EXPECT_LE(kept, g.num_edges());
      }
  }
}

TEST(Partition, EdgeCutKeepsExactlyIntraShardEdges) {
  const Graph g = generate_synthetic(blocks_spec(3, 12, 0.4, 0.05), 3);
  const auto shards = partition(g, 3, PartitionStrategy::edge_cut, 5);
  std::vector<std::size_t> part(g.num_nodes());
  for (std::size_t s = 0; s < shards.size(); ++s)
    for (auto v : shards[s].global_ids) part[v] = s;
  std::size_t intra = 0;
  for (auto [u, v] : g.edges()) intra += part[u] == part[v];
  std::size_t kept = 0;
  for (const auto& s : shards) {
    kept += s.graph.num_edges();
    for (auto [u, v] : s.graph.edges()) {
      const Edge orig{s.global_ids[u], s.global_ids[v]};
      EXPECT_TRUE(std::binary_search(g.edges().begin(), g.edges().end(), orig));
    }
  }
  EXPECT_EQ(kept, intra);
}

TEST(Partition, TooManyPartsIsAnError) {
  EXPECT_THROW(partition(small_graph(2, {}), 3, PartitionStrategy::edge_cut, 1), Error);
  EXPECT_THROW(partition(small_graph(2, {}), 0, PartitionStrategy::edge_cut, 1), Error);
}

TEST(Splits, DisjointAndStratified) {
  const Graph g = generate_synthetic(blocks_spec(3, 20, 0.3, 0.02), 4);
  auto shards = partition(g, 1, PartitionStrategy::edge_cut, 1);
  auto& s = shards[0];
  std::set<NodeId> all;
  for (const auto* split : {&s.train, &s.val, &s.test})
    for (auto v : *split) EXPECT_TRUE(all.insert(v).second);
  EXPECT_EQ(all.size(), 60u);
  EXPECT_EQ(s.train.size(), 36u);
  EXPECT_EQ(s.val.size(), 12u);

  SplitConfig few;
  few.few_shot = 2;
  assign_splits(s, few, 3);
  std::vector<int> per_class(3, 0);
  for (auto v : s.train) ++per_class[s.graph.labels()[v]];
  EXPECT_EQ(per_class, (std::vector<int>{2, 2, 2}));
  EXPECT_EQ(s.val.size(), 6u);
  EXPECT_EQ(s.test.size(), 48u);
}

TEST(GraphIo, RoundTrip) {
  const auto spec = blocks_spec(2, 5, 0.5, 0.1);
  Graph g = generate_synthetic(spec, 3);
  // Features must be float32-representable to round-trip exactly.
  Matrix f = g.features();
  round_to_f32(f);
  g = Graph(g.num_nodes(), g.edges(), f, g.labels(), g.tokens(), g.num_classes(), g.vocab(), 1);
  const auto dir = std::filesystem::temp_directory_path() / "fedgala_graph_io";
  std::filesystem::remove_all(dir);
  save_graph(g, dir);
  const Graph h = load_graph(dir);
  EXPECT_EQ(h.edges(), g.edges());
  EXPECT_EQ(h.features(), g.features());
  EXPECT_EQ(h.labels(), g.labels());
  EXPECT_EQ(h.tokens(), g.tokens());
  EXPECT_EQ(h.domain_id(), 1u);
  EXPECT_EQ(h.vocab(), g.vocab());
  std::filesystem::remove_all(dir);
}
