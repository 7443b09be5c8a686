#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "test_util.hpp"

using namespace fedgala;

TEST(TextEncoder, MeanPooling) {
  const TextEncoder enc(10, 4, 7);
  EXPECT_EQ(enc.encode({3}), Vector(enc.table().row(3).transpose()));
  EXPECT_EQ(enc.encode({3, 3, 3}), enc.encode({3}));
  const Vector direct = (enc.table().row(2) + enc.table().row(5)).transpose() / 2.0;
  EXPECT_LT((enc.encode({2, 5}) - direct).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NO_THROW(enc.encode({10}));  // separator
  EXPECT_THROW(enc.encode({11}), Error);
  EXPECT_THROW(enc.encode({}), Error);
}

TEST(TextEncoder, SeededTable) {
  EXPECT_EQ(TextEncoder(10, 4, 7).checksum(), TextEncoder(10, 4, 7).checksum());
  EXPECT_NE(TextEncoder(10, 4, 7).checksum(), TextEncoder(10, 4, 8).checksum());
}

TEST(GraphForward, ZeroInputsGiveZeroRows) {
  const Graph g = fgt::small_graph(4, {{0, 1}, {2, 3}}, 3);
  const EncoderDims dims{2, 3, 4};
  const auto p = init_params(dims, 1, 2);
  const PositionalEncoding pe{Matrix::Zero(4, 2), 2};
  const auto z = graph_forward(p, g, pe).z;
  EXPECT_TRUE(z.isZero(0.0));
}

TEST(GraphForward, IsolatedNodeClosedForm) {
  Rng rng(3);
  const EncoderDims dims{3, 2, 4};
  const auto p = fgt::random_params(dims, rng);
  const Matrix x = gaussian_matrix(1, 2, 1.0, rng);
  const Graph g = fgt::small_graph(1, {}, x);
  const PositionalEncoding pe{gaussian_matrix(1, 3, 1.0, rng), 3};
  const Matrix hs = (Matrix((pe.values * p.structural.w1).array().tanh()) * p.structural.w2).array().tanh();
  const Matrix hm = (Matrix((x * p.semantic.w1).array().tanh()) * p.semantic.w2).array().tanh();
  const Matrix u = hs + hm;
  const Matrix expect = u / u.norm();
  EXPECT_LT((graph_forward(p, g, pe).z - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GraphForward, MatchesDenseOracle) {
  Rng rng(21);
  const EncoderDims dims{3, 4, 5};
  for (int trial = 0; trial < 10; ++trial) {
    const Graph g = fgt::small_graph(7, fgt::random_edges(7, 0.4, rng), gaussian_matrix(7, 4, 1.0, rng));
    const auto pe = random_walk_pe(g, 3);
    const auto p = fgt::random_params(dims, rng);
    const Matrix u = fgt::naive_branch(g, pe.values, p.structural.w1, p.structural.w2) +
                     fgt::naive_branch(g, g.features(), p.semantic.w1, p.semantic.w2);
    const auto z = graph_forward(p, g, pe).z;
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      EXPECT_LT((z.row(i) - u.row(i) / u.row(i).norm()).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(GraphForward, PermutationEquivariant) {
  Rng rng(8);
  const std::size_t n = 8;
  const EncoderDims dims{4, 3, 6};
  const auto p = fgt::random_params(dims, rng);
  const auto edges = fgt::random_edges(n, 0.4, rng);
  const Matrix x = gaussian_matrix(n, 3, 1.0, rng);
  std::vector<NodeId> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Edge> pe_edges;
  Matrix px(n, 3);
  for (auto [u, v] : edges) pe_edges.emplace_back(perm[u], perm[v]);
  for (std::size_t i = 0; i < n; ++i) px.row(perm[i]) = x.row(static_cast<Eigen::Index>(i));
  const Graph a = fgt::small_graph(n, edges, x), b = fgt::small_graph(n, pe_edges, px);
  const auto za = graph_forward(p, a, random_walk_pe(a, 4)).z;
  const auto zb = graph_forward(p, b, random_walk_pe(b, 4)).z;
  for (std::size_t i = 0; i < n; ++i)
    EXPECT_LT((za.row(static_cast<Eigen::Index>(i)) - zb.row(perm[i])).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(GraphForward, ZeroNoiseIgnoresSeed) {
  Rng rng(4);
  const Graph g = fgt::small_graph(5, {{0, 1}, {1, 2}, {3, 4}}, gaussian_matrix(5, 3, 1.0, rng));
  const auto p = init_params({2, 3, 4}, 1, 2);
  const auto pe = random_walk_pe(g, 2);
  EXPECT_EQ(graph_forward(p, g, pe, DisturbanceConfig{0.0, 1}).z, graph_forward(p, g, pe, DisturbanceConfig{0.0, 99}).z);
  EXPECT_NE(graph_forward(p, g, pe, DisturbanceConfig{0.1, 1}).z, graph_forward(p, g, pe, DisturbanceConfig{0.1, 99}).z);
}

TEST(GraphForward, StructuralBranchIgnoresFeatures) {
  Rng rng(4);
  const Graph g = fgt::small_graph(5, {{0, 1}, {1, 2}, {3, 4}}, 3);
  const auto p = init_params({2, 3, 4}, 1, 2);
  const auto pe = random_walk_pe(g, 2);
  const auto a = graph_forward(p, g, pe, gaussian_matrix(5, 3, 1.0, rng));
  const auto b = graph_forward(p, g, pe, gaussian_matrix(5, 3, 5.0, rng));
  EXPECT_EQ(a.cache.h2s, b.cache.h2s);
  EXPECT_NE(a.cache.h2m, b.cache.h2m);
}

TEST(GraphBackward, ZeroAndLinearUpstream) {
  Rng rng(6);
  const Graph g = fgt::small_graph(5, {{0, 1}, {1, 2}, {2, 3}}, gaussian_matrix(5, 3, 1.0, rng));
  const auto p = fgt::random_params({3, 3, 4}, rng);
  const auto fwd = graph_forward(p, g, random_walk_pe(g, 3));
  const auto zero = graph_backward(p, fwd.cache, Matrix::Zero(5, 4));
  EXPECT_TRUE(zero.params.structural.w1.isZero(0.0) && zero.params.structural.w2.isZero(0.0));
  EXPECT_TRUE(zero.params.semantic.w1.isZero(0.0) && zero.params.semantic.w2.isZero(0.0));

  const Matrix up = gaussian_matrix(5, 4, 1.0, rng);
  const auto g1 = graph_backward(p, fwd.cache, up);
  const auto g2 = graph_backward(p, fwd.cache, 2.0 * up);
  EXPECT_LT((g2.params.structural.w1 - 2.0 * g1.params.structural.w1).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((g2.params.semantic.w2 - 2.0 * g1.params.semantic.w2).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GraphBackward, StaleCacheIsRejected) {
  Rng rng(6);
  const Graph g = fgt::small_graph(3, {{0, 1}}, gaussian_matrix(3, 2, 1.0, rng));
  auto p = fgt::random_params({2, 2, 3}, rng);
  const auto fwd = graph_forward(p, g, random_walk_pe(g, 2));
  p.semantic.w1(0, 0) += 1.0;
  EXPECT_THROW(graph_backward(p, fwd.cache, Matrix::Ones(3, 3)), Error);
}

// Linear probe L = <R, Z> makes dL/dZ = R, so central differences of L check
// graph_backward on its own.
TEST(GraphBackward, MatchesCentralDifferences) {
  Rng rng(17);
  const EncoderDims dims{3, 4, 4};
  const Graph g = fgt::small_graph(5, {{0, 1}, {1, 2}, {2, 3}, {1, 4}}, gaussian_matrix(5, 4, 1.0, rng));
  const auto pe = random_walk_pe(g, 3);
  auto p = fgt::random_params(dims, rng);
  const Matrix r = gaussian_matrix(5, 4, 1.0, rng);
  Matrix x = g.features();
  auto loss = [&] { return (graph_forward(p, g, pe, x).z.array() * r.array()).sum(); };
  const auto fwd = graph_forward(p, g, pe, x);
  const auto grads = graph_backward(p, fwd.cache, r);
  EXPECT_LT(fgt::max_rel_err(grads.params.structural.w1, fgt::central_difference(loss, p.structural.w1)), 1e-4);
  EXPECT_LT(fgt::max_rel_err(grads.params.structural.w2, fgt::central_difference(loss, p.structural.w2)), 1e-4);
  EXPECT_LT(fgt::max_rel_err(grads.params.semantic.w1, fgt::central_difference(loss, p.semantic.w1)), 1e-4);
  EXPECT_LT(fgt::max_rel_err(grads.params.semantic.w2, fgt::central_difference(loss, p.semantic.w2)), 1e-4);
  EXPECT_LT(fgt::max_rel_err(grads.features, fgt::central_difference(loss, x)), 1e-4);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const auto p = init_params({8, 16, 32}, 3, 4);
  const auto path = std::filesystem::temp_directory_path() / "fedgala_ckpt_test.ckpt";
  save_checkpoint(p, path);
  EXPECT_EQ(load_checkpoint(path), p);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 1);
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}

TEST(Params, InitIsFloat32AndSeeded) {
  const auto a = init_params({4, 5, 6}, 1, 2);
  EXPECT_EQ(a, init_params({4, 5, 6}, 1, 2));
  EXPECT_NE(a.structural, init_params({4, 5, 6}, 9, 2).structural);
  auto b = a;
  b.round_to_f32();
  EXPECT_EQ(a, b);
}
