#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include <unistd.h>

#include "astbridge/gmn.hpp"
#include "astbridge/random.hpp"

using namespace astbridge;
using namespace astbridge::diff;

namespace {

GmnConfig small_config(std::size_t half = 2, std::size_t rounds = 2) {
  GmnConfig c;
  c.type_dim = half;
  c.attr_dim = half;
  c.rounds = rounds;
  return c;
}

UnifiedAst random_graph(Rng& rng, std::size_t n, std::size_t labels) {
  UnifiedAst g;
  g.graph_id = "g" + std::to_string(rng.next() % 100000);
  const char* words[] = {"sum", "total", "NUM", "value", "idx"};
  for (std::size_t i = 0; i < n; ++i) {
    UnifiedNode node{i, static_cast<LabelId>(rng.uniform_index(labels)), {}, false, false};
    const auto k = rng.uniform_index(3);
    for (std::size_t j = 0; j < k; ++j) node.attr_tokens.push_back(words[rng.uniform_index(5)]);
    g.nodes.push_back(node);
  }
  std::set<Edge> edges;
  for (std::size_t i = 1; i < n; ++i) edges.insert(Edge::of(i, rng.uniform_index(i)));
  for (std::size_t k = rng.uniform_index(n); k > 0; --k) {
    const auto a = rng.uniform_index(n), b = rng.uniform_index(n);
    if (a != b) edges.insert(Edge::of(a, b));
  }
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

Vocabulary small_vocab() { return Vocabulary::from_tokens({"sum", "total", "NUM", "value"}); }

}  // namespace

TEST(Gmn, AttentionByHand) {
  auto model = GmnModel<double>::initialize(small_config(1), 3, small_vocab(), 1);
  model[Param::attention] = Tensor<double>({4, 1}, {0.5, 0.0, 0.0, 2.0});
  Tape<double> t;
  auto m = bind(model, t, false);
  auto self = t.constant(Tensor<double>({1, 2}, {1.0, 0.0}));
  auto other = t.constant(Tensor<double>({2, 2}, {0.0, 1.0, 0.0, -1.0}));
  auto a = attend(m, self, other);
  // scores 2.5 and -1.5, the negative one scaled by 0.2
  const double w1 = 1.0 / (1.0 + std::exp(-0.3 - 2.5));
  EXPECT_NEAR(a.weights.value()[0], w1, 1e-12);
  EXPECT_NEAR(a.weights.value()[1], 1.0 - w1, 1e-12);
  EXPECT_NEAR(a.context.value()[0], 0.0, 1e-12);
  EXPECT_NEAR(a.context.value()[1], 2 * w1 - 1.0, 1e-12);
}

TEST(Gmn, PoolingByHand) {
  auto model = GmnModel<double>::initialize(small_config(1), 3, small_vocab(), 1);
  model[Param::pool_weight] = Tensor<double>({2, 1}, {std::log(3.0), 0.0});
  Tape<double> t;
  auto m = bind(model, t, false);
  auto p = pool(m, t.constant(Tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0})));
  EXPECT_NEAR(p.weights.value()[0], 0.75, 1e-12);
  EXPECT_NEAR(p.weights.value()[1], 0.25, 1e-12);
  EXPECT_NEAR(p.vector.value()[0], 0.75, 1e-12);
  EXPECT_NEAR(p.vector.value()[1], 0.25, 1e-12);
}

TEST(Gmn, MeanAdjacency) {
  UnifiedAst g;
  for (NodeId i = 0; i < 4; ++i) g.nodes.push_back({i, 0, {}, false, false});
  g.edges = {Edge::of(0, 1), Edge::of(1, 2)};
  auto a = mean_adjacency<double>(g);
  EXPECT_DOUBLE_EQ(a(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(a(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(a(1, 2), 0.5);
  EXPECT_DOUBLE_EQ(a(1, 1), 0.0);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(a(3, j), 0.0);
}

TEST(Gmn, GruWithZeroWeightsHalvesNeighborMean) {
  auto model = GmnModel<double>::initialize(small_config(1), 3, small_vocab(), 1);
  for (auto p : {Param::gru_w_reset, Param::gru_u_reset, Param::gru_w_update, Param::gru_u_update,
                 Param::gru_w_candidate, Param::gru_u_candidate})
    model[p].fill(0.0);
  Tape<double> t;
  auto m = bind(model, t, false);
  auto z = t.constant(Tensor<double>({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  auto c = t.constant(Tensor<double>(2, 2));
  auto adj = t.constant(Tensor<double>({2, 2}, {0.0, 1.0, 1.0, 0.0}));
  // gates are all 0.5 and the candidate is 0, so z' = n / 2
  auto next = propagate_round(m, z, c, adj);
  EXPECT_EQ(next.value(), Tensor<double>({2, 2}, {1.5, 2.0, 0.5, 1.0}));
}

TEST(Gmn, SelfSimilarityAndSymmetry) {
  Rng rng(21);
  auto model = GmnModel<double>::initialize(small_config(4, 3), 6, small_vocab(), 5);
  for (int rep = 0; rep < 20; ++rep) {
    auto g1 = random_graph(rng, 1 + rng.uniform_index(30), 6);
    auto g2 = random_graph(rng, 1 + rng.uniform_index(30), 6);
    EXPECT_NEAR(pair_similarity(model, g1, g1), 1.0, 1e-6);
    const double s12 = pair_similarity(model, g1, g2), s21 = pair_similarity(model, g2, g1);
    EXPECT_NEAR(s12, s21, 1e-6);
    EXPECT_LE(std::abs(s12), 1.0 + 1e-9);
  }
}

TEST(Gmn, AttentionAndPoolingAreDistributions) {
  Rng rng(22);
  auto model = GmnModel<double>::initialize(small_config(3, 3), 5, small_vocab(), 6);
  auto g1 = random_graph(rng, 12, 5), g2 = random_graph(rng, 7, 5);
  Tape<double> t;
  auto m = bind(model, t, false);
  EncodeTrace<double> trace;
  encode_pair(m, g1, g2, false, 0, &trace);
  ASSERT_EQ(trace.attention1.size(), 3u);
  auto rows_sum_to_one = [](const Tensor<double>& w) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = 0;
      for (double v : w.row_span(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  };
  for (const auto& w : trace.attention1) {
    EXPECT_EQ(w.rows(), 12u);
    EXPECT_EQ(w.cols(), 7u);
    rows_sum_to_one(w);
  }
  for (const auto& w : trace.attention2) rows_sum_to_one(w);
  rows_sum_to_one(trace.pool1);
  rows_sum_to_one(trace.pool2);
}

TEST(Gmn, PairGradientMatchesDifferences) {
  Rng rng(23);
  auto model = GmnModel<double>::initialize(small_config(2, 2), 4, small_vocab(), 7);
  // Zero biases put ReLU and LayerNorm on their kinks, and small embeddings
  // make every pair look alike (similarity ~1, gradients at roundoff level).
  // Check at a generic point instead.
  for (auto p : {Param::type_embedding, Param::attr_embedding, Param::mlp_b1, Param::mlp_b2, Param::ln_bias,
                 Param::gru_b_reset, Param::gru_b_update, Param::gru_b_candidate})
    for (auto& v : model[p].data()) v = rng.normal();
  for (auto& v : model[Param::ln_gain].data()) v = rng.uniform(0.5, 1.5);
  auto g1 = random_graph(rng, 3, 4), g2 = random_graph(rng, 3, 4);
  Tape<double> t;
  auto m = bind(model, t, true);
  t.backward(encode_pair(m, g1, g2, false).similarity);
  const auto grads = collect_gradients(m);
  // relative error per parameter tensor, in norm; single entries near 1e-7
  // sit at the difference quotient's roundoff floor
  const double h = 1e-6;
  double worst = 0;
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    double diff = 0, nn = 0, na = 0;
    for (std::size_t i = 0; i < model.params.tensors[p].size(); ++i) {
      auto up = model, down = model;
      up.params.tensors[p][i] += h;
      down.params.tensors[p][i] -= h;
      const double num = (pair_similarity(up, g1, g2) - pair_similarity(down, g1, g2)) / (2 * h);
      const double ana = grads.tensors[p][i];
      diff += (num - ana) * (num - ana);
      nn += num * num;
      na += ana * ana;
    }
    if (std::max(nn, na) > 0) worst = std::max(worst, std::sqrt(diff / std::max(nn, na)));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Gmn, EvalIgnoresSeedTrainUsesIt) {
  Rng rng(24);
  auto model = GmnModel<double>::initialize(small_config(3, 2), 4, small_vocab(), 8);
  auto g1 = random_graph(rng, 9, 4), g2 = random_graph(rng, 9, 4);
  EXPECT_EQ(encode_pair(model, g1, g2, false, 1).similarity, encode_pair(model, g1, g2, false, 2).similarity);
  EXPECT_EQ(encode_pair(model, g1, g2, true, 1).similarity, encode_pair(model, g1, g2, true, 1).similarity);
  EXPECT_NE(encode_pair(model, g1, g2, true, 1).similarity, encode_pair(model, g1, g2, true, 2).similarity);
}

TEST(Gmn, InitializationIsSeeded) {
  auto a = GmnModel<float>::initialize(small_config(), 4, small_vocab(), 3);
  auto b = GmnModel<float>::initialize(small_config(), 4, small_vocab(), 3);
  auto c = GmnModel<float>::initialize(small_config(), 4, small_vocab(), 4);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, c.params);
  for (float v : a[Param::attr_embedding].row_span(Vocabulary::kPad)) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(a.params.size(), static_cast<std::size_t>(Param::count));
}

TEST(Gmn, RejectsUnknownLabelAndEmptyGraph) {
  Rng rng(25);
  auto model = GmnModel<double>::initialize(small_config(), 4, small_vocab(), 9);
  auto g = random_graph(rng, 5, 4);
  auto bad = g;
  bad.nodes[2].label = 4;
  EXPECT_THROW(pair_similarity(model, g, bad), UnknownLabel);
  UnifiedAst empty;
  EXPECT_THROW(pair_similarity(model, g, empty), MalformedTree);
}

TEST(Vocab, MarkersOovAndStoredOrder) {
  auto v = Vocabulary::from_tokens({"zeta", "alpha", "zeta"});
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.tokens()[0], "<pad>");
  EXPECT_EQ(v.index_of("alpha"), 2u);
  EXPECT_EQ(v.index_of("missing"), Vocabulary::kOov);
  EXPECT_EQ(Vocabulary::from_list(v.tokens()), v);
  EXPECT_EQ(Vocabulary::from_list(v.tokens()).hash(), v.hash());
  EXPECT_NE(Vocabulary::from_tokens({"alpha"}).hash(), v.hash());
}

TEST(Gmn, SaveLoadKeepsScores) {
  const auto dir = std::filesystem::temp_directory_path() / ("astbridge_gmn_" + std::to_string(::getpid()));
  Rng rng(26);
  auto cfg = small_config(3, 2);
  cfg.cross_attention = false;
  auto model = GmnModel<float>::initialize(cfg, 5, small_vocab(), 10);
  save_model(dir / "m.bin", model, model_sidecar(model, "abc"));
  auto back = load_model<float>(dir / "m.bin");
  EXPECT_EQ(back.params, model.params);
  EXPECT_EQ(back.vocab, model.vocab);
  EXPECT_EQ(back.type_rows, 5u);
  EXPECT_FALSE(back.config.cross_attention);
  auto g1 = random_graph(rng, 8, 5), g2 = random_graph(rng, 6, 5);
  EXPECT_EQ(pair_similarity(back, g1, g2), pair_similarity(model, g1, g2));
  EXPECT_EQ(read_json_file(dir / "m.bin.json").at("label_set_hash"), "abc");
  std::filesystem::remove_all(dir);
}
