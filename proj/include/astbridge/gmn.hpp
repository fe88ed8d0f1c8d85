#pragma once

// Graph matching network over unified ASTs. Both graphs of a pair are encoded
// jointly: node features from label and attribute embeddings pass through an
// MLP, then T rounds of cross-graph attention and a GRU update driven by the
// neighbor mean, then attention pooling gives one vector per graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "astbridge/diff/adam.hpp"
#include "astbridge/diff/checkpoint.hpp"
#include "astbridge/diff/tape.hpp"
#include "astbridge/error.hpp"
#include "astbridge/hash.hpp"
#include "astbridge/random.hpp"
#include "astbridge/structural_enhancement.hpp"

namespace astbridge {

struct GmnConfig {
  std::size_t type_dim = 50;
  std::size_t attr_dim = 50;
  std::size_t rounds = 4;
  double dropout = 0.1;
  double leaky_slope = 0.2;
  bool cross_attention = true;

  std::size_t hidden_dim() const { return type_dim + attr_dim; }
};

inline json to_json(const GmnConfig& c) {
  return {{"d_t", c.type_dim},     {"d_a", c.attr_dim},         {"T", c.rounds},
          {"dropout", c.dropout},  {"leaky_slope", c.leaky_slope}, {"cross_attention", c.cross_attention}};
}

inline GmnConfig gmn_config_from_json(const json& j) {
  GmnConfig c;
  c.type_dim = j.value("d_t", c.type_dim);
  c.attr_dim = j.value("d_a", c.attr_dim);
  c.rounds = j.value("T", c.rounds);
  c.dropout = j.value("dropout", c.dropout);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.cross_attention = j.value("cross_attention", c.cross_attention);
  return c;
}

// Embedding tables start small so Adam's fixed-size steps reshape them quickly.
inline constexpr double kEmbeddingInitStd = 0.1;

// Attribute token vocabulary. Row 0 is PAD, row 1 is OOV.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kOov = 1;

  Vocabulary() : tokens_{"<pad>", "<oov>"} {}

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    std::set<std::string> uniq(tokens.begin(), tokens.end());
    for (const auto& t : uniq) v.add(t);
    return v;
  }

  static Vocabulary from_graphs(std::span<const UnifiedAst> graphs) {
    std::vector<std::string> all;
    for (const auto& g : graphs)
      for (const auto& n : g.nodes) all.insert(all.end(), n.attr_tokens.begin(), n.attr_tokens.end());
    return from_tokens(all);
  }

  // Stored order; the first two entries are the PAD and OOV markers.
  static Vocabulary from_list(const std::vector<std::string>& stored) {
    Vocabulary v;
    for (std::size_t i = 2; i < stored.size(); ++i) v.add(stored[i]);
    return v;
  }

  std::size_t index_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kOov : it->second;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::string hash() const {
    std::string joined;
    for (const auto& t : tokens_) joined += t + '\n';
    return hash_string(joined);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(const std::string& t) {
    if (index_.contains(t)) return;
    index_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

// Parameter slots, in checkpoint order.
enum class Param : std::size_t {
  type_embedding,
  attr_embedding,
  mlp_w1,
  mlp_b1,
  mlp_w2,
  mlp_b2,
  ln_gain,
  ln_bias,
  attention,
  gru_w_reset,
  gru_u_reset,
  gru_b_reset,
  gru_w_update,
  gru_u_update,
  gru_b_update,
  gru_w_candidate,
  gru_u_candidate,
  gru_b_candidate,
  pool_weight,
  count
};

inline constexpr const char* kParamNames[] = {
    "type_embedding", "attr_embedding", "mlp.w1",        "mlp.b1",        "mlp.w2",           "mlp.b2",
    "layer_norm.gain", "layer_norm.bias", "attention.a", "gru.w_reset",   "gru.u_reset",      "gru.b_reset",
    "gru.w_update",   "gru.u_update",    "gru.b_update", "gru.w_candidate", "gru.u_candidate", "gru.b_candidate",
    "pool.w"};

template <class Real>
struct GmnModel {
  using Mat = diff::Tensor<Real>;

  GmnConfig config;
  std::size_t type_rows = 0;  // universal labels incl. Other, plus the global root
  Vocabulary vocab;
  diff::ParameterSet<Real> params;

  const Mat& operator[](Param p) const { return params.tensors[static_cast<std::size_t>(p)]; }
  Mat& operator[](Param p) { return params.tensors[static_cast<std::size_t>(p)]; }

  static GmnModel initialize(const GmnConfig& cfg, std::size_t type_rows, Vocabulary vocab, std::uint64_t seed) {
    GmnModel m;
    m.config = cfg;
    m.type_rows = type_rows;
    m.vocab = std::move(vocab);
    Rng rng(seed);
    const std::size_t d = cfg.hidden_dim();
    auto normal = [&](std::size_t r, std::size_t c, double sd) {
      Mat t(r, c);
      for (auto& v : t.data()) v = static_cast<Real>(sd * rng.normal());
      return t;
    };
    auto xavier = [&](std::size_t r, std::size_t c) {
      const double bound = std::sqrt(6.0 / static_cast<double>(r + c));
      Mat t(r, c);
      for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
      return t;
    };
    auto add = [&](Param p, Mat t) { m.params.add(kParamNames[static_cast<std::size_t>(p)], std::move(t)); };
    add(Param::type_embedding, normal(type_rows, cfg.type_dim, kEmbeddingInitStd));
    Mat attr = normal(m.vocab.size(), cfg.attr_dim, kEmbeddingInitStd);
    for (auto& v : attr.row_span(Vocabulary::kPad)) v = Real(0);
    add(Param::attr_embedding, std::move(attr));
    add(Param::mlp_w1, xavier(d, d));
    add(Param::mlp_b1, Mat(1, d));
    add(Param::mlp_w2, xavier(d, d));
    add(Param::mlp_b2, Mat(1, d));
    add(Param::ln_gain, Mat(1, d, Real(1)));
    add(Param::ln_bias, Mat(1, d));
    add(Param::attention, xavier(2 * d, 1));
    for (int gate = 0; gate < 3; ++gate) {
      add(static_cast<Param>(static_cast<std::size_t>(Param::gru_w_reset) + 3 * gate), xavier(2 * d, d));
      add(static_cast<Param>(static_cast<std::size_t>(Param::gru_u_reset) + 3 * gate), xavier(d, d));
      add(static_cast<Param>(static_cast<std::size_t>(Param::gru_b_reset) + 3 * gate), Mat(1, d));
    }
    add(Param::pool_weight, xavier(d, 1));
    return m;
  }
};

// Parameters bound as leaves of one computation record.
template <class Real>
struct BoundModel {
  const GmnModel<Real>* model = nullptr;
  diff::Tape<Real>* tape = nullptr;
  std::vector<diff::Var<Real>> vars;

  diff::Var<Real> operator[](Param p) const { return vars[static_cast<std::size_t>(p)]; }
};

template <class Real>
BoundModel<Real> bind(const GmnModel<Real>& model, diff::Tape<Real>& tape, bool requires_grad) {
  BoundModel<Real> b{&model, &tape, {}};
  for (const auto& t : model.params.tensors) b.vars.push_back(tape.parameter(t, requires_grad));
  return b;
}

template <class Real>
diff::GradientSet<Real> collect_gradients(const BoundModel<Real>& b) {
  diff::GradientSet<Real> g;
  for (const auto& v : b.vars) g.tensors.push_back(b.tape->grad(v.index));
  return g;
}

// ---------------------------------------------------------------------------
// Encoder stages

// Initial node states: [type embedding ; mean attribute embedding] through
// the two-layer MLP, LayerNorm (with gain and bias) and dropout.
template <class Real>
diff::Var<Real> init_node_features(const BoundModel<Real>& m, const UnifiedAst& g, bool train, std::uint64_t seed) {
  using namespace diff;
  const auto& model = *m.model;
  std::vector<std::size_t> labels;
  std::vector<std::vector<std::size_t>> tokens;
  labels.reserve(g.nodes.size());
  for (const auto& n : g.nodes) {
    if (n.label >= model.type_rows) {
      throw UnknownLabel("node " + std::to_string(n.id) + " of " + g.graph_id + " has label " +
                         std::to_string(n.label) + " but the model knows " + std::to_string(model.type_rows));
    }
    labels.push_back(n.label);
    std::vector<std::size_t> ids;
    for (const auto& t : n.attr_tokens) ids.push_back(model.vocab.index_of(t));
    tokens.push_back(std::move(ids));
  }
  auto type_part = gather_rows(m[Param::type_embedding], std::move(labels));
  auto attr_part = gather_mean_rows(m[Param::attr_embedding], std::move(tokens));
  auto h0 = concat_cols(type_part, attr_part);
  auto hidden = relu(add_rowwise(matmul(h0, m[Param::mlp_w1]), m[Param::mlp_b1]));
  auto out = relu(add_rowwise(matmul(hidden, m[Param::mlp_w2]), m[Param::mlp_b2]));
  auto z0 = add_rowwise(mul_rowwise(layer_norm(out), m[Param::ln_gain]), m[Param::ln_bias]);
  return dropout(z0, model.config.dropout, train, seed);
}

template <class Real>
struct Attention {
  diff::Var<Real> context;  // N_self x d
  diff::Var<Real> weights;  // N_self x N_other, rows sum to 1
};

// Each row of `self` attends over every row of `other`:
//   e_ij = LeakyReLU(a^T [z_i ; z_j]),  alpha = softmax_j(e),  c_i = sum_j alpha_ij z_j
template <class Real>
Attention<Real> attend(const BoundModel<Real>& m, diff::Var<Real> self, diff::Var<Real> other) {
  using namespace diff;
  const std::size_t d = self.cols();
  auto a_self = slice_rows(m[Param::attention], 0, d);
  auto a_other = slice_rows(m[Param::attention], d, d);
  auto scores = outer_add(matmul(self, a_self), matmul(other, a_other));
  auto weights = softmax_rows(leaky_relu(scores, static_cast<Real>(m.model->config.leaky_slope)));
  return {matmul(weights, other), weights};
}

template <class Real>
std::pair<Attention<Real>, Attention<Real>> cross_attention(const BoundModel<Real>& m, diff::Var<Real> z1,
                                                            diff::Var<Real> z2) {
  return {attend(m, z1, z2), attend(m, z2, z1)};
}

// Row-normalized adjacency: row i holds 1/|N(i)| at each neighbor, zeros
// for an isolated node.
template <class Real>
diff::Tensor<Real> mean_adjacency(const UnifiedAst& g) {
  diff::Tensor<Real> a(g.nodes.size(), g.nodes.size());
  const auto adj = g.adjacency();
  for (std::size_t i = 0; i < adj.size(); ++i) {
    if (adj[i].empty()) continue;
    const Real w = Real(1) / static_cast<Real>(adj[i].size());
    for (NodeId j : adj[i]) a(i, j) += w;
  }
  return a;
}

// One GRU update with input u_i = [z_i ; c_i] and hidden state n_i, the
// neighbor mean of z:
//   r = sig(W_r u + U_r n + b_r), s = sig(W_s u + U_s n + b_s)
//   h = tanh(W_h u + U_h (r * n) + b_h),  z' = (1 - s) * n + s * h
template <class Real>
diff::Var<Real> propagate_round(const BoundModel<Real>& m, diff::Var<Real> z, diff::Var<Real> context,
                                diff::Var<Real> mean_adj) {
  using namespace diff;
  auto u = concat_cols(z, context);
  auto n = matmul(mean_adj, z);
  auto gate = [&](Param w, Param uu, Param b, Var<Real> hidden) {
    return add_rowwise(add(matmul(u, m[w]), matmul(hidden, m[uu])), m[b]);
  };
  auto reset = sigmoid(gate(Param::gru_w_reset, Param::gru_u_reset, Param::gru_b_reset, n));
  auto update = sigmoid(gate(Param::gru_w_update, Param::gru_u_update, Param::gru_b_update, n));
  auto candidate = tanh(gate(Param::gru_w_candidate, Param::gru_u_candidate, Param::gru_b_candidate, mul(reset, n)));
  return add(n, mul(update, sub(candidate, n)));
}

template <class Real>
struct Pooled {
  diff::Var<Real> vector;   // 1 x d
  diff::Var<Real> weights;  // 1 x N, sums to 1
};

// gamma = softmax over nodes of w^T z_i; v = sum_i gamma_i z_i
template <class Real>
Pooled<Real> pool(const BoundModel<Real>& m, diff::Var<Real> z) {
  using namespace diff;
  auto weights = softmax_rows(transpose(matmul(z, m[Param::pool_weight])));
  return {matmul(weights, z), weights};
}

// Per-round attention matrices and final pooling weights, for inspection.
template <class Real>
struct EncodeTrace {
  std::vector<diff::Tensor<Real>> attention1, attention2;
  diff::Tensor<Real> pool1, pool2;
};

template <class Real>
struct PairForward {
  diff::Var<Real> v1, v2;  // graph vectors, 1 x d
  diff::Var<Real> z1, z2;  // final node states
  diff::Var<Real> similarity;
};

template <class Real>
PairForward<Real> encode_pair(const BoundModel<Real>& m, const UnifiedAst& g1, const UnifiedAst& g2, bool train,
                              std::uint64_t seed = 0, EncodeTrace<Real>* trace = nullptr) {
  using namespace diff;
  if (g1.nodes.empty() || g2.nodes.empty()) throw MalformedTree("encode_pair on an empty graph");
  auto& tape = *m.tape;
  auto z1 = init_node_features(m, g1, train, mix64(seed, 1));
  auto z2 = init_node_features(m, g2, train, mix64(seed, 2));
  auto adj1 = tape.constant(mean_adjacency<Real>(g1));
  auto adj2 = tape.constant(mean_adjacency<Real>(g2));
  const std::size_t d = m.model->config.hidden_dim();
  for (std::size_t t = 0; t < m.model->config.rounds; ++t) {
    Var<Real> c1, c2;
    if (m.model->config.cross_attention) {
      auto [a1, a2] = cross_attention(m, z1, z2);
      c1 = a1.context;
      c2 = a2.context;
      if (trace) {
        trace->attention1.push_back(a1.weights.value());
        trace->attention2.push_back(a2.weights.value());
      }
    } else {
      c1 = tape.constant(Tensor<Real>(g1.nodes.size(), d));
      c2 = tape.constant(Tensor<Real>(g2.nodes.size(), d));
    }
    auto next1 = propagate_round(m, z1, c1, adj1);
    auto next2 = propagate_round(m, z2, c2, adj2);
    z1 = next1;
    z2 = next2;
  }
  auto p1 = pool(m, z1);
  auto p2 = pool(m, z2);
  if (trace) {
    trace->pool1 = p1.weights.value();
    trace->pool2 = p2.weights.value();
  }
  return {p1.vector, p2.vector, z1, z2, cosine_sim(p1.vector, p2.vector)};
}

struct GraphEmbedding {
  std::string graph_id;
  std::vector<float> vector;
};

struct PairEncoding {
  GraphEmbedding v1, v2;
  diff::Tensor<float> node_states1, node_states2;
  double similarity = 0.0;
};

// Evaluation-mode (unless train is set) encoding without gradients.
template <class Real>
PairEncoding encode_pair(const GmnModel<Real>& model, const UnifiedAst& g1, const UnifiedAst& g2, bool train = false,
                         std::uint64_t seed = 0) {
  diff::Tape<Real> tape;
  auto m = bind(model, tape, false);
  auto f = encode_pair(m, g1, g2, train, seed);
  auto to_float = [](const diff::Tensor<Real>& t) {
    std::vector<float> v(t.data().begin(), t.data().end());
    return diff::Tensor<float>(t.shape(), std::move(v));
  };
  PairEncoding out;
  out.v1 = {g1.graph_id, std::vector<float>(f.v1.value().data().begin(), f.v1.value().data().end())};
  out.v2 = {g2.graph_id, std::vector<float>(f.v2.value().data().begin(), f.v2.value().data().end())};
  out.node_states1 = to_float(f.z1.value());
  out.node_states2 = to_float(f.z2.value());
  out.similarity = static_cast<double>(f.similarity.item());
  return out;
}

template <class Real>
double pair_similarity(const GmnModel<Real>& model, const UnifiedAst& g1, const UnifiedAst& g2) {
  diff::Tape<Real> tape;
  auto m = bind(model, tape, false);
  return static_cast<double>(encode_pair(m, g1, g2, false).similarity.item());
}

// Standalone embedding of one graph: the graph encoded against itself.
template <class Real>
GraphEmbedding embed_graph(const GmnModel<Real>& model, const UnifiedAst& g) {
  return encode_pair(model, g, g).v1;
}

// ---------------------------------------------------------------------------
// Persistence: <path> holds the binary parameters, <path>.json the sidecar.

template <class Real>
json model_sidecar(const GmnModel<Real>& model, const std::string& label_set_hash) {
  json j = to_json(model.config);
  j["type_rows"] = model.type_rows;
  j["label_set_hash"] = label_set_hash;
  j["vocab_hash"] = model.vocab.hash();
  j["vocab"] = model.vocab.tokens();
  return j;
}

template <class Real>
void save_model(const std::filesystem::path& path, const GmnModel<Real>& model, json sidecar) {
  diff::save_checkpoint(path, model.params);
  write_json_file(path.string() + ".json", sidecar, 2);
}

template <class Real>
GmnModel<Real> load_model(const std::filesystem::path& path) {
  const json side = read_json_file(path.string() + ".json");
  GmnModel<Real> m;
  m.config = gmn_config_from_json(side);
  m.type_rows = side.at("type_rows").get<std::size_t>();
  m.vocab = Vocabulary::from_list(side.at("vocab").get<std::vector<std::string>>());
  m.params = diff::load_checkpoint<Real>(path);
  if (m.params.size() != static_cast<std::size_t>(Param::count)) {
    throw FormatError("checkpoint holds " + std::to_string(m.params.size()) + " tensors, expected " +
                      std::to_string(static_cast<std::size_t>(Param::count)));
  }
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (m.params.names[i] != kParamNames[i]) throw FormatError("unexpected parameter " + m.params.names[i]);
  }
  return m;
}

}  // namespace astbridge
