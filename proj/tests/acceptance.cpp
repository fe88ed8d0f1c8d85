// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "astbridge/diff/tape.hpp"
#include "astbridge/pipeline.hpp"
#include "astbridge/random.hpp"
#include "astbridge/synthetic.hpp"
#include "astbridge/training.hpp"

using namespace astbridge;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. gradients

using T = diff::Tensor<double>;
using V = diff::Var<double>;
using Builder = std::function<V(diff::Tape<double>&, std::vector<V>&)>;

T random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  T t(r, c);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double evaluate(const Builder& f, const std::vector<T>& in) {
  diff::Tape<double> tape;
  std::vector<V> vars;
  for (const auto& x : in) vars.push_back(tape.variable(x));
  return f(tape, vars).item();
}

// max over entries of |num - ana| / max(|num|, |ana|, 1e-6)
double primitive_error(const Builder& f, std::vector<T> in) {
  diff::Tape<double> tape;
  std::vector<V> vars;
  for (const auto& x : in) vars.push_back(tape.variable(x));
  tape.backward(f(tape, vars));
  double worst = 0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const T ana = vars[k].grad();
    for (std::size_t i = 0; i < in[k].size(); ++i) {
      const double keep = in[k][i];
      in[k][i] = keep + h;
      const double up = evaluate(f, in);
      in[k][i] = keep - h;
      const double down = evaluate(f, in);
      in[k][i] = keep;
      const double num = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(num - ana[i]) / std::max({1e-6, std::abs(num), std::abs(ana[i])}));
    }
  }
  return worst;
}

V weigh(diff::Tape<double>& t, V x) {
  Rng rng(3);
  return sum_all(mul(x, t.constant(random_tensor(rng, x.rows(), x.cols()))));
}

Outcome gradients() {
  using namespace diff;
  const auto t0 = Clock::now();
  Rng rng(1);
  const T a = random_tensor(rng, 3, 4), b = random_tensor(rng, 3, 4), w = random_tensor(rng, 4, 2);
  T kinked = random_tensor(rng, 3, 4, 0.2, 1.0);
  for (std::size_t i = 0; i < kinked.size(); i += 2) kinked[i] = -kinked[i];
  const T x = random_tensor(rng, 1, 6), y = random_tensor(rng, 1, 6);
  const T ctx = random_tensor(rng, 5, 4);
  const std::vector<std::pair<const char*, double>> prim = {
      {"matmul", primitive_error([](auto& t, auto& v) { return weigh(t, matmul(v[0], v[1])); }, {a, w})},
      {"add", primitive_error([](auto& t, auto& v) { return weigh(t, add(v[0], v[1])); }, {a, b})},
      {"concat", primitive_error([](auto& t, auto& v) { return weigh(t, concat_cols(v[0], v[1])); }, {a, b})},
      {"mean_rows", primitive_error([](auto& t, auto& v) { return weigh(t, mean_rows(v[0])); }, {ctx})},
      {"relu", primitive_error([](auto& t, auto& v) { return weigh(t, relu(v[0])); }, {kinked})},
      {"leaky_relu", primitive_error([](auto& t, auto& v) { return weigh(t, leaky_relu(v[0], 0.2)); }, {kinked})},
      {"sigmoid", primitive_error([](auto& t, auto& v) { return weigh(t, sigmoid(v[0])); }, {a})},
      {"tanh", primitive_error([](auto& t, auto& v) { return weigh(t, tanh(v[0])); }, {a})},
      {"softmax_rows", primitive_error([](auto& t, auto& v) { return weigh(t, softmax_rows(v[0])); }, {a})},
      {"layer_norm", primitive_error([](auto& t, auto& v) { return weigh(t, layer_norm(v[0])); }, {ctx})},
      {"dropout", primitive_error([](auto& t, auto& v) { return weigh(t, dropout(v[0], 0.3, true, 9)); }, {a})},
      {"cosine_sim", primitive_error([](auto&, auto& v) { return cosine_sim(v[0], v[1]); }, {x, y})},
  };
  double worst_prim = 0;
  const char* worst_name = "";
  for (const auto& [name, err] : prim) {
    if (err >= worst_prim) {
      worst_prim = err;
      worst_name = name;
    }
  }

  // end to end: similarity of a 3-node pair through the whole encoder, d = 4,
  // at a generic parameter point (random biases and unit-scale embeddings)
  GmnConfig cfg;
  cfg.type_dim = 2;
  cfg.attr_dim = 2;
  cfg.rounds = 2;
  auto model = GmnModel<double>::initialize(cfg, 4, Vocabulary::from_tokens({"sum", "total", "NUM"}), 7);
  for (auto p : {Param::type_embedding, Param::attr_embedding, Param::mlp_b1, Param::mlp_b2, Param::ln_bias,
                 Param::gru_b_reset, Param::gru_b_update, Param::gru_b_candidate})
    for (auto& v : model[p].data()) v = rng.normal();
  for (auto& v : model[Param::ln_gain].data()) v = rng.uniform(0.5, 1.5);
  auto three = [](const std::string& id, std::vector<LabelId> labels, std::vector<std::vector<std::string>> attrs) {
    UnifiedAst g;
    g.graph_id = id;
    for (std::size_t i = 0; i < 3; ++i) g.nodes.push_back({i, labels[i], attrs[i], false, false});
    g.edges = {Edge::of(0, 1), Edge::of(0, 2)};
    return g;
  };
  const auto g1 = three("a", {0, 1, 2}, {{}, {"sum"}, {"NUM"}});
  const auto g2 = three("b", {3, 1, 1}, {{}, {"total"}, {"sum", "NUM"}});
  diff::Tape<double> tape;
  auto bound = bind(model, tape, true);
  tape.backward(encode_pair(bound, g1, g2, false).similarity);
  const auto grads = collect_gradients(bound);
  // relative error in norm per parameter tensor
  double worst_e2e = 0;
  const double h = 1e-6;
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    double diff2 = 0, nn = 0, na = 0;
    for (std::size_t i = 0; i < model.params.tensors[p].size(); ++i) {
      auto up = model, down = model;
      up.params.tensors[p][i] += h;
      down.params.tensors[p][i] -= h;
      const double num = (pair_similarity(up, g1, g2) - pair_similarity(down, g1, g2)) / (2 * h);
      const double ana = grads.tensors[p][i];
      diff2 += (num - ana) * (num - ana);
      nn += num * num;
      na += ana * ana;
    }
    if (std::max(nn, na) > 0) worst_e2e = std::max(worst_e2e, std::sqrt(diff2 / std::max(nn, na)));
  }
  const double secs = seconds_since(t0);
  return {worst_prim < 1e-4 && worst_e2e < 1e-3 && secs < 60,
          fmt("primitives max rel err %.2e (%s) < 1e-4; end-to-end d=4 %.2e < 1e-3; %.1fs < 60s", worst_prim,
              worst_name, worst_e2e, secs)};
}

// ---------------------------------------------------------------------------
// 2. encoder identities

UnifiedAst random_graph(Rng& rng, std::size_t n, std::size_t labels) {
  UnifiedAst g;
  g.graph_id = "g" + std::to_string(rng.next() % 1000000);
  const char* words[] = {"sum", "total", "NUM", "value", "idx", "STR"};
  for (std::size_t i = 0; i < n; ++i) {
    UnifiedNode node{i, static_cast<LabelId>(rng.uniform_index(labels)), {}, false, false};
    for (std::size_t j = rng.uniform_index(3); j > 0; --j) node.attr_tokens.push_back(words[rng.uniform_index(6)]);
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

Outcome encoder_identities() {
  Rng rng(2);
  auto model = GmnModel<float>::initialize(GmnConfig{}, 30, Vocabulary::from_tokens({"sum", "total", "NUM", "value"}), 5);
  std::vector<UnifiedAst> graphs;
  for (int i = 0; i < 100; ++i) graphs.push_back(random_graph(rng, 1 + rng.uniform_index(50), 30));
  double self_err = 0, sym_err = 0, dist_err = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const auto& g = graphs[i];
    const auto& h = graphs[(i + 1) % graphs.size()];
    self_err = std::max(self_err, std::abs(pair_similarity(model, g, g) - 1.0));
    sym_err = std::max(sym_err, std::abs(pair_similarity(model, g, h) - pair_similarity(model, h, g)));
    diff::Tape<float> tape;
    auto bound = bind(model, tape, false);
    EncodeTrace<float> trace;
    encode_pair(bound, g, h, false, 0, &trace);
    auto rows = [&](const diff::Tensor<float>& w) {
      for (std::size_t r = 0; r < w.rows(); ++r) {
        double s = 0;
        for (float v : w.row_span(r)) s += v;
        dist_err = std::max(dist_err, std::abs(s - 1.0));
      }
    };
    for (const auto& w : trace.attention1) rows(w);
    for (const auto& w : trace.attention2) rows(w);
    rows(trace.pool1);
    rows(trace.pool2);
  }
  return {self_err <= 1e-6 && sym_err <= 1e-6 && dist_err <= 1e-6,
          fmt("100 graphs <= 50 nodes: |sim(g,g)-1| %.1e, |sim(g,h)-sim(h,g)| %.1e, "
              "attention/pooling sum error %.1e (all <= 1e-6)",
              self_err, sym_err, dist_err)};
}

// ---------------------------------------------------------------------------
// 3. label clustering

Outcome clustering() {
  Rng rng(3);
  std::size_t mismatches = 0, not_idempotent = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(30), dim = 6;
    std::vector<std::vector<double>> centres(1 + rng.uniform_index(5), std::vector<double>(dim));
    for (auto& c : centres)
      for (auto& v : c) v = rng.normal();
    std::vector<NodeSignature> sigs;
    SignatureCatalog cat;
    for (std::size_t i = 0; i < n; ++i) {
      NodeSignature s;
      s.key = {"x", "t" + std::to_string(i)};
      const auto& c = centres[rng.uniform_index(centres.size())];
      double norm = 0;
      for (std::size_t d = 0; d < dim; ++d) {
        s.features.push_back(c[d] + 0.4 * rng.normal());
        norm += s.features.back() * s.features.back();
      }
      for (auto& v : s.features) v /= std::sqrt(norm);
      s.arity_min = rng.uniform_index(3);
      s.arity_max = s.arity_min + rng.uniform_index(3);
      sigs.push_back(s);
      cat.emplace(s.key, s);
    }
    const double thr = rng.uniform(0.5, 0.99);
    // brute force: repeated relabelling until the component ids settle
    std::vector<std::size_t> comp(n);
    for (std::size_t i = 0; i < n; ++i) comp[i] = i;
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0;
          for (std::size_t d = 0; d < dim; ++d) dot += sigs[i].features[d] * sigs[j].features[d];
          if (i != j && dot >= thr && comp[j] < comp[i]) {
            comp[i] = comp[j];
            changed = true;
          }
        }
    }
    std::map<std::size_t, std::vector<LabelKey>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[comp[i]].push_back(sigs[i].key);
    Partition expected;
    for (auto& [c, keys] : groups) expected.push_back(keys);
    canonicalize(expected);
    const auto got = cluster_labels(sigs, thr);
    mismatches += !(got == expected);
    const auto once = merge_equivalent_clusters(got, cat, 0.8);
    not_idempotent += !(merge_equivalent_clusters(once, cat, 0.8) == once);
  }
  return {mismatches == 0 && not_idempotent == 0,
          fmt("100 random sets <= 30 labels: %zu partitions differ from brute-force components, "
              "%zu non-idempotent merges",
              mismatches, not_idempotent)};
}

// ---------------------------------------------------------------------------
// 4. pruning

std::size_t graphic_rank(std::size_t n, const std::vector<Edge>& edges) {
  DisjointSet d(n);
  for (const auto& e : edges) d.unite(e.a, e.b);
  return n - d.set_count();
}

Outcome pruning() {
  Rng rng(4);
  std::size_t protected_removed = 0, disconnected = 0, wrong_count = 0, short_of_target = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 2 + rng.uniform_index(40);
    UnifiedAst g;
    g.graph_id = "p";
    for (std::size_t i = 0; i < n; ++i) g.nodes.push_back({i, 0, {}, rng.bernoulli(0.1), false});
    g.nodes[rng.uniform_index(n)].is_global_root = true;
    std::set<Edge> edges;
    for (std::size_t i = 1; i < n; ++i) edges.insert(Edge::of(i, rng.uniform_index(i)));
    for (std::size_t k = rng.uniform_index(2 * n); k > 0; --k) {
      const auto a = rng.uniform_index(n), b = rng.uniform_index(n);
      if (a != b) edges.insert(Edge::of(a, b));
    }
    g.edges.assign(edges.begin(), edges.end());

    std::set<NodeId> prot;
    for (const auto& v : g.nodes)
      if (v.is_key || v.is_global_root) prot.insert(v.id);
    for (const auto& e : g.edges) {
      if (g.nodes[e.a].is_key) prot.insert(e.b);
      if (g.nodes[e.b].is_key) prot.insert(e.a);
    }
    std::vector<Edge> deletable, kept;
    for (const auto& e : g.edges) (prot.contains(e.a) || prot.contains(e.b) ? kept : deletable).push_back(e);
    const auto target = static_cast<std::size_t>(std::floor(0.4 * static_cast<double>(deletable.size())));
    // most deletable edges removable while staying connected:
    // |D| - rank(E) + rank(E \ D)
    const std::size_t max_removable = deletable.size() - graphic_rank(n, g.edges) + graphic_rank(n, kept);

    const auto r = prune_with_report(g, {0.4, rng.next()});
    for (const auto& e : r.removed) protected_removed += prot.contains(e.a) || prot.contains(e.b);
    disconnected += !is_connected(r.graph);
    wrong_count += r.removed.size() != std::min(target, max_removable);
    short_of_target += target > max_removable;
  }
  return {protected_removed == 0 && disconnected == 0 && wrong_count == 0,
          fmt("1000 graphs at ratio 0.4: %zu protected edges removed, %zu disconnected outputs, %zu counts off "
              "floor(0.4|D|) where connectivity permits (%zu graphs could not reach it)",
              protected_removed, disconnected, wrong_count, short_of_target)};
}

// ---------------------------------------------------------------------------
// Shared synthetic setup for 5 to 7

constexpr std::uint64_t kSeed = 17;

struct Bench {
  synth::SynthCorpus corpus;
  SplitManifest splits;
  PreparedData data;
  GmnModel<float> initial;
};

const Bench& bench() {
  static const Bench b = [] {
    Bench x;
    x.corpus = synth::generate({.tasks = 20});
    const auto trees = from_synthetic(x.corpus);
    std::vector<std::string> tasks;
    for (const auto& t : trees) tasks.push_back(t.task_id);
    x.splits = make_splits(tasks, {8, 1, 1}, kSeed);
    x.data = prepare(trees, x.corpus.schemas, {}, {}, x.splits.train);
    std::vector<UnifiedAst> train_graphs;
    for (const auto& id : x.data.dataset.ids_in(x.splits.train)) train_graphs.push_back(x.data.dataset.at(id));
    x.initial = GmnModel<float>::initialize(GmnConfig{}, x.data.labels.global_root_id() + 1,
                                            Vocabulary::from_graphs(train_graphs), derive_seed(kSeed, "model"));
    return x;
  }();
  return b;
}

std::vector<std::string> split_ids(const std::string& split) {
  const auto& b = bench();
  return b.data.dataset.ids_in(b.splits[split]);
}

// same pairs as `detect`: hard evaluation negatives at the default fraction
std::vector<PairExample> eval_pairs(const std::string& split) {
  return build_clone_pairs(bench().data.dataset, split_ids(split), NegativeKind::hard,
                           derive_seed(kSeed, "eval-" + split));
}

Metrics score_pairs(const GmnModel<float>& model, const std::vector<PairExample>& pairs, double threshold = NAN) {
  const auto sims = pair_similarities(model, bench().data.dataset, pairs);
  std::vector<int> labels;
  for (const auto& p : pairs) labels.push_back(p.label);
  const double t = std::isnan(threshold) ? select_threshold(sims, labels) : threshold;
  auto m = classification_metrics(confusion_at(sims, labels, t), false);
  m.threshold = t;
  return m;
}

// threshold tuned on validation pairs, metrics on the test tasks
Metrics test_at_valid_threshold(const GmnModel<float>& model) {
  return score_pairs(model, eval_pairs("test"), score_pairs(model, eval_pairs("valid")).threshold);
}

struct CloneRun {
  GmnModel<float> model;
  double seconds = 0;
};

const CloneRun& clone_run(NegativeKind kind) {
  static std::map<NegativeKind, CloneRun> runs;
  if (!runs.contains(kind)) {
    TrainConfig c;
    c.objective = Objective::clone;
    c.max_steps = 200;
    c.epochs = 1000;
    c.validate = false;
    c.negatives = kind;
    c.seed = kSeed;
    const auto t0 = Clock::now();
    auto r = train(bench().initial, bench().data.dataset, bench().splits, c);
    runs[kind] = {std::move(r.model), seconds_since(t0)};
  }
  return runs.at(kind);
}

// ---------------------------------------------------------------------------
// 5. clone detection on the synthetic benchmark

Outcome clone_detection() {
  const auto t0 = Clock::now();
  const auto& run = clone_run(NegativeKind::hard);
  const auto& b = bench();
  const auto train = score_pairs(run.model, build_clone_pairs(b.data.dataset, split_ids("train"), NegativeKind::hard,
                                                              derive_seed(kSeed, "train-pairs")));
  const auto held = test_at_valid_threshold(run.model);
  const double secs = seconds_since(t0);
  return {train.f1 >= 0.95 && held.f1 >= 0.80 && secs < 300,
          fmt("20 tasks x 2 languages, 200 steps: train-pair F1 %.3f >= 0.95; held-out test-task F1 %.3f >= 0.80 "
              "at validation threshold %.2f; %.0fs < 300s",
              train.f1, held.f1, held.threshold, secs)};
}

// ---------------------------------------------------------------------------
// 6. retrieval negatives

Outcome retrieval_negatives() {
  const auto& b = bench();
  const auto& ds = b.data.dataset;
  // held-out queries searched against the whole corpus
  auto queries = split_ids("valid");
  for (const auto& id : split_ids("test")) queries.push_back(id);
  std::vector<std::string> index;
  for (const auto& [id, i] : ds.index) index.push_back(id);
  std::map<std::size_t, double> mrr;
  std::size_t steps = 0;
  for (std::size_t k : {0, 1, 10}) {
    TrainConfig c;
    c.objective = Objective::retrieval;
    c.neg_k = k;
    c.batch_size = 8;
    c.epochs = 10;
    c.validate = false;
    c.seed = kSeed;
    auto r = train(b.initial, ds, b.splits, c);
    steps = r.steps;
    mrr[k] = evaluate_retrieval(ds, queries, index, gmn_scorer(r.model)).mrr;
  }
  return {mrr[1] - mrr[0] >= 0.2 && mrr[10] >= mrr[1],
          fmt("%zu held-out queries against %zu graphs, batch 8, 10 epochs (%zu steps): MRR neg_k=0 %.3f, "
              "neg_k=1 %.3f, neg_k=10 %.3f; gain %.3f >= 0.2, MRR(10) >= MRR(1)",
              queries.size(), index.size(), steps, mrr[0], mrr[1], mrr[10], mrr[1] - mrr[0])};
}

// ---------------------------------------------------------------------------
// 7. hard versus random negatives

Outcome hard_negatives() {
  const auto h = test_at_valid_threshold(clone_run(NegativeKind::hard).model);
  const auto r = test_at_valid_threshold(clone_run(NegativeKind::random).model);
  const double dp = 100 * (h.precision - r.precision), dr = 100 * std::abs(h.recall - r.recall);
  return {dp >= 10 && dr <= 5,
          fmt("test pairs at each model's validation threshold (%.2f hard, %.2f random): precision %.3f hard vs "
              "%.3f random (drop %.1f >= 10 points), recall %.3f vs %.3f (gap %.1f <= 5 points)",
              h.threshold, r.threshold, h.precision, r.precision, dp, h.recall, r.recall, dr)};
}

// ---------------------------------------------------------------------------
// 8. split audit

Outcome split_audit() {
  const auto& b = bench();
  const auto& ds = b.data.dataset;
  std::map<std::string, std::vector<PairExample>> pairs;
  for (const char* s : kSplitNames)
    pairs[s] = build_clone_pairs(ds, ds.ids_in(b.splits[s]), NegativeKind::hard, derive_seed(kSeed, s));
  auto task_of = [&](const std::string& id) { return ds.at(id).task_id; };
  const auto clean = check_split_integrity(b.splits, pairs, task_of);

  // planted: one training task also listed under test, one training snippet
  // reused in a test pair, one training pair repeated swapped under valid
  auto planted_splits = b.splits;
  planted_splits.test.insert(*b.splits.train.begin());
  auto planted = pairs;
  const PairExample& first = pairs["train"].front();
  const std::string test_snippet = pairs["test"].front().g1_id;
  std::string reused;
  for (const auto& p : pairs["train"])
    if (p.g1_id != first.g1_id && p.g1_id != first.g2_id && ds.at(p.g1_id).language != ds.at(test_snippet).language) {
      reused = p.g1_id;
      break;
    }
  planted["test"].push_back({test_snippet, reused, 0, PairSource::random_negative});
  planted["valid"].push_back({first.g2_id, first.g1_id, first.label, first.source});
  const auto leak = check_split_integrity(planted_splits, planted, task_of);

  // the swapped pair necessarily shares its two snippets as well
  const bool exact = leak.task_overlap == 1 && leak.snippet_overlap == 3 && leak.pair_overlap == 1;
  std::string counts;
  for (const char* s : kSplitNames) {
    const auto [np, nt] = clean.counts.at(s);
    counts += std::string(counts.empty() ? "" : "; ") + s + " " + count_line(np, nt);
  }
  return {clean.clean() && exact,
          fmt("clean: %zu/%zu/%zu overlaps (%s); planted: task %zu, snippet %zu, pair %zu (expected 1, 3, 1)",
              clean.task_overlap, clean.snippet_overlap, clean.pair_overlap, counts.c_str(), leak.task_overlap,
              leak.snippet_overlap, leak.pair_overlap)};
}

// ---------------------------------------------------------------------------
// 9. determinism

struct RunBytes {
  std::string labels, graphs, checkpoint;
};

RunBytes pipeline_bytes() {
  auto corpus = synth::generate({.tasks = 12, .variants = 2});
  const auto trees = from_synthetic(corpus);
  std::vector<std::string> tasks;
  for (const auto& t : trees) tasks.push_back(t.task_id);
  const auto splits = make_splits(tasks, {8, 1, 1}, kSeed);
  const auto data = prepare(trees, corpus.schemas, {}, {.prune = {0.4, kSeed}}, splits.train);
  RunBytes out;
  out.labels = to_json(data.labels).dump();
  for (const auto& g : data.dataset.graphs) out.graphs += to_json(g).dump() + "\n";
  TrainConfig c;
  c.max_steps = 5;
  c.batch_size = 4;
  c.seed = kSeed;
  c.model.type_dim = 8;
  c.model.attr_dim = 8;
  std::vector<UnifiedAst> train_graphs;
  for (const auto& id : data.dataset.ids_in(splits.train)) train_graphs.push_back(data.dataset.at(id));
  auto model = GmnModel<float>::initialize(c.model, data.labels.global_root_id() + 1,
                                           Vocabulary::from_graphs(train_graphs), derive_seed(kSeed, "model"));
  out.checkpoint = diff::serialize_checkpoint(train(model, data.dataset, splits, c).model.params);
  return out;
}

Outcome determinism() {
  const auto a = pipeline_bytes();
  const auto b = pipeline_bytes();
  const bool same = a.labels == b.labels && a.graphs == b.graphs && a.checkpoint == b.checkpoint;
  return {same, fmt("unify -> enhance -> train(5 steps) twice: labels %s (%zu bytes), graphs %s (%zu bytes), "
                    "checkpoint %s (%zu bytes)",
                    a.labels == b.labels ? "identical" : "DIFFER", a.labels.size(),
                    a.graphs == b.graphs ? "identical" : "DIFFER", a.graphs.size(),
                    a.checkpoint == b.checkpoint ? "identical" : "DIFFER", a.checkpoint.size())};
}

}  // namespace

int main() {
  log::set_level(log::Level::warn);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient finite differences", gradients},
      {"encoder identities", encoder_identities},
      {"label clustering", clustering},
      {"structural pruning", pruning},
      {"synthetic clone detection", clone_detection},
      {"retrieval negatives", retrieval_negatives},
      {"hard vs random negatives", hard_negatives},
      {"split audit", split_audit},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
