#pragma once

// Splits, pair construction, hard-negative mining, the clone and retrieval
// objectives, the training loop, and the evaluation metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "astbridge/diff/adam.hpp"
#include "astbridge/error.hpp"
#include "astbridge/gmn.hpp"
#include "astbridge/hash.hpp"
#include "astbridge/log.hpp"
#include "astbridge/provenance.hpp"
#include "astbridge/random.hpp"
#include "astbridge/structural_enhancement.hpp"

namespace astbridge {

// ---------------------------------------------------------------------------
// Graph store

struct Dataset {
  std::vector<UnifiedAst> graphs;
  std::map<std::string, std::size_t> index;

  Dataset() = default;
  explicit Dataset(std::vector<UnifiedAst> gs) : graphs(std::move(gs)) {
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      if (!index.emplace(graphs[i].graph_id, i).second) throw DuplicateSnippet(graphs[i].graph_id);
    }
  }

  const UnifiedAst& at(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end()) throw Error("unknown graph id " + id);
    return graphs[it->second];
  }

  std::vector<std::string> task_ids() const {
    std::set<std::string> s;
    for (const auto& g : graphs) s.insert(g.task_id);
    return {s.begin(), s.end()};
  }

  // Ids of graphs whose task is in `tasks`, in id order.
  std::vector<std::string> ids_in(const std::set<std::string>& tasks) const {
    std::vector<std::string> out;
    for (const auto& [id, i] : index)
      if (tasks.contains(graphs[i].task_id)) out.push_back(id);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Splits

struct SplitManifest {
  std::set<std::string> train, valid, test;
  std::array<double, 3> ratios{8, 1, 1};
  std::uint64_t seed = 0;

  const std::set<std::string>& operator[](std::string_view name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw Error("unknown split " + std::string(name));
  }
};

inline constexpr std::array<const char*, 3> kSplitNames{"train", "valid", "test"};
inline constexpr std::size_t kMinTasksForSplit = 10;

inline SplitManifest make_splits(std::vector<std::string> task_ids, std::array<double, 3> ratios = {8, 1, 1},
                                 std::uint64_t seed = 17) {
  std::sort(task_ids.begin(), task_ids.end());
  task_ids.erase(std::unique(task_ids.begin(), task_ids.end()), task_ids.end());
  if (task_ids.size() < kMinTasksForSplit) {
    throw TooFewTasks("need at least " + std::to_string(kMinTasksForSplit) + " tasks, got " +
                      std::to_string(task_ids.size()));
  }
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) throw Error("bad split ratios");
  Rng rng(derive_seed(seed, "splits"));
  rng.shuffle(task_ids);
  const std::size_t n = task_ids.size();
  auto part = [&](double r) {
    if (r <= 0) return std::size_t{0};
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * r / total)));
  };
  const std::size_t n_valid = part(ratios[1]);
  const std::size_t n_test = part(ratios[2]);
  SplitManifest s;
  s.ratios = ratios;
  s.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_valid) s.valid.insert(task_ids[i]);
    else if (i < n_valid + n_test) s.test.insert(task_ids[i]);
    else s.train.insert(task_ids[i]);
  }
  return s;
}

inline json to_json(const SplitManifest& s) {
  return {{"train", s.train}, {"valid", s.valid}, {"test", s.test}, {"ratios", s.ratios}, {"seed", s.seed}};
}

inline SplitManifest split_manifest_from_json(const json& j) {
  SplitManifest s;
  s.train = detail::get_as<std::set<std::string>>(detail::require(j, "train", "split manifest"), "train", "split manifest");
  s.valid = detail::get_as<std::set<std::string>>(detail::require(j, "valid", "split manifest"), "valid", "split manifest");
  s.test = detail::get_as<std::set<std::string>>(detail::require(j, "test", "split manifest"), "test", "split manifest");
  if (j.contains("ratios")) s.ratios = j.at("ratios").get<std::array<double, 3>>();
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

// ---------------------------------------------------------------------------
// Pairs

enum class PairSource { positive, random_negative, hard_negative };

inline const char* source_name(PairSource s) {
  switch (s) {
    case PairSource::positive: return "positive";
    case PairSource::random_negative: return "random_negative";
    case PairSource::hard_negative: return "hard_negative";
  }
  return "?";
}

inline PairSource source_from_name(const std::string& s) {
  if (s == "positive") return PairSource::positive;
  if (s == "random_negative") return PairSource::random_negative;
  if (s == "hard_negative") return PairSource::hard_negative;
  throw SchemaError("unknown pair source " + s);
}

struct PairExample {
  std::string g1_id, g2_id;
  int label = 0;  // 1 clone, 0 non-clone
  PairSource source = PairSource::positive;

  std::pair<std::string, std::string> unordered() const { return std::minmax(g1_id, g2_id); }
  friend bool operator==(const PairExample&, const PairExample&) = default;
};

inline json to_json(const PairExample& p) {
  return {{"g1_id", p.g1_id}, {"g2_id", p.g2_id}, {"label", p.label}, {"source", source_name(p.source)}};
}

inline PairExample pair_from_json(const json& j) {
  PairExample p;
  p.g1_id = detail::get_as<std::string>(detail::require(j, "g1_id", "pair"), "g1_id", "pair");
  p.g2_id = detail::get_as<std::string>(detail::require(j, "g2_id", "pair"), "g2_id", "pair");
  p.label = detail::get_as<int>(detail::require(j, "label", "pair"), "label", "pair");
  p.source = source_from_name(j.value("source", std::string(p.label ? "positive" : "random_negative")));
  return p;
}

// All cross-language same-task pairs among `ids`, each once with g1 < g2.
inline std::vector<PairExample> positive_pairs(const Dataset& ds, const std::vector<std::string>& ids) {
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& a = ds.at(ids[i]);
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      const auto& b = ds.at(ids[j]);
      if (a.task_id == b.task_id && a.language != b.language) {
        auto [x, y] = std::minmax(a.graph_id, b.graph_id);
        out.push_back({x, y, 1, PairSource::positive});
      }
    }
  }
  return out;
}

// `count` distinct cross-language cross-task pairs drawn uniformly, skipping
// anything already in `taken`.
inline std::vector<PairExample> random_negatives(const Dataset& ds, const std::vector<std::string>& ids,
                                                 std::size_t count, Rng& rng,
                                                 std::set<std::pair<std::string, std::string>> taken = {}) {
  std::vector<std::pair<std::string, std::string>> pool;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& a = ds.at(ids[i]);
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      const auto& b = ds.at(ids[j]);
      if (a.task_id != b.task_id && a.language != b.language) {
        auto key = std::minmax(a.graph_id, b.graph_id);
        if (!taken.contains(key)) pool.emplace_back(key);
      }
    }
  }
  rng.shuffle(pool);
  if (pool.size() > count) pool.resize(count);
  std::vector<PairExample> out;
  for (auto& [x, y] : pool) out.push_back({x, y, 0, PairSource::random_negative});
  return out;
}

// ---------------------------------------------------------------------------
// Hard negatives

enum class MiningMode { static_histogram, dynamic_model };

// Universal-label count vector of a graph.
inline std::vector<double> label_histogram(const UnifiedAst& g, std::size_t size) {
  std::vector<double> h(size, 0.0);
  for (const auto& n : g.nodes) {
    if (n.label >= size) h.resize(n.label + 1, 0.0);
    h[n.label] += 1.0;
  }
  return h;
}

inline double histogram_cosine(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = std::max(a.size(), b.size());
  a.resize(n, 0.0);
  b.resize(n, 0.0);
  return cosine(std::span<const double>(a), std::span<const double>(b));
}

// Vector used to rank candidates: a label histogram in static mode, the
// model's standalone embedding in dynamic mode.
using RankingVectors = std::map<std::string, std::vector<double>>;

inline RankingVectors static_ranking_vectors(const Dataset& ds, const std::vector<std::string>& ids) {
  std::size_t width = 0;
  for (const auto& id : ids)
    for (const auto& n : ds.at(id).nodes) width = std::max<std::size_t>(width, n.label + 1);
  RankingVectors out;
  for (const auto& id : ids) out[id] = label_histogram(ds.at(id), width);
  return out;
}

template <class Real>
RankingVectors model_ranking_vectors(const Dataset& ds, const std::vector<std::string>& ids,
                                     const GmnModel<Real>& model) {
  RankingVectors out;
  for (const auto& id : ids) {
    auto e = embed_graph(model, ds.at(id));
    out[id] = std::vector<double>(e.vector.begin(), e.vector.end());
  }
  return out;
}

// For each anchor, the top_k candidates by ranking-vector cosine among those
// with a different task and a different language. Ties break on graph id.
inline std::vector<PairExample> mine_hard_negatives(const Dataset& ds, const std::vector<std::string>& anchors,
                                                    const std::vector<std::string>& candidates,
                                                    const RankingVectors& vectors, std::size_t top_k) {
  std::vector<PairExample> out;
  bool any_pool = false;
  for (const auto& a_id : anchors) {
    const auto& a = ds.at(a_id);
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& c_id : candidates) {
      const auto& c = ds.at(c_id);
      if (c.task_id == a.task_id || c.language == a.language) continue;
      scored.emplace_back(histogram_cosine(vectors.at(a_id), vectors.at(c_id)), c_id);
    }
    if (scored.empty()) continue;
    any_pool = true;
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    for (std::size_t i = 0; i < std::min(top_k, scored.size()); ++i)
      out.push_back({a_id, scored[i].second, 0, PairSource::hard_negative});
  }
  if (!any_pool && !anchors.empty()) log::warn("mine_hard_negatives: no cross-task candidates; returning nothing");
  return out;
}

inline std::vector<PairExample> mine_hard_negatives(const Dataset& ds, const std::vector<std::string>& anchors,
                                                    const std::vector<std::string>& candidates, std::size_t top_k) {
  std::vector<std::string> all = anchors;
  all.insert(all.end(), candidates.begin(), candidates.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return mine_hard_negatives(ds, anchors, candidates, static_ranking_vectors(ds, all), top_k);
}

enum class NegativeKind { random, hard };

inline constexpr double kDefaultHardFraction = 0.5;

// Balanced clone-detection pairs over the graphs in `ids`: every positive
// pair plus as many negatives. With hard negatives, `hard_fraction` of the
// negatives are the highest-ranked cross-task pairs and the rest are drawn
// at random, so easy contrasts are not lost.
inline std::vector<PairExample> build_clone_pairs(const Dataset& ds, const std::vector<std::string>& ids,
                                                  NegativeKind kind, std::uint64_t seed,
                                                  const RankingVectors* vectors = nullptr,
                                                  double hard_fraction = kDefaultHardFraction) {
  auto pairs = positive_pairs(ds, ids);
  const std::size_t want = pairs.size();
  Rng rng(derive_seed(seed, "negatives"));
  std::set<std::pair<std::string, std::string>> taken;
  for (const auto& p : pairs) taken.insert(p.unordered());
  std::vector<PairExample> negatives;
  if (kind == NegativeKind::hard && want > 0) {
    RankingVectors own;
    if (!vectors) {
      own = static_ranking_vectors(ds, ids);
      vectors = &own;
    }
    // Each graph contributes its best-ranked cross-task partners so the hard
    // negatives spread over the whole split instead of piling onto the one
    // family with the highest scores; the pooled pairs are then sampled.
    const auto hard_want = static_cast<std::size_t>(std::ceil(hard_fraction * static_cast<double>(want)));
    const std::size_t per_anchor = (2 * hard_want + ids.size() - 1) / std::max<std::size_t>(ids.size(), 1);
    std::vector<std::pair<std::string, std::string>> pool;
    std::set<std::pair<std::string, std::string>> pooled;
    for (const auto& p : mine_hard_negatives(ds, ids, ids, *vectors, std::max<std::size_t>(per_anchor, 1))) {
      auto key = p.unordered();
      if (!taken.contains(key) && pooled.insert(key).second) pool.push_back(key);
    }
    rng.shuffle(pool);
    for (const auto& key : pool) {
      if (negatives.size() >= hard_want) break;
      negatives.push_back({key.first, key.second, 0, PairSource::hard_negative});
      taken.insert(key);
    }
  }
  if (negatives.size() < want) {
    auto extra = random_negatives(ds, ids, want - negatives.size(), rng, taken);
    negatives.insert(negatives.end(), extra.begin(), extra.end());
  }
  pairs.insert(pairs.end(), negatives.begin(), negatives.end());
  return pairs;
}

struct RetrievalExample {
  std::string anchor_id, positive_id;
  std::vector<std::string> negative_ids;
};

// One example per anchor that has a cross-language same-task partner; the
// positive and neg_k cross-task cross-language negatives are drawn with rng.
// In hard mode negatives are the neg_k best-ranked candidates.
inline std::vector<RetrievalExample> make_retrieval_examples(const Dataset& ds, const std::vector<std::string>& ids,
                                                             std::size_t neg_k, Rng& rng,
                                                             const RankingVectors* hard = nullptr) {
  std::vector<RetrievalExample> out;
  for (const auto& a_id : ids) {
    const auto& a = ds.at(a_id);
    std::vector<std::string> pos, neg;
    for (const auto& c_id : ids) {
      const auto& c = ds.at(c_id);
      if (c.language == a.language) continue;
      (c.task_id == a.task_id ? pos : neg).push_back(c_id);
    }
    if (pos.empty()) continue;
    RetrievalExample ex{a_id, pos[rng.uniform_index(pos.size())], {}};
    if (hard) {
      auto mined = mine_hard_negatives(ds, {a_id}, neg, *hard, neg_k);
      for (auto& p : mined) ex.negative_ids.push_back(p.g2_id);
    } else if (!neg.empty()) {
      rng.shuffle(neg);
      for (std::size_t i = 0; i < neg_k; ++i) ex.negative_ids.push_back(neg[i % neg.size()]);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split audit

struct SplitAudit {
  std::size_t task_overlap = 0;     // task ids in more than one split
  std::size_t snippet_overlap = 0;  // snippet ids referenced by pairs of more than one split
  std::size_t pair_overlap = 0;     // unordered pairs present in more than one split
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // split -> (pairs, tasks)

  bool clean() const { return task_overlap == 0 && snippet_overlap == 0 && pair_overlap == 0; }
};

inline std::string with_thousands(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

inline std::string count_line(std::size_t pairs, std::size_t tasks) {
  return with_thousands(pairs) + " pairs over " + with_thousands(tasks) + " tasks";
}

inline json to_json(const SplitAudit& a) {
  json counts = json::object();
  for (const auto& [split, c] : a.counts)
    counts[split] = {{"pairs", c.first}, {"tasks", c.second}, {"summary", count_line(c.first, c.second)}};
  return {{"task_overlap", a.task_overlap},
          {"snippet_overlap", a.snippet_overlap},
          {"pair_overlap", a.pair_overlap},
          {"clean", a.clean()},
          {"splits", counts}};
}

// `pairs` maps split name to its pair list; `task_of` resolves snippet ids.
inline SplitAudit check_split_integrity(const SplitManifest& splits,
                                        const std::map<std::string, std::vector<PairExample>>& pairs,
                                        const std::function<std::string(const std::string&)>& task_of) {
  SplitAudit audit;
  std::map<std::string, std::set<std::string>> task_splits;
  for (const char* name : kSplitNames)
    for (const auto& t : splits[name]) task_splits[t].insert(name);
  for (const auto& [t, where] : task_splits) audit.task_overlap += where.size() > 1;

  std::map<std::string, std::set<std::string>> snippet_splits;
  std::map<std::pair<std::string, std::string>, std::set<std::string>> pair_splits;
  for (const auto& [split, list] : pairs) {
    std::set<std::string> tasks;
    for (const auto& p : list) {
      snippet_splits[p.g1_id].insert(split);
      snippet_splits[p.g2_id].insert(split);
      pair_splits[p.unordered()].insert(split);
      tasks.insert(task_of(p.g1_id));
      tasks.insert(task_of(p.g2_id));
    }
    audit.counts[split] = {list.size(), tasks.size()};
  }
  for (const auto& [s, where] : snippet_splits) audit.snippet_overlap += where.size() > 1;
  for (const auto& [p, where] : pair_splits) audit.pair_overlap += where.size() > 1;
  return audit;
}

// ---------------------------------------------------------------------------
// Losses

// Negative-pair distance used by the clone loss hinge:
//   euclidean       ||v1 - v2|| on the raw pooled vectors
//   unit_euclidean  the same distance after scaling both vectors to unit
//                   length, sqrt(2 - 2 sim)
//   sphere          after scaling both to length m/sqrt(2), so the margin is
//                   met exactly at sim = 0: (m/sqrt(2)) sqrt(2 - 2 sim).
//                   Orthogonality is reachable by any number of tasks at
//                   once, sim = -1 only by two.
// The last two tie the hinge to the cosine used for decisions.
enum class CloneLossForm { euclidean, unit_euclidean, sphere };

struct LossConfig {
  double tau = 0.1;
  double margin = 10.0;
  CloneLossForm form = CloneLossForm::sphere;  // the literal euclidean form lets norms satisfy the margin
};

inline const char* form_name(CloneLossForm f) {
  switch (f) {
    case CloneLossForm::euclidean: return "euclidean";
    case CloneLossForm::unit_euclidean: return "unit_euclidean";
    case CloneLossForm::sphere: return "sphere";
  }
  return "?";
}

inline CloneLossForm form_from_name(const std::string& s) {
  if (s == "euclidean") return CloneLossForm::euclidean;
  if (s == "unit_euclidean") return CloneLossForm::unit_euclidean;
  if (s == "sphere") return CloneLossForm::sphere;
  throw Error("unknown clone loss form " + s);
}

// `dist` is whichever distance the configured form uses.
inline double clone_loss(double sim, double dist, int label, const LossConfig& c = {}) {
  if (label == 1) return (1.0 - sim) / c.tau;
  const double gap = std::max(0.0, c.margin - dist);
  return gap * gap;
}

// sims[0] is the positive.
inline double retrieval_loss(std::span<const double> sims, double tau = 0.1) {
  if (sims.empty()) throw Error("retrieval_loss needs the positive similarity");
  double mx = -INFINITY;
  for (double s : sims) mx = std::max(mx, s / tau);
  double z = 0;
  for (double s : sims) z += std::exp(s / tau - mx);
  return -(sims[0] / tau - mx - std::log(z));
}

template <class Real>
diff::Var<Real> clone_loss(diff::Var<Real> v1, diff::Var<Real> v2, int label, const LossConfig& c = {}) {
  using namespace diff;
  auto sim = cosine_sim(v1, v2);
  if (label == 1) return affine(sim, static_cast<Real>(-1.0 / c.tau), static_cast<Real>(1.0 / c.tau));
  Var<Real> dist;
  if (c.form == CloneLossForm::euclidean) {
    dist = euclidean_distance(v1, v2);
  } else {
    const Real radius = c.form == CloneLossForm::sphere ? static_cast<Real>(c.margin / std::sqrt(2.0)) : Real(1);
    dist = affine(sqrt(affine(sim, Real(-2), Real(2))), radius);
  }
  auto gap = relu(affine(dist, Real(-1), static_cast<Real>(c.margin)));
  return mul(gap, gap);
}

// sims: 1 x (1 + neg_k) row, positive first.
template <class Real>
diff::Var<Real> retrieval_loss(diff::Var<Real> sims, double tau = 0.1) {
  using namespace diff;
  auto lp = log_softmax_rows(affine(sims, static_cast<Real>(1.0 / tau)));
  return affine(pick(lp, 0, 0), Real(-1));
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double precision = 0, recall = 0, f1 = 0;
  double mrr = 0, precision_at_k = 0;
  double threshold = 0;
  std::size_t k = 4;
};

inline json to_json(const Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},       {"mrr", m.mrr},
          {"precision_at_k", m.precision_at_k}, {"k", m.k}, {"threshold", m.threshold}};
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion_at(std::span<const double> sims, std::span<const int> labels, double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    const bool pred = sims[i] >= threshold;
    if (pred && labels[i]) ++c.tp;
    else if (pred) ++c.fp;
    else if (labels[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline Metrics classification_metrics(const Confusion& c, bool warn_empty = true) {
  Metrics m;
  if (c.tp + c.fp == 0) {
    if (warn_empty) log::warn("no pair predicted as clone; precision defined as 0");
    m.precision = 0;
  } else {
    m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  m.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

inline constexpr double kThresholdStep = 0.01;

inline std::vector<double> threshold_grid() {
  std::vector<double> g;
  for (int i = -100; i <= 100; ++i) g.push_back(i * kThresholdStep);
  return g;
}

// Argmax of F1 over the grid; among tied grid points the median one.
inline double select_threshold(std::span<const double> sims, std::span<const int> labels) {
  const auto grid = threshold_grid();
  double best = -1;
  std::vector<std::size_t> argmax;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double f1 = classification_metrics(confusion_at(sims, labels, grid[i]), false).f1;
    if (f1 > best + 1e-12) {
      best = f1;
      argmax = {i};
    } else if (std::abs(f1 - best) <= 1e-12) {
      argmax.push_back(i);
    }
  }
  return grid[argmax[argmax.size() / 2]];
}

struct Prediction {
  std::string g1_id, g2_id;
  double sim = 0;
  bool predicted = false;
  int label = 0;
};

inline json to_json(const Prediction& p) {
  return {{"g1_id", p.g1_id}, {"g2_id", p.g2_id}, {"sim", p.sim}, {"predicted", p.predicted}, {"label", p.label}};
}

struct Detection {
  std::vector<Prediction> predictions;
  Metrics metrics;
};

inline Detection detect_clones(const std::vector<PairExample>& pairs, std::span<const double> sims, double threshold) {
  Detection d;
  std::vector<int> labels;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    d.predictions.push_back({pairs[i].g1_id, pairs[i].g2_id, sims[i], sims[i] >= threshold, pairs[i].label});
    labels.push_back(pairs[i].label);
  }
  d.metrics = classification_metrics(confusion_at(sims, labels, threshold));
  d.metrics.threshold = threshold;
  return d;
}

// Reciprocal rank of the first relevant entry of a ranked list (0 if none).
inline double reciprocal_rank(const std::vector<bool>& ranked_relevance) {
  for (std::size_t i = 0; i < ranked_relevance.size(); ++i)
    if (ranked_relevance[i]) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

inline double precision_at_k(const std::vector<bool>& ranked_relevance, std::size_t k) {
  const auto relevant = static_cast<std::size_t>(std::count(ranked_relevance.begin(), ranked_relevance.end(), true));
  const std::size_t denom = std::min(k, relevant);
  if (denom == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranked_relevance.size()); ++i) hits += ranked_relevance[i];
  return static_cast<double>(hits) / static_cast<double>(denom);
}

struct RankedHit {
  std::string id;
  double sim = 0;
  bool relevant = false;
};

using PairScorer = std::function<double(const UnifiedAst&, const UnifiedAst&)>;

// Candidates for a query: every other-language graph among `ids`, ranked by
// score (descending, ties on id).
inline std::vector<RankedHit> rank_candidates(const Dataset& ds, const std::string& query,
                                              const std::vector<std::string>& ids, const PairScorer& score) {
  const auto& q = ds.at(query);
  std::vector<RankedHit> hits;
  for (const auto& id : ids) {
    const auto& c = ds.at(id);
    if (c.language == q.language) continue;
    hits.push_back({id, score(q, c), c.task_id == q.task_id});
  }
  std::sort(hits.begin(), hits.end(),
            [](const RankedHit& a, const RankedHit& b) { return a.sim != b.sim ? a.sim > b.sim : a.id < b.id; });
  return hits;
}

// Each query ranks the other-language graphs of `index`. Queries without any
// relevant candidate are skipped.
inline Metrics evaluate_retrieval(const Dataset& ds, const std::vector<std::string>& queries,
                                  const std::vector<std::string>& index, const PairScorer& score, std::size_t k = 4) {
  Metrics m;
  m.k = k;
  std::size_t n = 0;
  for (const auto& q : queries) {
    auto hits = rank_candidates(ds, q, index, score);
    std::vector<bool> rel;
    for (const auto& h : hits) rel.push_back(h.relevant);
    if (std::find(rel.begin(), rel.end(), true) == rel.end()) continue;
    m.mrr += reciprocal_rank(rel);
    m.precision_at_k += precision_at_k(rel, k);
    ++n;
  }
  if (n > 0) {
    m.mrr /= static_cast<double>(n);
    m.precision_at_k /= static_cast<double>(n);
  }
  return m;
}

// every graph of `ids` queries the rest
inline Metrics evaluate_retrieval(const Dataset& ds, const std::vector<std::string>& ids, const PairScorer& score,
                                  std::size_t k = 4) {
  return evaluate_retrieval(ds, ids, ids, score, k);
}

template <class Real>
PairScorer gmn_scorer(const GmnModel<Real>& model) {
  return [&model](const UnifiedAst& a, const UnifiedAst& b) { return pair_similarity(model, a, b); };
}

template <class Real>
std::vector<double> pair_similarities(const GmnModel<Real>& model, const Dataset& ds,
                                      const std::vector<PairExample>& pairs) {
  std::vector<double> sims;
  sims.reserve(pairs.size());
  for (const auto& p : pairs) sims.push_back(pair_similarity(model, ds.at(p.g1_id), ds.at(p.g2_id)));
  return sims;
}

// ---------------------------------------------------------------------------
// Embedding index: "EMBIDX1", u32 dim, then per entry u32 id length, id
// bytes, dim little-endian float32 values.

inline constexpr std::string_view kIndexMagic = "EMBIDX1";

struct EmbeddingIndex {
  std::size_t dim = 0;
  std::vector<GraphEmbedding> entries;

  template <class Real>
  static EmbeddingIndex build(const GmnModel<Real>& model, const Dataset& ds, const std::vector<std::string>& ids) {
    EmbeddingIndex idx;
    idx.dim = model.config.hidden_dim();
    for (const auto& id : ids) idx.entries.push_back(embed_graph(model, ds.at(id)));
    return idx;
  }

  std::string serialize() const {
    std::string out(kIndexMagic);
    diff::detail::put_le(out, static_cast<std::uint32_t>(dim));
    for (const auto& e : entries) {
      diff::detail::put_le(out, static_cast<std::uint32_t>(e.graph_id.size()));
      out += e.graph_id;
      for (float v : e.vector) diff::detail::put_f32(out, v);
    }
    return out;
  }

  static EmbeddingIndex deserialize(std::string_view bytes) {
    if (bytes.substr(0, kIndexMagic.size()) != kIndexMagic) throw FormatError("not an embedding index");
    std::size_t pos = kIndexMagic.size();
    EmbeddingIndex idx;
    idx.dim = diff::detail::get_le<std::uint32_t>(bytes, pos);
    while (pos < bytes.size()) {
      const auto len = diff::detail::get_le<std::uint32_t>(bytes, pos);
      if (pos + len > bytes.size()) throw FormatError("embedding index truncated");
      GraphEmbedding e{std::string(bytes.substr(pos, len)), {}};
      pos += len;
      for (std::size_t i = 0; i < idx.dim; ++i) e.vector.push_back(diff::detail::get_f32(bytes, pos));
      idx.entries.push_back(std::move(e));
    }
    return idx;
  }

  std::string to_tsv() const {
    std::ostringstream out;
    out.precision(9);
    for (const auto& e : entries) {
      out << e.graph_id;
      for (float v : e.vector) out << '\t' << v;
      out << '\n';
    }
    return out.str();
  }
};

// ---------------------------------------------------------------------------
// Training

enum class Objective { clone, retrieval };

struct TrainConfig {
  Objective objective = Objective::clone;
  std::size_t batch_size = 24;
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t max_steps = 0;  // 0 = no cap
  std::size_t neg_k = 10;
  LossConfig loss;
  NegativeKind negatives = NegativeKind::hard;
  MiningMode mining = MiningMode::static_histogram;
  NegativeKind eval_negatives = NegativeKind::hard;
  double hard_fraction = kDefaultHardFraction;
  std::uint64_t seed = 17;
  std::size_t jobs = 1;
  std::size_t k = 4;
  bool validate = true;
  GmnConfig model;
};

inline const char* objective_name(Objective o) { return o == Objective::clone ? "clone" : "retrieval"; }

inline json to_json(const TrainConfig& c) {
  return {{"task", objective_name(c.objective)},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"neg_k", c.neg_k},
          {"tau", c.loss.tau},
          {"margin", c.loss.margin},
          {"loss_form", form_name(c.loss.form)},
          {"negatives", c.negatives == NegativeKind::hard ? "hard" : "random"},
          {"mining", c.mining == MiningMode::static_histogram ? "static" : "dynamic"},
          {"eval_negatives", c.eval_negatives == NegativeKind::hard ? "hard" : "random"},
          {"hard_fraction", c.hard_fraction},
          {"seed", c.seed},
          {"k", c.k},
          {"model", to_json(c.model)}};
}

struct LogRecord {
  std::size_t epoch = 0, step = 0;
  double loss = 0;
  Metrics val;
};

inline json to_json(const LogRecord& r) {
  return {{"epoch", r.epoch},         {"step", r.step},         {"loss", r.loss},
          {"val_p", r.val.precision}, {"val_r", r.val.recall}, {"val_f1", r.val.f1},
          {"val_mrr", r.val.mrr}};
}

template <class Real>
struct TrainResult {
  GmnModel<Real> model;       // parameters after the last step
  GmnModel<Real> best;        // best validation parameters (later wins ties)
  std::vector<LogRecord> log;
  std::vector<double> step_losses;
  std::size_t steps = 0;
  double best_score = -1;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results land in index
// order so reductions stay deterministic.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, std::size_t jobs, F fn) {
  std::vector<T> out(n);
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

template <class Real>
struct StepOutput {
  double loss = 0;
  diff::GradientSet<Real> grads;
};

}  // namespace detail

template <class Real>
detail::StepOutput<Real> clone_step(const GmnModel<Real>& model, const Dataset& ds, const PairExample& p,
                                    const LossConfig& lc, std::uint64_t seed) {
  diff::Tape<Real> tape;
  auto m = bind(model, tape, true);
  auto f = encode_pair(m, ds.at(p.g1_id), ds.at(p.g2_id), true, seed);
  auto loss = clone_loss(f.v1, f.v2, p.label, lc);
  const double value = static_cast<double>(loss.item());
  tape.backward(loss);
  return {value, collect_gradients(m)};
}

template <class Real>
detail::StepOutput<Real> retrieval_step(const GmnModel<Real>& model, const Dataset& ds, const RetrievalExample& ex,
                                        const LossConfig& lc, std::uint64_t seed) {
  diff::Tape<Real> tape;
  auto m = bind(model, tape, true);
  const auto& anchor = ds.at(ex.anchor_id);
  std::vector<diff::Var<Real>> sims;
  sims.push_back(encode_pair(m, anchor, ds.at(ex.positive_id), true, mix64(seed, 0)).similarity);
  for (std::size_t i = 0; i < ex.negative_ids.size(); ++i)
    sims.push_back(encode_pair(m, anchor, ds.at(ex.negative_ids[i]), true, mix64(seed, i + 1)).similarity);
  auto loss = retrieval_loss(diff::concat_cols(std::span<const diff::Var<Real>>(sims)), lc.tau);
  const double value = static_cast<double>(loss.item());
  tape.backward(loss);
  return {value, collect_gradients(m)};
}

// Validation metrics for the objective: P/R/F1 at the F1-optimal threshold
// for clone detection, MRR and P@k for retrieval.
template <class Real>
Metrics validate(const GmnModel<Real>& model, const Dataset& ds, const std::vector<std::string>& ids,
                 const TrainConfig& cfg, const std::vector<PairExample>* pairs = nullptr) {
  if (cfg.objective == Objective::retrieval) return evaluate_retrieval(ds, ids, gmn_scorer(model), cfg.k);
  std::vector<PairExample> own;
  if (!pairs) {
    own = build_clone_pairs(ds, ids, cfg.eval_negatives, cfg.seed, nullptr, cfg.hard_fraction);
    pairs = &own;
  }
  auto sims = pair_similarities(model, ds, *pairs);
  std::vector<int> labels;
  for (const auto& p : *pairs) labels.push_back(p.label);
  const double t = select_threshold(sims, labels);
  auto m = classification_metrics(confusion_at(sims, labels, t), false);
  m.threshold = t;
  return m;
}

template <class Real>
TrainResult<Real> train(GmnModel<Real> model, const Dataset& ds, const SplitManifest& splits, const TrainConfig& cfg,
                        std::ostream* log_out = nullptr) {
  const auto train_ids = ds.ids_in(splits.train);
  const auto valid_ids = ds.ids_in(splits.valid);
  if (train_ids.empty()) throw EmptyCorpus("no training graphs in the split");
  if (cfg.batch_size == 0) throw Error("batch size must be positive");

  TrainResult<Real> result{model, model, {}, {}, 0, -1};
  auto state = diff::AdamState<Real>::for_parameters(result.model.params, {cfg.lr});
  std::vector<PairExample> valid_pairs;
  if (cfg.validate && cfg.objective == Objective::clone && !valid_ids.empty())
    valid_pairs = build_clone_pairs(ds, valid_ids, cfg.eval_negatives, cfg.seed, nullptr, cfg.hard_fraction);

  std::vector<PairExample> clone_pairs;
  if (cfg.objective == Objective::clone && !(cfg.negatives == NegativeKind::hard && cfg.mining == MiningMode::dynamic_model))
    clone_pairs = build_clone_pairs(ds, train_ids, cfg.negatives, derive_seed(cfg.seed, "train-pairs"), nullptr,
                                    cfg.hard_fraction);

  std::optional<RankingVectors> static_vectors;
  if (cfg.objective == Objective::retrieval && cfg.negatives == NegativeKind::hard &&
      cfg.mining == MiningMode::static_histogram)
    static_vectors = static_ranking_vectors(ds, train_ids);

  bool done = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
    const std::uint64_t epoch_seed = mix64(cfg.seed, epoch);
    Rng rng(epoch_seed);
    // Dynamic mining refreshes its ranking once per epoch.
    std::optional<RankingVectors> dynamic_vectors;
    if (cfg.negatives == NegativeKind::hard && cfg.mining == MiningMode::dynamic_model)
      dynamic_vectors = model_ranking_vectors(ds, train_ids, result.model);
    if (cfg.objective == Objective::clone && dynamic_vectors)
      clone_pairs = build_clone_pairs(ds, train_ids, NegativeKind::hard, derive_seed(cfg.seed, "train-pairs"),
                                      &*dynamic_vectors, cfg.hard_fraction);

    std::vector<RetrievalExample> examples;
    std::size_t count = 0;
    if (cfg.objective == Objective::clone) {
      count = clone_pairs.size();
    } else {
      const RankingVectors* hard = dynamic_vectors ? &*dynamic_vectors : static_vectors ? &*static_vectors : nullptr;
      examples = make_retrieval_examples(ds, train_ids, cfg.neg_k, rng, hard);
      count = examples.size();
    }
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    rng.shuffle(order);

    double epoch_loss = 0;
    std::size_t epoch_items = 0;
    for (std::size_t start = 0; start < count; start += cfg.batch_size) {
      if (cfg.max_steps && result.steps >= cfg.max_steps) {
        done = true;
        break;
      }
      const std::size_t n = std::min(cfg.batch_size, count - start);
      const std::uint64_t step_seed = mix64(epoch_seed, result.steps + 1);
      auto outputs = detail::parallel_map<detail::StepOutput<Real>>(n, cfg.jobs, [&](std::size_t i) {
        const std::size_t item = order[start + i];
        try {
          return cfg.objective == Objective::clone
                     ? clone_step(result.model, ds, clone_pairs[item], cfg.loss, mix64(step_seed, i))
                     : retrieval_step(result.model, ds, examples[item], cfg.loss, mix64(step_seed, i));
        } catch (const NonFiniteValue& e) {
          const std::string what = cfg.objective == Objective::clone
                                       ? clone_pairs[item].g1_id + " / " + clone_pairs[item].g2_id
                                       : examples[item].anchor_id;
          throw NonFiniteLoss("non-finite value at epoch " + std::to_string(epoch) + " step " +
                              std::to_string(result.steps + 1) + " on " + what + ": " + e.what());
        }
      });
      auto grads = diff::GradientSet<Real>::zeros_like(result.model.params);
      double batch_loss = 0;
      for (const auto& o : outputs) {
        grads += o.grads;
        batch_loss += o.loss;
      }
      batch_loss /= static_cast<double>(n);
      if (!std::isfinite(batch_loss) || !grads.all_finite()) {
        throw NonFiniteLoss("non-finite loss or gradient at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(result.steps + 1));
      }
      grads.scale(static_cast<Real>(1.0 / static_cast<double>(n)));
      diff::adam_step(result.model.params, grads, state);
      ++result.steps;
      result.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss * static_cast<double>(n);
      epoch_items += n;
    }
    if (epoch_items == 0) break;

    LogRecord rec{epoch, result.steps, epoch_loss / static_cast<double>(epoch_items), {}};
    if (cfg.validate && !valid_ids.empty()) {
      rec.val = validate(result.model, ds, valid_ids, cfg, &valid_pairs);
      const double score = cfg.objective == Objective::clone ? rec.val.f1 : rec.val.mrr;
      if (score >= result.best_score) {
        result.best_score = score;
        result.best = result.model;
      }
    } else {
      result.best = result.model;
    }
    result.log.push_back(rec);
    if (log_out) *log_out << to_json(rec).dump() << '\n';
    log::info("epoch " + std::to_string(epoch) + " step " + std::to_string(result.steps) +
              " loss " + std::to_string(rec.loss));
  }
  if (result.log.empty()) result.best = result.model;
  return result;
}

}  // namespace astbridge
