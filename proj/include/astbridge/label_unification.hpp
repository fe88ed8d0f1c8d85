#pragma once

// Universal label set construction: grammar-driven node signatures, cosine
// similarity, union-find clustering at a threshold, structural merging of
// compatible clusters, and remapping of rare or context-heterogeneous labels
// to a shared Other category.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "astbridge/ast_interchange.hpp"
#include "astbridge/error.hpp"
#include "astbridge/hash.hpp"
#include "astbridge/log.hpp"
#include "astbridge/union_find.hpp"

namespace astbridge {

inline constexpr double kDefaultLabelThreshold = 0.75;
inline constexpr std::size_t kDefaultMinFrequency = 10;
inline constexpr double kDefaultMaxHeterogeneity = 0.9;

struct LabelKey {
  std::string language;
  std::string type_name;

  auto operator<=>(const LabelKey&) const = default;
  bool operator==(const LabelKey&) const = default;

  std::string str() const { return language + ":" + type_name; }
};

using LabelId = std::uint32_t;

// ---------------------------------------------------------------------------
// Grammar schemas

struct NodeSpec {
  std::vector<std::string> field_names;
  std::vector<std::string> child_types;
  std::vector<bool> optional_flags;    // one per field
  std::vector<bool> repeatable_flags;  // one per field
  std::size_t arity_min = 0;
  std::optional<std::size_t> arity_max;  // nullopt = unbounded
  bool declared = true;                  // false for the fallback spec
};

struct GrammarSchema {
  std::string language;
  std::map<std::string, NodeSpec> node_specs;

  // The declared spec, or an undeclared fallback with unbounded arity.
  NodeSpec spec_for(const std::string& type_name) const {
    if (auto it = node_specs.find(type_name); it != node_specs.end()) return it->second;
    NodeSpec fallback;
    fallback.declared = false;
    return fallback;
  }
};

inline GrammarSchema grammar_schema_from_json(const json& doc) {
  GrammarSchema schema;
  schema.language = detail::get_as<std::string>(
      detail::require(doc, "language", "schema"), "language", "schema");
  const json& specs = detail::require(doc, "node_specs", "schema");
  if (!specs.is_object()) throw SchemaError("schema: node_specs must be an object");
  for (const auto& [name, js] : specs.items()) {
    NodeSpec spec;
    spec.field_names = js.value("field_names", std::vector<std::string>{});
    spec.child_types = js.value("child_types", std::vector<std::string>{});
    spec.optional_flags = js.value("optional_flags", std::vector<bool>{});
    spec.repeatable_flags = js.value("repeatable_flags", std::vector<bool>{});
    spec.arity_min = js.value("arity_min", std::size_t{0});
    if (js.contains("arity_max") && !js.at("arity_max").is_null()) {
      spec.arity_max = js.at("arity_max").get<std::size_t>();
    }
    schema.node_specs.emplace(name, std::move(spec));
  }
  return schema;
}

inline json to_json(const GrammarSchema& schema) {
  json specs = json::object();
  for (const auto& [name, spec] : schema.node_specs) {
    specs[name] = {{"field_names", spec.field_names},
                   {"child_types", spec.child_types},
                   {"optional_flags", spec.optional_flags},
                   {"repeatable_flags", spec.repeatable_flags},
                   {"arity_min", spec.arity_min},
                   {"arity_max", spec.arity_max ? json(*spec.arity_max) : json(nullptr)}};
  }
  return {{"language", schema.language}, {"node_specs", std::move(specs)}};
}

// Reads every *.json schema in a directory, keyed by language.
inline std::map<std::string, GrammarSchema> load_schemas(const std::filesystem::path& dir) {
  std::map<std::string, GrammarSchema> out;
  if (dir.empty() || !std::filesystem::is_directory(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    if (f.is_regular_file() && f.path().extension() == ".json") files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    GrammarSchema s = grammar_schema_from_json(read_json_file(f));
    out[s.language] = std::move(s);
  }
  return out;
}

// Occurrence statistics of (language, type_name) keys over a set of trees.
struct CorpusStats {
  std::map<LabelKey, std::size_t> counts;
  std::map<LabelKey, std::set<LabelKey>> parent_keys;
  std::map<LabelKey, std::set<std::string>> child_types;
  std::map<LabelKey, std::pair<std::size_t, std::size_t>> arity;  // observed min, max
};

inline CorpusStats collect_corpus_stats(std::span<const ParseTree> trees) {
  CorpusStats stats;
  for (const auto& tree : trees) {
    for (const auto& node : tree.nodes) {
      LabelKey key{tree.language, node.type_name};
      ++stats.counts[key];
      auto [it, fresh] = stats.arity.try_emplace(key, node.children.size(), node.children.size());
      if (!fresh) {
        it->second.first = std::min(it->second.first, node.children.size());
        it->second.second = std::max(it->second.second, node.children.size());
      }
      for (NodeId c : node.children) {
        const LabelKey child{tree.language, tree.nodes[c].type_name};
        stats.parent_keys[child].insert(key);
        stats.child_types[key].insert(child.type_name);
      }
    }
  }
  return stats;
}

// Spec derived from what the corpus shows, for types a grammar does not declare.
inline NodeSpec synthesize_spec(const CorpusStats& stats, const LabelKey& key) {
  NodeSpec spec;
  if (auto it = stats.child_types.find(key); it != stats.child_types.end()) {
    spec.child_types.assign(it->second.begin(), it->second.end());
  }
  if (auto it = stats.arity.find(key); it != stats.arity.end()) {
    spec.arity_min = it->second.first;
    spec.arity_max = it->second.second;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Signatures

inline constexpr std::size_t kNameBins = 256;
inline constexpr std::size_t kSchemaBins = 192;
inline constexpr std::size_t kStructureBins = 64;
inline constexpr std::size_t kSignatureDim = kNameBins + kSchemaBins + kStructureBins;

// Relative weights of the three unit-normalized blocks; names dominate.
inline constexpr double kNameWeight = 1.0;
inline constexpr double kSchemaWeight = 0.45;
inline constexpr double kStructureWeight = 0.3;

struct NodeSignature {
  LabelKey key;
  std::vector<double> features;  // kSignatureDim entries, unit L2 norm
  std::string text;              // description sent to external embedders
  std::size_t arity_min = 0;
  std::optional<std::size_t> arity_max;
};

namespace detail {

inline void add_trigrams(std::string_view s, std::span<double> bins) {
  if (s.empty()) return;
  if (s.size() < 3) {
    bins[fnv1a(s) % bins.size()] += 1.0;
    return;
  }
  for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
    bins[fnv1a(s.substr(i, 3)) % bins.size()] += 1.0;
  }
}

inline double normalize_block(std::span<double> block, double weight) {
  double sq = 0.0;
  for (double v : block) sq += v * v;
  if (sq == 0.0) return 0.0;
  const double scale = weight / std::sqrt(sq);
  for (double& v : block) v *= scale;
  return weight;
}

inline std::size_t count_true(const std::vector<bool>& flags) {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

}  // namespace detail

// Signature of one node type: hashed name trigrams, hashed trigrams over the
// grammar's field and child type names, and bucketed arity / field counts.
inline NodeSignature build_signature(const NodeSpec& spec, const LabelKey& key) {
  NodeSignature sig;
  sig.key = key;
  sig.arity_min = spec.arity_min;
  sig.arity_max = spec.arity_max;
  sig.features.assign(kSignatureDim, 0.0);
  std::span<double> all(sig.features);
  auto name_block = all.subspan(0, kNameBins);
  auto schema_block = all.subspan(kNameBins, kSchemaBins);
  auto structure_block = all.subspan(kNameBins + kSchemaBins, kStructureBins);

  detail::add_trigrams(normalize_type_name(key.type_name), name_block);
  for (const auto& f : spec.field_names) detail::add_trigrams(normalize_type_name(f), schema_block);
  for (const auto& c : spec.child_types) detail::add_trigrams(normalize_type_name(c), schema_block);

  if (spec.declared) {
    // 16 bins arity_min, 16 arity_max (last = unbounded), 12 optional count,
    // 12 repeatable count, 8 field count; one-hot each.
    structure_block[std::min<std::size_t>(spec.arity_min, 15)] = 1.0;
    structure_block[16 + (spec.arity_max ? std::min<std::size_t>(*spec.arity_max, 14) : 15)] = 1.0;
    structure_block[32 + std::min<std::size_t>(detail::count_true(spec.optional_flags), 11)] = 1.0;
    structure_block[44 + std::min<std::size_t>(detail::count_true(spec.repeatable_flags), 11)] = 1.0;
    structure_block[56 + std::min<std::size_t>(spec.field_names.size(), 7)] = 1.0;
  }

  double total = 0.0;
  const double wn = detail::normalize_block(name_block, kNameWeight);
  const double ws = detail::normalize_block(schema_block, kSchemaWeight);
  const double wc = detail::normalize_block(structure_block, kStructureWeight);
  total = wn * wn + ws * ws + wc * wc;
  if (total == 0.0) throw EmptySignature("signature of " + key.str() + " is empty");
  const double inv = 1.0 / std::sqrt(total);
  for (double& v : sig.features) v *= inv;

  sig.text = key.type_name;
  if (!spec.field_names.empty()) {
    sig.text += " fields:";
    for (const auto& f : spec.field_names) sig.text += " " + f;
  }
  if (!spec.child_types.empty()) {
    sig.text += " children:";
    for (const auto& c : spec.child_types) sig.text += " " + c;
  }
  return sig;
}

inline NodeSignature build_signature(const GrammarSchema& schema, const std::string& type_name) {
  return build_signature(schema.spec_for(type_name), LabelKey{schema.language, type_name});
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeMismatch("cosine over vectors of different length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Similarity providers

// Maps texts to embedding vectors; throws ProviderUnavailable on failure.
using EmbedFunction = std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)>;

class SimilarityProvider {
 public:
  enum class Kind { builtin, external };

  SimilarityProvider() = default;

  static SimilarityProvider external(std::string endpoint, EmbedFunction embed) {
    SimilarityProvider p;
    p.kind_ = Kind::external;
    p.endpoint_ = std::move(endpoint);
    p.embed_ = std::move(embed);
    return p;
  }

  Kind kind() const { return kind_; }
  const std::optional<std::string>& endpoint() const { return endpoint_; }

  // Embeds all signature texts in one request (external kind only).
  void prefetch(std::span<const NodeSignature> sigs) {
    if (kind_ != Kind::external) return;
    std::vector<std::string> texts;
    std::vector<LabelKey> keys;
    for (const auto& s : sigs) {
      if (!vectors_.contains(s.key)) {
        texts.push_back(s.key.language + " " + s.text);
        keys.push_back(s.key);
      }
    }
    if (texts.empty()) return;
    auto vecs = embed_(texts);
    if (vecs.size() != texts.size()) {
      throw ProviderUnavailable("embedding service returned " + std::to_string(vecs.size()) +
                                " vectors for " + std::to_string(texts.size()) + " texts");
    }
    for (std::size_t i = 0; i < keys.size(); ++i) vectors_[keys[i]] = std::move(vecs[i]);
  }

  double similarity(const NodeSignature& a, const NodeSignature& b) {
    if (a.key == b.key) return 1.0;
    auto cache_key = a.key < b.key ? std::make_pair(a.key, b.key) : std::make_pair(b.key, a.key);
    if (auto it = cache_.find(cache_key); it != cache_.end()) return it->second;
    double score = 0.0;
    if (kind_ == Kind::builtin) {
      score = cosine(a.features, b.features);
    } else {
      const NodeSignature pair[] = {a, b};
      prefetch(pair);
      score = cosine(vectors_.at(a.key), vectors_.at(b.key));
    }
    cache_.emplace(std::move(cache_key), score);
    return score;
  }

  const std::map<std::pair<LabelKey, LabelKey>, double>& cache() const { return cache_; }

 private:
  Kind kind_ = Kind::builtin;
  std::optional<std::string> endpoint_;
  EmbedFunction embed_;
  std::map<LabelKey, std::vector<double>> vectors_;
  std::map<std::pair<LabelKey, LabelKey>, double> cache_;
};

inline double pairwise_similarity(const NodeSignature& a, const NodeSignature& b,
                                  SimilarityProvider& provider) {
  if (provider.kind() == SimilarityProvider::Kind::builtin && a.features.size() != b.features.size()) {
    throw ShapeMismatch("signature dimensions differ");
  }
  return provider.similarity(a, b);
}

// ---------------------------------------------------------------------------
// Clustering

// Clusters of keys, each sorted ascending; clusters ordered by first key.
using Partition = std::vector<std::vector<LabelKey>>;

inline void canonicalize(Partition& p) {
  for (auto& c : p) std::sort(c.begin(), c.end());
  std::erase_if(p, [](const auto& c) { return c.empty(); });
  std::sort(p.begin(), p.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
}

// Connected components of the graph {(i, j) : sim(i, j) >= threshold}.
inline Partition cluster_by_similarity(std::span<const LabelKey> keys,
                                       const std::function<double(std::size_t, std::size_t)>& sim,
                                       double threshold) {
  DisjointSet dsu(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::size_t j = i + 1; j < keys.size(); ++j) {
      if (sim(i, j) >= threshold) dsu.unite(i, j);
    }
  }
  Partition out;
  for (const auto& group : dsu.groups()) {
    std::vector<LabelKey> cluster;
    for (std::size_t i : group) cluster.push_back(keys[i]);
    out.push_back(std::move(cluster));
  }
  canonicalize(out);
  return out;
}

inline Partition cluster_labels(std::span<const NodeSignature> signatures, double threshold,
                                SimilarityProvider& provider) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error("cluster threshold must lie in (0, 1]");
  }
  provider.prefetch(signatures);
  std::vector<LabelKey> keys;
  keys.reserve(signatures.size());
  for (const auto& s : signatures) keys.push_back(s.key);
  return cluster_by_similarity(
      keys,
      [&](std::size_t i, std::size_t j) {
        return pairwise_similarity(signatures[i], signatures[j], provider);
      },
      threshold);
}

inline Partition cluster_labels(std::span<const NodeSignature> signatures,
                                double threshold = kDefaultLabelThreshold) {
  SimilarityProvider builtin;
  return cluster_labels(signatures, threshold, builtin);
}

using SignatureCatalog = std::map<LabelKey, NodeSignature>;

namespace detail {

inline std::vector<double> centroid(const std::vector<LabelKey>& cluster, const SignatureCatalog& sigs) {
  std::vector<double> c;
  for (const auto& k : cluster) {
    const auto& f = sigs.at(k).features;
    if (c.empty()) c.assign(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) c[i] += f[i];
  }
  for (double& v : c) v /= static_cast<double>(cluster.size());
  return c;
}

inline bool arity_overlap(const NodeSignature& a, const NodeSignature& b) {
  const bool lo_ok = !b.arity_max || a.arity_min <= *b.arity_max;
  const bool hi_ok = !a.arity_max || b.arity_min <= *a.arity_max;
  return lo_ok && hi_ok;
}

// Fraction of members (of both clusters) whose arity range overlaps the
// range of at least one member of the other cluster.
inline double compatible_fraction(const std::vector<LabelKey>& p, const std::vector<LabelKey>& q,
                                  const SignatureCatalog& sigs) {
  auto count = [&](const auto& from, const auto& to) {
    std::size_t n = 0;
    for (const auto& a : from) {
      for (const auto& b : to) {
        if (arity_overlap(sigs.at(a), sigs.at(b))) {
          ++n;
          break;
        }
      }
    }
    return n;
  };
  const std::size_t ok = count(p, q) + count(q, p);
  return static_cast<double>(ok) / static_cast<double>(p.size() + q.size());
}

}  // namespace detail

// Merges cluster pairs with centroid cosine >= threshold whose members are
// arity-compatible for at least half of them. Runs to a fixed point, so a
// second application changes nothing.
inline Partition merge_equivalent_clusters(Partition partition, const SignatureCatalog& sigs,
                                           double threshold = kDefaultLabelThreshold) {
  canonicalize(partition);
  bool merged = true;
  while (merged) {
    merged = false;
    std::vector<std::vector<double>> centroids;
    centroids.reserve(partition.size());
    for (const auto& c : partition) centroids.push_back(detail::centroid(c, sigs));
    for (std::size_t i = 0; i < partition.size() && !merged; ++i) {
      for (std::size_t j = i + 1; j < partition.size() && !merged; ++j) {
        if (cosine(centroids[i], centroids[j]) < threshold) continue;
        if (detail::compatible_fraction(partition[i], partition[j], sigs) < 0.5) continue;
        partition[i].insert(partition[i].end(), partition[j].begin(), partition[j].end());
        partition.erase(partition.begin() + static_cast<std::ptrdiff_t>(j));
        canonicalize(partition);
        merged = true;
      }
    }
  }
  return partition;
}

// ---------------------------------------------------------------------------
// Universal label set

struct UniversalLabel {
  LabelId id = 0;
  std::string name;
  friend bool operator==(const UniversalLabel&, const UniversalLabel&) = default;
};

struct UniversalLabelSet {
  int version = 1;
  double threshold = kDefaultLabelThreshold;
  std::vector<UniversalLabel> labels;  // includes Other
  std::map<LabelKey, LabelId> mapping;
  LabelId other_id = 0;

  std::size_t size() const { return labels.size(); }

  // Label of the synthetic global root; one past the last stored label.
  LabelId global_root_id() const { return static_cast<LabelId>(labels.size()); }

  LabelId lookup(const std::string& language, const std::string& type_name) const {
    if (auto it = mapping.find(LabelKey{language, type_name}); it != mapping.end()) return it->second;
    return other_id;
  }

  const std::string& name_of(LabelId id) const {
    static const std::string global_root = "GLOBAL_ROOT";
    if (id == global_root_id()) return global_root;
    return labels.at(id).name;
  }

  // Member type names per label, for policy matching.
  std::vector<std::vector<LabelKey>> members() const {
    std::vector<std::vector<LabelKey>> out(labels.size());
    for (const auto& [k, id] : mapping) out[id].push_back(k);
    return out;
  }

  friend bool operator==(const UniversalLabelSet&, const UniversalLabelSet&) = default;
};

inline constexpr const char* kOtherLabelName = "OTHER";

inline double context_heterogeneity(const LabelKey& key, const CorpusStats& stats,
                                    const std::map<LabelKey, std::size_t>& cluster_of) {
  const auto count_it = stats.counts.find(key);
  if (count_it == stats.counts.end() || count_it->second == 0) return 0.0;
  // Parents outside the partition count individually.
  std::set<std::string> parent_labels;
  if (auto it = stats.parent_keys.find(key); it != stats.parent_keys.end()) {
    for (const auto& p : it->second) {
      auto c = cluster_of.find(p);
      parent_labels.insert(c != cluster_of.end() ? "#" + std::to_string(c->second) : p.str());
    }
  }
  return static_cast<double>(parent_labels.size()) / static_cast<double>(count_it->second);
}

// Keys seen fewer than f_min times, or whose distinct-parent-label count per
// occurrence exceeds h_max, go to Other; the rest keep their cluster label.
inline UniversalLabelSet map_rare_to_other(const Partition& partition, const CorpusStats& stats,
                                           std::size_t f_min = kDefaultMinFrequency,
                                           double h_max = kDefaultMaxHeterogeneity) {
  std::map<LabelKey, std::size_t> cluster_of;
  for (std::size_t c = 0; c < partition.size(); ++c) {
    for (const auto& k : partition[c]) cluster_of[k] = c;
  }
  auto kept = [&](const LabelKey& key) {
    const auto it = stats.counts.find(key);
    const std::size_t count = it == stats.counts.end() ? 0 : it->second;
    if (count < f_min) return false;
    return context_heterogeneity(key, stats, cluster_of) <= h_max;
  };

  UniversalLabelSet out;
  std::vector<std::pair<std::vector<LabelKey>, std::vector<LabelKey>>> surviving;  // kept, dropped
  std::vector<LabelKey> to_other;
  for (const auto& cluster : partition) {
    std::vector<LabelKey> keep, drop;
    for (const auto& k : cluster) (kept(k) ? keep : drop).push_back(k);
    if (keep.empty()) {
      to_other.insert(to_other.end(), drop.begin(), drop.end());
    } else {
      surviving.emplace_back(std::move(keep), std::move(drop));
    }
  }
  for (auto& [keep, drop] : surviving) {
    const auto id = static_cast<LabelId>(out.labels.size());
    out.labels.push_back({id, upper_snake(keep.front().type_name)});
    for (const auto& k : keep) out.mapping[k] = id;
    to_other.insert(to_other.end(), drop.begin(), drop.end());
  }
  out.other_id = static_cast<LabelId>(out.labels.size());
  out.labels.push_back({out.other_id, kOtherLabelName});
  for (const auto& k : to_other) out.mapping[k] = out.other_id;
  return out;
}

inline json to_json(const UniversalLabelSet& set) {
  json labels = json::array();
  for (const auto& l : set.labels) labels.push_back({{"id", l.id}, {"name", l.name}});
  json mapping = json::array();
  for (const auto& [k, id] : set.mapping) {
    mapping.push_back({{"language", k.language}, {"type_name", k.type_name}, {"label_id", id}});
  }
  return {{"version", set.version},
          {"threshold", set.threshold},
          {"labels", std::move(labels)},
          {"mapping", std::move(mapping)},
          {"other_id", set.other_id}};
}

inline UniversalLabelSet label_set_from_json(const json& doc) {
  UniversalLabelSet set;
  try {
    set.version = doc.at("version").get<int>();
    set.threshold = doc.at("threshold").get<double>();
    for (const auto& l : doc.at("labels")) {
      set.labels.push_back({l.at("id").get<LabelId>(), l.at("name").get<std::string>()});
    }
    for (const auto& m : doc.at("mapping")) {
      set.mapping[LabelKey{m.at("language").get<std::string>(), m.at("type_name").get<std::string>()}] =
          m.at("label_id").get<LabelId>();
    }
    set.other_id = doc.at("other_id").get<LabelId>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("label set: ") + e.what());
  }
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i].id != i) throw SchemaError("label set: label ids must be dense and ordered");
  }
  if (set.other_id >= set.labels.size()) throw SchemaError("label set: other_id out of range");
  return set;
}

// Hash of the canonical JSON form; recorded in checkpoint sidecars.
inline std::string label_set_hash(const UniversalLabelSet& set) {
  return hash_string(to_json(set).dump());
}

// ---------------------------------------------------------------------------
// Applying the mapping

struct LabeledTree {
  ParseTree tree;
  std::vector<LabelId> labels;  // universal label per node id
};

inline LabeledTree apply_mapping(const ParseTree& tree, const UniversalLabelSet& labels) {
  LabeledTree out{tree, {}};
  out.labels.reserve(tree.nodes.size());
  for (const auto& node : tree.nodes) out.labels.push_back(labels.lookup(tree.language, node.type_name));
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end build

struct UnifyConfig {
  double threshold = kDefaultLabelThreshold;
  std::size_t f_min = kDefaultMinFrequency;
  double h_max = kDefaultMaxHeterogeneity;
};

// Every key from the grammars and the training trees, with signatures.
inline SignatureCatalog build_signature_catalog(std::span<const ParseTree> trees,
                                                const std::map<std::string, GrammarSchema>& schemas,
                                                const CorpusStats& stats) {
  std::set<LabelKey> keys;
  for (const auto& [lang, schema] : schemas) {
    for (const auto& [name, spec] : schema.node_specs) keys.insert({lang, name});
  }
  for (const auto& tree : trees) {
    for (const auto& node : tree.nodes) keys.insert({tree.language, node.type_name});
  }
  SignatureCatalog catalog;
  for (const auto& key : keys) {
    NodeSpec spec;
    auto sit = schemas.find(key.language);
    if (sit != schemas.end() && sit->second.node_specs.contains(key.type_name)) {
      spec = sit->second.node_specs.at(key.type_name);
    } else {
      spec = synthesize_spec(stats, key);
    }
    catalog.emplace(key, build_signature(spec, key));
  }
  return catalog;
}

inline UniversalLabelSet build_label_set(std::span<const ParseTree> training_trees,
                                         const std::map<std::string, GrammarSchema>& schemas,
                                         const UnifyConfig& cfg, SimilarityProvider& provider) {
  const CorpusStats stats = collect_corpus_stats(training_trees);
  const SignatureCatalog catalog = build_signature_catalog(training_trees, schemas, stats);
  std::vector<NodeSignature> sigs;
  sigs.reserve(catalog.size());
  for (const auto& [k, s] : catalog) sigs.push_back(s);

  Partition partition;
  try {
    partition = cluster_labels(sigs, cfg.threshold, provider);
  } catch (const ProviderUnavailable& e) {
    log::warn(std::string("similarity provider unavailable, falling back to builtin: ") + e.what());
    SimilarityProvider builtin;
    partition = cluster_labels(sigs, cfg.threshold, builtin);
  }
  partition = merge_equivalent_clusters(std::move(partition), catalog, cfg.threshold);
  UniversalLabelSet set = map_rare_to_other(partition, stats, cfg.f_min, cfg.h_max);
  set.threshold = cfg.threshold;
  return set;
}

inline UniversalLabelSet build_label_set(std::span<const ParseTree> training_trees,
                                         const std::map<std::string, GrammarSchema>& schemas,
                                         const UnifyConfig& cfg = {}) {
  SimilarityProvider builtin;
  return build_label_set(training_trees, schemas, cfg, builtin);
}

}  // namespace astbridge
