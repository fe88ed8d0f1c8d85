#pragma once

// Turns a universally labeled parse tree into the graph consumed by the
// matching network: a synthetic global root above all top-level constructs,
// key-node flags, and seeded edge pruning that never touches protected edges
// and never disconnects the graph.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "astbridge/ast_interchange.hpp"
#include "astbridge/error.hpp"
#include "astbridge/hash.hpp"
#include "astbridge/label_unification.hpp"
#include "astbridge/random.hpp"

namespace astbridge {

inline constexpr double kDefaultPruneRatio = 0.4;

struct UnifiedNode {
  NodeId id = 0;
  LabelId label = 0;
  std::vector<std::string> attr_tokens;
  bool is_key = false;
  bool is_global_root = false;

  friend bool operator==(const UnifiedNode&, const UnifiedNode&) = default;
};

// Undirected edge stored with a < b.
struct Edge {
  NodeId a = 0;
  NodeId b = 0;

  static Edge of(NodeId u, NodeId v) { return u < v ? Edge{u, v} : Edge{v, u}; }
  bool touches(NodeId n) const { return a == n || b == n; }

  auto operator<=>(const Edge&) const = default;
  bool operator==(const Edge&) const = default;
};

struct UnifiedAst {
  std::string graph_id;
  std::string language;
  std::string task_id;
  std::vector<UnifiedNode> nodes;  // nodes[i].id == i
  std::vector<Edge> edges;         // sorted, unique
  NodeId root = 0;                 // tree root, or the global root once inserted

  std::size_t size() const { return nodes.size(); }

  std::optional<NodeId> global_root() const {
    for (const auto& n : nodes)
      if (n.is_global_root) return n.id;
    return std::nullopt;
  }

  std::vector<std::vector<NodeId>> adjacency() const {
    std::vector<std::vector<NodeId>> adj(nodes.size());
    for (const auto& e : edges) {
      adj[e.a].push_back(e.b);
      adj[e.b].push_back(e.a);
    }
    return adj;
  }

  friend bool operator==(const UnifiedAst&, const UnifiedAst&) = default;
};

// True when every node is reachable from node 0, optionally ignoring one edge.
inline bool is_connected(std::size_t node_count, const std::vector<Edge>& edges,
                         std::optional<std::size_t> skip_edge = std::nullopt) {
  if (node_count <= 1) return true;
  std::vector<std::vector<NodeId>> adj(node_count);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (skip_edge && *skip_edge == i) continue;
    adj[edges[i].a].push_back(edges[i].b);
    adj[edges[i].b].push_back(edges[i].a);
  }
  std::vector<bool> seen(node_count, false);
  std::queue<NodeId> q;
  q.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!q.empty()) {
    const NodeId cur = q.front();
    q.pop();
    for (NodeId nb : adj[cur]) {
      if (!seen[nb]) {
        seen[nb] = true;
        ++reached;
        q.push(nb);
      }
    }
  }
  return reached == node_count;
}

inline bool is_connected(const UnifiedAst& g) { return is_connected(g.nodes.size(), g.edges); }

// Graph view of a labeled tree: parent-child pairs become undirected edges.
inline UnifiedAst to_graph(const LabeledTree& lt, std::string graph_id, std::string task_id,
                           std::size_t max_attr_tokens = kDefaultMaxAttrTokens) {
  UnifiedAst g;
  g.graph_id = std::move(graph_id);
  g.task_id = std::move(task_id);
  g.language = lt.tree.language;
  g.root = lt.tree.root;
  for (const auto& node : lt.tree.nodes) {
    g.nodes.push_back({node.id, lt.labels.at(node.id), tokenize_attrs(node.attrs, max_attr_tokens), false, false});
    for (NodeId c : node.children) g.edges.push_back(Edge::of(node.id, c));
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

// File or module wrappers whose children are the real top-level constructs.
inline bool is_wrapper_type(std::string_view type_name) {
  static const std::set<std::string, std::less<>> kWrappers = {
      "module", "program", "compilationunit", "translationunit", "sourcefile", "file", "script"};
  return kWrappers.contains(normalize_type_name(type_name));
}

// Adds a GLOBAL_ROOT node connected to every top-level construct. With
// collapse_wrapper, the children of the tree root attach to the global root
// directly and the wrapper stays as a leaf under it. No-op if already rooted.
inline UnifiedAst insert_global_root(UnifiedAst g, LabelId global_root_label, bool collapse_wrapper) {
  if (g.global_root()) return g;
  if (g.nodes.empty()) throw MalformedTree("insert_global_root on an empty graph");
  const NodeId gr = g.nodes.size();
  g.nodes.push_back({gr, global_root_label, {}, false, true});
  const NodeId old_root = g.root;
  if (collapse_wrapper) {
    std::vector<Edge> kept;
    std::vector<NodeId> top;
    for (const auto& e : g.edges) {
      if (e.touches(old_root)) {
        top.push_back(e.a == old_root ? e.b : e.a);
      } else {
        kept.push_back(e);
      }
    }
    g.edges = std::move(kept);
    for (NodeId t : top) g.edges.push_back(Edge::of(gr, t));
  }
  g.edges.push_back(Edge::of(gr, old_root));
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.root = gr;
  return g;
}

// ---------------------------------------------------------------------------
// Key nodes

struct KeyNodePolicy {
  std::set<LabelId> key_label_ids;
};

inline const std::vector<std::string>& default_key_label_names() {
  static const std::vector<std::string> names = {"FOR",      "WHILE",      "IF",     "SWITCH",    "TRY",
                                                 "FUNC_DEF", "VAR_DECL",   "CLASS_DECL", "RETURN", "CALL",
                                                 "CONST_NUM", "CONST_STR", "TYPE_REF"};
  return names;
}

// A policy name such as FUNC_DEF matches an upper-snake label name when its
// words are prefixes of an in-order subsequence of the label's words and the
// label words left over are generic (FUNC_DEF matches FUNCTION_DEFINITION,
// FOR matches FOR_STATEMENT but not FORMAL_PARAMETER).
inline bool policy_name_matches(std::string_view policy_name, std::string_view label_name) {
  auto words = [](std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (i == s.size() || s[i] == '_') {
        if (i > start) out.push_back(s.substr(start, i - start));
        start = i + 1;
      }
    }
    return out;
  };
  const auto want = words(policy_name);
  const auto have = words(label_name);
  if (want.empty()) return false;
  static const std::set<std::string_view> generic = {"STATEMENT", "STMT",   "EXPRESSION", "EXPR",
                                                     "CLAUSE",    "LITERAL", "NODE"};
  std::size_t k = 0;
  for (const auto& w : have) {
    if (k < want.size() && w.starts_with(want[k])) ++k;
    else if (!generic.contains(w)) return false;
  }
  return k == want.size();
}

// Resolves policy names against label display names and the upper-snake
// names of every member type.
inline KeyNodePolicy make_key_policy(const std::vector<std::string>& names, const UniversalLabelSet& labels) {
  KeyNodePolicy policy;
  const auto members = labels.members();
  for (const auto& label : labels.labels) {
    if (label.id == labels.other_id) continue;
    std::vector<std::string> candidates = {label.name};
    for (const auto& k : members[label.id]) candidates.push_back(upper_snake(k.type_name));
    const bool hit = std::any_of(names.begin(), names.end(), [&](const std::string& n) {
      return std::any_of(candidates.begin(), candidates.end(),
                         [&](const std::string& c) { return policy_name_matches(n, c); });
    });
    if (hit) policy.key_label_ids.insert(label.id);
  }
  if (policy.key_label_ids.empty()) throw Error("key node policy matches no universal label");
  return policy;
}

inline std::vector<std::string> load_policy_names(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  if (!doc.is_array()) throw SchemaError("policy file must be a JSON list of label names");
  return doc.get<std::vector<std::string>>();
}

inline UnifiedAst classify_key_nodes(UnifiedAst g, const KeyNodePolicy& policy) {
  for (auto& n : g.nodes) n.is_key = !n.is_global_root && policy.key_label_ids.contains(n.label);
  return g;
}

// ---------------------------------------------------------------------------
// Pruning

struct PruneConfig {
  double ratio = kDefaultPruneRatio;
  std::uint64_t seed = 17;
};

struct PruneReport {
  UnifiedAst graph;
  std::size_t deletable = 0;             // |D|
  std::size_t target = 0;                // floor(ratio * |D|)
  std::vector<Edge> removed;
  std::vector<Edge> protected_edges;
};

// Nodes whose incident edges are protected: the global root, key nodes and
// the first-order neighbors of key nodes.
inline std::vector<bool> protected_nodes(const UnifiedAst& g) {
  std::vector<bool> prot(g.nodes.size(), false);
  for (const auto& n : g.nodes) prot[n.id] = n.is_global_root || n.is_key;
  for (const auto& e : g.edges) {
    if (g.nodes[e.a].is_key) prot[e.b] = true;
    if (g.nodes[e.b].is_key) prot[e.a] = true;
  }
  return prot;
}

inline PruneReport prune_with_report(const UnifiedAst& g, const PruneConfig& cfg) {
  if (!(cfg.ratio >= 0.0 && cfg.ratio < 1.0)) throw Error("prune ratio must lie in [0, 1)");
  PruneReport report;
  const auto prot = protected_nodes(g);
  std::vector<Edge> deletable;
  for (const auto& e : g.edges) {
    if (prot[e.a] || prot[e.b]) {
      report.protected_edges.push_back(e);
    } else {
      deletable.push_back(e);
    }
  }
  report.deletable = deletable.size();
  report.target = static_cast<std::size_t>(cfg.ratio * static_cast<double>(deletable.size()));

  Rng rng(derive_seed(cfg.seed, g.graph_id));
  rng.shuffle(deletable);

  std::vector<Edge> current = g.edges;
  for (const auto& cand : deletable) {
    if (report.removed.size() >= report.target) break;
    const auto it = std::lower_bound(current.begin(), current.end(), cand);
    const auto idx = static_cast<std::size_t>(it - current.begin());
    if (!is_connected(g.nodes.size(), current, idx)) continue;
    current.erase(it);
    report.removed.push_back(cand);
  }
  report.graph = g;
  report.graph.edges = std::move(current);
  return report;
}

inline UnifiedAst prune(const UnifiedAst& g, const PruneConfig& cfg) { return prune_with_report(g, cfg).graph; }

// ---------------------------------------------------------------------------
// Full pipeline and file format

struct EnhanceConfig {
  PruneConfig prune;
  std::size_t max_attr_tokens = kDefaultMaxAttrTokens;
  bool enabled = true;  // false skips root insertion's wrapper collapse and pruning
};

inline UnifiedAst enhance(const ParseTree& tree, const UniversalLabelSet& labels, const KeyNodePolicy& policy,
                          const EnhanceConfig& cfg, std::string graph_id, std::string task_id) {
  const LabeledTree lt = apply_mapping(tree, labels);
  UnifiedAst g = to_graph(lt, std::move(graph_id), std::move(task_id), cfg.max_attr_tokens);
  const bool wrapper = cfg.enabled && is_wrapper_type(tree.nodes[tree.root].type_name);
  g = insert_global_root(std::move(g), labels.global_root_id(), wrapper);
  g = classify_key_nodes(std::move(g), policy);
  if (cfg.enabled) g = prune(g, cfg.prune);
  return g;
}

inline json to_json(const UnifiedAst& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes) {
    nodes.push_back({{"id", n.id},
                     {"universal_label_id", n.label},
                     {"attr_tokens", n.attr_tokens},
                     {"is_key", n.is_key},
                     {"is_global_root", n.is_global_root}});
  }
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back({e.a, e.b});
  return {{"graph_id", g.graph_id},
          {"language", g.language},
          {"task_id", g.task_id},
          {"nodes", std::move(nodes)},
          {"edges", std::move(edges)}};
}

inline UnifiedAst unified_ast_from_json(const json& doc) {
  UnifiedAst g;
  try {
    g.graph_id = doc.at("graph_id").get<std::string>();
    g.language = doc.at("language").get<std::string>();
    g.task_id = doc.at("task_id").get<std::string>();
    for (const auto& jn : doc.at("nodes")) {
      g.nodes.push_back({jn.at("id").get<NodeId>(), jn.at("universal_label_id").get<LabelId>(),
                         jn.at("attr_tokens").get<std::vector<std::string>>(), jn.at("is_key").get<bool>(),
                         jn.at("is_global_root").get<bool>()});
    }
    for (const auto& je : doc.at("edges")) g.edges.push_back(Edge::of(je.at(0).get<NodeId>(), je.at(1).get<NodeId>()));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("unified graph: ") + e.what());
  }
  std::sort(g.nodes.begin(), g.nodes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].id != i) throw MalformedTree("unified graph node ids must be dense");
  }
  for (const auto& e : g.edges) {
    if (e.b >= g.nodes.size()) throw MalformedTree("unified graph edge references a missing node");
    if (e.a == e.b) throw MalformedTree("unified graph has a self-loop");
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.root = g.global_root().value_or(0);
  return g;
}

}  // namespace astbridge
