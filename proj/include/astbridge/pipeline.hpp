#pragma once

// Glue from parse trees to a Dataset of unified graphs.

#include <map>
#include <string>
#include <vector>

#include "astbridge/ast_interchange.hpp"
#include "astbridge/label_unification.hpp"
#include "astbridge/structural_enhancement.hpp"
#include "astbridge/synthetic.hpp"
#include "astbridge/training.hpp"

namespace astbridge {

struct CorpusTree {
  std::string graph_id;
  std::string task_id;
  ParseTree tree;
};

inline std::vector<CorpusTree> load_corpus(const CorpusManifest& manifest, std::size_t max_nodes = kDefaultMaxNodes) {
  std::vector<CorpusTree> out;
  for (const auto& e : manifest.entries) {
    ParseTree t = load_parse_tree(e.path, max_nodes);
    if (t.language.empty()) t.language = e.language;
    out.push_back({e.graph_id(), e.task_id, std::move(t)});
  }
  return out;
}

inline std::vector<CorpusTree> from_synthetic(const synth::SynthCorpus& c) {
  std::vector<CorpusTree> out;
  for (const auto& s : c.snippets)
    out.push_back({s.task_id + "/" + s.tree.language + "/" + s.tree.source_id, s.task_id, s.tree});
  return out;
}

inline std::vector<ParseTree> trees_of(const std::vector<CorpusTree>& corpus) {
  std::vector<ParseTree> out;
  for (const auto& c : corpus) out.push_back(c.tree);
  return out;
}

inline std::vector<UnifiedAst> enhance_all(const std::vector<CorpusTree>& corpus, const UniversalLabelSet& labels,
                                           const KeyNodePolicy& policy, const EnhanceConfig& cfg) {
  std::vector<UnifiedAst> out;
  for (const auto& c : corpus) out.push_back(enhance(c.tree, labels, policy, cfg, c.graph_id, c.task_id));
  return out;
}

struct PreparedData {
  UniversalLabelSet labels;
  KeyNodePolicy policy;
  Dataset dataset;
};

// Labels are learned from the given training tasks only when `train_tasks`
// is non-empty; every snippet is then mapped and enhanced.
inline PreparedData prepare(const std::vector<CorpusTree>& corpus, const std::map<std::string, GrammarSchema>& schemas,
                            const UnifyConfig& ucfg, const EnhanceConfig& ecfg,
                            const std::set<std::string>& train_tasks = {}) {
  std::vector<ParseTree> label_trees;
  for (const auto& c : corpus)
    if (train_tasks.empty() || train_tasks.contains(c.task_id)) label_trees.push_back(c.tree);
  PreparedData p;
  p.labels = build_label_set(label_trees, schemas, ucfg);
  p.policy = make_key_policy(default_key_label_names(), p.labels);
  p.dataset = Dataset(enhance_all(corpus, p.labels, p.policy, ecfg));
  return p;
}

}  // namespace astbridge
