#pragma once

// Language-neutral parse-tree interchange format and corpus layout.
//
// A parse tree file is UTF-8 JSON with exactly these fields:
//   {language, source_id, root, nodes: [{id, type_name, attrs, children}]}
// A corpus is a directory tree corpus/<task_id>/<language>/<snippet_id>.json.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "astbridge/error.hpp"

namespace astbridge {

using json = nlohmann::json;
using NodeId = std::size_t;

inline constexpr std::size_t kDefaultMaxNodes = 400;
inline constexpr std::size_t kDefaultMaxAttrTokens = 8;

struct ParseNode {
  NodeId id = 0;
  std::string type_name;
  std::vector<std::string> attrs;
  std::vector<NodeId> children;

  friend bool operator==(const ParseNode&, const ParseNode&) = default;
};

struct ParseTree {
  std::string language;
  std::string source_id;
  NodeId root = 0;
  std::vector<ParseNode> nodes;  // nodes[i].id == i once validated

  std::size_t size() const { return nodes.size(); }
  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& node : nodes) n += node.children.size();
    return n;
  }

  friend bool operator==(const ParseTree&, const ParseTree&) = default;
};

// Checks every tree invariant and puts nodes in id order. Throws
// OversizeTree, MalformedTree or SchemaError.
inline void validate_parse_tree(ParseTree& tree,
                                std::size_t max_nodes = kDefaultMaxNodes) {
  const std::size_t n = tree.nodes.size();
  if (n == 0) throw MalformedTree("parse tree has no nodes");
  if (n > max_nodes) {
    throw OversizeTree("parse tree has " + std::to_string(n) +
                       " nodes, limit is " + std::to_string(max_nodes));
  }
  std::vector<int> seen(n, 0);
  for (const auto& node : tree.nodes) {
    if (node.id >= n) {
      throw MalformedTree("node id " + std::to_string(node.id) +
                          " is outside 0.." + std::to_string(n - 1));
    }
    if (seen[node.id]++) {
      throw MalformedTree("duplicate node id " + std::to_string(node.id));
    }
    if (node.type_name.empty()) {
      throw SchemaError("node " + std::to_string(node.id) +
                        " has an empty type_name");
    }
  }
  std::sort(tree.nodes.begin(), tree.nodes.end(),
            [](const ParseNode& a, const ParseNode& b) { return a.id < b.id; });
  if (tree.root >= n) {
    throw MalformedTree("root " + std::to_string(tree.root) + " does not exist");
  }

  std::vector<std::size_t> parents(n, 0);
  for (const auto& node : tree.nodes) {
    for (NodeId child : node.children) {
      if (child >= n) {
        throw MalformedTree("node " + std::to_string(node.id) +
                            " lists missing child " + std::to_string(child));
      }
      if (child == node.id) {
        throw MalformedTree("node " + std::to_string(node.id) +
                            " lists itself as a child");
      }
      ++parents[child];
    }
  }
  if (parents[tree.root] != 0) throw MalformedTree("root has a parent (cycle)");
  for (std::size_t i = 0; i < n; ++i) {
    if (i != tree.root && parents[i] != 1) {
      throw MalformedTree("node " + std::to_string(i) + " has " +
                          std::to_string(parents[i]) + " parents");
    }
  }

  std::vector<bool> visited(n, false);
  std::queue<NodeId> frontier;
  frontier.push(tree.root);
  visited[tree.root] = true;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    const NodeId cur = frontier.front();
    frontier.pop();
    for (NodeId child : tree.nodes[cur].children) {
      if (!visited[child]) {
        visited[child] = true;
        ++reached;
        frontier.push(child);
      }
    }
  }
  if (reached != n) {
    throw MalformedTree("only " + std::to_string(reached) + " of " +
                        std::to_string(n) +
                        " nodes reachable from root (cycle or detached part)");
  }
}

namespace detail {

inline const json& require(const json& obj, const char* field,
                           std::string_view where) {
  if (!obj.is_object() || !obj.contains(field)) {
    throw SchemaError(std::string(where) + ": missing field '" + field + "'");
  }
  return obj.at(field);
}

template <class T>
T get_as(const json& value, const char* field, std::string_view where) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string(where) + ": field '" + field +
                      "' has the wrong type");
  }
}

}  // namespace detail

inline ParseTree parse_tree_from_json(const json& doc,
                                      std::size_t max_nodes = kDefaultMaxNodes) {
  using detail::get_as;
  using detail::require;
  ParseTree tree;
  tree.language =
      get_as<std::string>(require(doc, "language", "tree"), "language", "tree");
  tree.source_id = get_as<std::string>(require(doc, "source_id", "tree"),
                                       "source_id", "tree");
  tree.root = get_as<NodeId>(require(doc, "root", "tree"), "root", "tree");
  const json& nodes = require(doc, "nodes", "tree");
  if (!nodes.is_array()) throw SchemaError("tree: 'nodes' must be an array");
  if (nodes.size() > max_nodes) {
    throw OversizeTree("parse tree has " + std::to_string(nodes.size()) +
                       " nodes, limit is " + std::to_string(max_nodes));
  }
  tree.nodes.reserve(nodes.size());
  for (const json& jn : nodes) {
    ParseNode node;
    node.id = get_as<NodeId>(require(jn, "id", "node"), "id", "node");
    node.type_name = get_as<std::string>(require(jn, "type_name", "node"),
                                         "type_name", "node");
    node.attrs = get_as<std::vector<std::string>>(require(jn, "attrs", "node"),
                                                  "attrs", "node");
    node.children = get_as<std::vector<NodeId>>(
        require(jn, "children", "node"), "children", "node");
    tree.nodes.push_back(std::move(node));
  }
  validate_parse_tree(tree, max_nodes);
  return tree;
}

inline json to_json(const ParseTree& tree) {
  json nodes = json::array();
  for (const auto& node : tree.nodes) {
    nodes.push_back({{"id", node.id},
                     {"type_name", node.type_name},
                     {"attrs", node.attrs},
                     {"children", node.children}});
  }
  return {{"language", tree.language},
          {"source_id", tree.source_id},
          {"root", tree.root},
          {"nodes", std::move(nodes)}};
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& doc,
                            int indent = -1) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(indent) << '\n';
}

inline ParseTree load_parse_tree(const std::filesystem::path& path,
                                 std::size_t max_nodes = kDefaultMaxNodes) {
  return parse_tree_from_json(read_json_file(path), max_nodes);
}

inline void save_parse_tree(const std::filesystem::path& path,
                            const ParseTree& tree) {
  write_json_file(path, to_json(tree));
}

// ---------------------------------------------------------------------------
// Attribute tokenization

inline constexpr std::string_view kNumToken = "NUM";
inline constexpr std::string_view kStrToken = "STR";

namespace detail {

inline bool is_quoted(std::string_view s) {
  if (s.size() < 2) return false;
  const char q = s.front();
  return (q == '"' || q == '\'' || q == '`') && s.back() == q;
}

inline bool is_numeric_literal(std::string_view s) {
  if (s.empty()) return false;
  std::size_t i = 0;
  if (s[0] == '-' || s[0] == '+') ++i;
  if (i >= s.size()) return false;
  if (s.size() > i + 2 && s[i] == '0' && (s[i + 1] == 'x' || s[i + 1] == 'X')) {
    for (std::size_t k = i + 2; k < s.size(); ++k) {
      if (!std::isxdigit(static_cast<unsigned char>(s[k])) && s[k] != '_') return false;
    }
    return true;
  }
  bool digit = false;
  bool dot = false;
  bool exp = false;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '_') {
      digit = digit || c != '_';
    } else if (c == '.' && !dot && !exp) {
      dot = true;
    } else if ((c == 'e' || c == 'E') && digit && !exp) {
      exp = true;
      if (i + 1 < s.size() && (s[i + 1] == '-' || s[i + 1] == '+')) ++i;
    } else if (i + 1 == s.size() && digit &&
               std::string_view("lLfFdDuU").find(c) != std::string_view::npos) {
      // type suffix such as 10L or 1.5f
    } else {
      return false;
    }
  }
  return digit;
}

// Splits an identifier on delimiters and camelCase / acronym boundaries.
inline void split_identifier(std::string_view s, std::vector<std::string>& out) {
  auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  auto is_upper = [](char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; };
  auto is_lower = [](char c) { return std::islower(static_cast<unsigned char>(c)) != 0; };
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(word));
      word.clear();
    }
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (!is_alnum(c)) {
      flush();
      continue;
    }
    if (!word.empty()) {
      const char prev = word.back();
      const bool lower_to_upper = (is_lower(prev) || std::isdigit(static_cast<unsigned char>(prev))) && is_upper(c);
      const bool acronym_end = is_upper(prev) && is_upper(c) && i + 1 < s.size() && is_lower(s[i + 1]);
      if (lower_to_upper || acronym_end) flush();
    }
    word.push_back(c);
  }
  flush();
}

}  // namespace detail

// Identifier names are split into lowercase words, numeric literals become
// NUM and quoted string literals become STR. Output is capped at max_tokens.
inline std::vector<std::string> tokenize_attrs(
    const std::vector<std::string>& attrs,
    std::size_t max_tokens = kDefaultMaxAttrTokens) {
  std::vector<std::string> tokens;
  for (const auto& attr : attrs) {
    if (tokens.size() >= max_tokens) break;
    if (attr == kNumToken || attr == kStrToken) {
      tokens.push_back(attr);
    } else if (detail::is_quoted(attr)) {
      tokens.emplace_back(kStrToken);
    } else if (detail::is_numeric_literal(attr)) {
      tokens.emplace_back(kNumToken);
    } else {
      detail::split_identifier(attr, tokens);
    }
  }
  if (tokens.size() > max_tokens) tokens.resize(max_tokens);
  return tokens;
}

// Upper snake case rendering of a type name, e.g. ForStatement -> FOR_STATEMENT.
inline std::string upper_snake(std::string_view type_name) {
  std::vector<std::string> words;
  detail::split_identifier(type_name, words);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back('_');
    for (char c : w) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

// Lowercased with every non-alphanumeric character removed.
inline std::string normalize_type_name(std::string_view type_name) {
  std::string out;
  for (char c : type_name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus layout

struct ManifestEntry {
  std::string source_id;
  std::string task_id;
  std::string language;
  std::string path;

  // Corpus-wide graph id: <task>/<language>/<snippet>.
  std::string graph_id() const { return task_id + "/" + language + "/" + source_id; }

  auto key() const { return std::tie(task_id, language, source_id); }
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct CorpusManifest {
  std::string corpus_id;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> task_ids() const {
    std::vector<std::string> tasks;
    for (const auto& e : entries) tasks.push_back(e.task_id);
    std::sort(tasks.begin(), tasks.end());
    tasks.erase(std::unique(tasks.begin(), tasks.end()), tasks.end());
    return tasks;
  }
};

inline CorpusManifest scan_corpus(const std::filesystem::path& root_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root_dir)) {
    throw EmptyCorpus("corpus directory " + root_dir.string() + " does not exist");
  }
  CorpusManifest manifest;
  manifest.corpus_id = fs::absolute(root_dir).lexically_normal().filename().string();
  if (manifest.corpus_id.empty()) {
    manifest.corpus_id = fs::absolute(root_dir).lexically_normal().parent_path().filename().string();
  }

  std::map<std::tuple<std::string, std::string, std::string>, std::string> seen;
  for (const auto& task_dir : fs::directory_iterator(root_dir)) {
    if (!task_dir.is_directory()) continue;
    for (const auto& lang_dir : fs::directory_iterator(task_dir.path())) {
      if (!lang_dir.is_directory()) continue;
      for (const auto& file : fs::directory_iterator(lang_dir.path())) {
        if (!file.is_regular_file()) continue;
        std::string ext = file.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext != ".json") continue;
        ManifestEntry entry{file.path().stem().string(),
                            task_dir.path().filename().string(),
                            lang_dir.path().filename().string(),
                            file.path().string()};
        auto key = std::make_tuple(entry.task_id, entry.language, entry.source_id);
        if (auto it = seen.find(key); it != seen.end()) {
          throw DuplicateSnippet("snippet " + entry.graph_id() + " appears as both " +
                                 it->second + " and " + entry.path);
        }
        seen.emplace(std::move(key), entry.path);
        manifest.entries.push_back(std::move(entry));
      }
    }
  }
  if (manifest.entries.empty()) {
    throw EmptyCorpus("no snippets under " + root_dir.string());
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.key() < b.key(); });
  return manifest;
}

inline std::string manifest_to_jsonl(const CorpusManifest& manifest) {
  std::ostringstream out;
  for (const auto& e : manifest.entries) {
    out << json{{"corpus_id", manifest.corpus_id},
                {"task_id", e.task_id},
                {"language", e.language},
                {"source_id", e.source_id},
                {"path", e.path}}
               .dump()
        << '\n';
  }
  return out.str();
}

inline CorpusManifest manifest_from_jsonl(std::istream& in) {
  CorpusManifest manifest;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    manifest.corpus_id = j.value("corpus_id", manifest.corpus_id);
    manifest.entries.push_back({j.at("source_id").get<std::string>(),
                                j.at("task_id").get<std::string>(),
                                j.at("language").get<std::string>(),
                                j.at("path").get<std::string>()});
  }
  return manifest;
}

}  // namespace astbridge
