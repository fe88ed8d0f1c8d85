#include <gtest/gtest.h>

#include <filesystem>
#include <queue>
#include <sstream>

#include <unistd.h>

#include "astbridge/ast_interchange.hpp"
#include "astbridge/random.hpp"

namespace fs = std::filesystem;
using namespace astbridge;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("astbridge_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

json node(NodeId id, const char* type, std::vector<NodeId> kids, std::vector<std::string> attrs = {}) {
  return {{"id", id}, {"type_name", type}, {"attrs", attrs}, {"children", kids}};
}

json tree_doc(json nodes, NodeId root = 0) {
  return {{"language", "py"}, {"source_id", "s0"}, {"root", root}, {"nodes", std::move(nodes)}};
}

// Random tree: node i > 0 hangs under a random earlier node.
ParseTree random_tree(Rng& rng, std::size_t n) {
  ParseTree t;
  t.language = "jv";
  t.source_id = "r";
  for (std::size_t i = 0; i < n; ++i) t.nodes.push_back({i, "T" + std::to_string(rng.uniform_index(5)), {"x"}, {}});
  for (std::size_t i = 1; i < n; ++i) t.nodes[rng.uniform_index(i)].children.push_back(i);
  return t;
}

}  // namespace

TEST(ParseTree, SingleNodeFile) {
  auto t = parse_tree_from_json(tree_doc(json::array({node(0, "module", {})})));
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.root, 0u);
}

TEST(ParseTree, DanglingChildIsMalformed) {
  json nodes = json::array();
  for (NodeId i = 0; i < 4; ++i) nodes.push_back(node(i, "n", i + 1 < 4 ? std::vector<NodeId>{i + 1} : std::vector<NodeId>{}));
  nodes[3]["children"] = {7};
  EXPECT_THROW(parse_tree_from_json(tree_doc(nodes)), MalformedTree);
}

TEST(ParseTree, OversizeRejected) {
  json nodes = json::array();
  for (NodeId i = 0; i < 401; ++i) nodes.push_back(node(i, "n", i + 1 < 401 ? std::vector<NodeId>{i + 1} : std::vector<NodeId>{}));
  EXPECT_THROW(parse_tree_from_json(tree_doc(nodes), 400), OversizeTree);
  nodes.erase(nodes.end() - 1);
  nodes.back()["children"] = json::array();
  EXPECT_EQ(parse_tree_from_json(tree_doc(nodes), 400).size(), 400u);
}

TEST(ParseTree, StructuralFaults) {
  // cycle 0 -> 1 -> 2 -> 1
  json cyc = json::array({node(0, "a", {1}), node(1, "b", {2}), node(2, "c", {1})});
  EXPECT_THROW(parse_tree_from_json(tree_doc(cyc)), MalformedTree);
  json dup = json::array({node(0, "a", {1}), node(1, "b", {}), node(1, "c", {})});
  EXPECT_THROW(parse_tree_from_json(tree_doc(dup)), MalformedTree);
  json self = json::array({node(0, "a", {0})});
  EXPECT_THROW(parse_tree_from_json(tree_doc(self)), MalformedTree);
  json two_parents = json::array({node(0, "a", {1, 2}), node(1, "b", {2}), node(2, "c", {})});
  EXPECT_THROW(parse_tree_from_json(tree_doc(two_parents)), MalformedTree);
  json detached = json::array({node(0, "a", {}), node(1, "b", {})});
  EXPECT_THROW(parse_tree_from_json(tree_doc(detached)), MalformedTree);
}

TEST(ParseTree, MissingFieldIsSchemaError) {
  json doc = tree_doc(json::array({node(0, "module", {})}));
  doc.erase("root");
  EXPECT_THROW(parse_tree_from_json(doc), SchemaError);
  json bad = tree_doc(json::array({{{"id", 0}, {"attrs", json::array()}, {"children", json::array()}}}));
  EXPECT_THROW(parse_tree_from_json(bad), SchemaError);
  json wrong = tree_doc(json::array({node(0, "module", {})}));
  wrong["nodes"][0]["children"] = "none";
  EXPECT_THROW(parse_tree_from_json(wrong), SchemaError);
}

TEST(ParseTree, RoundTripAndTreeCheck) {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    ParseTree t = random_tree(rng, 1 + rng.uniform_index(60));
    // shuffle the stored order; ids stay the same
    rng.shuffle(t.nodes);
    ParseTree a = parse_tree_from_json(to_json(t));
    ParseTree b = parse_tree_from_json(to_json(a));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.edge_count(), a.size() - 1);
    std::vector<bool> seen(a.size(), false);
    std::queue<NodeId> q;
    q.push(a.root);
    seen[a.root] = true;
    std::size_t visited = 1;
    while (!q.empty()) {
      for (NodeId c : a.nodes[q.front()].children) {
        if (!seen[c]) {
          seen[c] = true;
          ++visited;
          q.push(c);
        }
      }
      q.pop();
    }
    EXPECT_EQ(visited, a.size());
  }
}

TEST(ParseTree, FileRoundTrip) {
  TempDir dir("rt");
  Rng rng(5);
  ParseTree t = random_tree(rng, 30);
  save_parse_tree(dir.path / "t.json", t);
  EXPECT_EQ(load_parse_tree(dir.path / "t.json"), parse_tree_from_json(to_json(t)));
}

TEST(Tokenizer, Examples) {
  EXPECT_EQ(tokenize_attrs({"getSumValue"}), (std::vector<std::string>{"get", "sum", "value"}));
  EXPECT_EQ(tokenize_attrs({"42"}), (std::vector<std::string>{"NUM"}));
  EXPECT_TRUE(tokenize_attrs({}).empty());
  EXPECT_EQ(tokenize_attrs({"max_total_size"}), (std::vector<std::string>{"max", "total", "size"}));
  EXPECT_EQ(tokenize_attrs({"\"hello world\""}), (std::vector<std::string>{"STR"}));
  EXPECT_EQ(tokenize_attrs({"3.5e-2", "0x1F", "10L"}), (std::vector<std::string>{"NUM", "NUM", "NUM"}));
  EXPECT_EQ(tokenize_attrs({"parseHTTPRequest"}), (std::vector<std::string>{"parse", "http", "request"}));
}

TEST(Tokenizer, TruncatesToLimit) {
  auto t = tokenize_attrs({"aB", "cD", "eF", "gH", "iJ"}, 8);
  EXPECT_EQ(t.size(), 8u);
  EXPECT_EQ(t.back(), "h");
  EXPECT_EQ(tokenize_attrs({"oneTwoThree"}, 2), (std::vector<std::string>{"one", "two"}));
}

TEST(Tokenizer, Idempotent) {
  const std::vector<std::vector<std::string>> cases = {
      {"getSumValue", "42", "'x'"}, {"snake_case_name", "HTTPServer"}, {"a1B2", "__init__", "-7"}};
  for (const auto& c : cases) {
    auto once = tokenize_attrs(c);
    EXPECT_EQ(tokenize_attrs(once), once);
  }
}

TEST(TypeNames, Normalization) {
  EXPECT_EQ(upper_snake("ForStatement"), "FOR_STATEMENT");
  EXPECT_EQ(upper_snake("for_statement"), "FOR_STATEMENT");
  EXPECT_EQ(normalize_type_name("For_Statement"), "forstatement");
}

TEST(Corpus, ScanCountsAndOrders) {
  TempDir dir("scan");
  ParseTree one;
  one.language = "java";
  one.nodes.push_back({0, "module", {}, {}});
  for (auto [lang, id] : {std::pair{"java", "b"}, {"java", "a"}, {"python", "a"}}) {
    one.source_id = id;
    save_parse_tree(dir.path / "t1" / lang / (std::string(id) + ".json"), one);
  }
  auto m = scan_corpus(dir.path);
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].graph_id(), "t1/java/a");
  EXPECT_EQ(m.entries[1].graph_id(), "t1/java/b");
  EXPECT_EQ(m.entries[2].graph_id(), "t1/python/a");
  EXPECT_EQ(m.task_ids(), std::vector<std::string>{"t1"});

  std::istringstream in(manifest_to_jsonl(m));
  auto back = manifest_from_jsonl(in);
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.corpus_id, m.corpus_id);
}

TEST(Corpus, EmptyAndDuplicate) {
  TempDir dir("empty");
  EXPECT_THROW(scan_corpus(dir.path), EmptyCorpus);
  EXPECT_THROW(scan_corpus(dir.path / "missing"), EmptyCorpus);

  ParseTree one;
  one.language = "py";
  one.nodes.push_back({0, "module", {}, {}});
  save_parse_tree(dir.path / "t1" / "py" / "a.json", one);
  save_parse_tree(dir.path / "t1" / "py" / "a.JSON", one);
  EXPECT_THROW(scan_corpus(dir.path), DuplicateSnippet);
}
