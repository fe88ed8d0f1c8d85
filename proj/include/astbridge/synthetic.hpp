#pragma once

// Template-generated corpus for tests and demos. Each task is a small
// abstract program; tasks come in families that share a skeleton and differ
// only in operators and called functions, so cross-task look-alikes exist.
// Every task is rendered several times into two pseudo-languages:
//   "jv"  Java-like: CamelCase node types, class wrapper, modifiers, typed
//         declarations, C-style for loops
//   "py"  Python-like: snake_case node types, module wrapper, assignments
//         instead of declarations, for-in-range loops
// Variants of one task rename identifiers and the function, and may swap
// commutative operands.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "astbridge/ast_interchange.hpp"
#include "astbridge/label_unification.hpp"
#include "astbridge/random.hpp"

namespace astbridge::synth {

struct SynthConfig {
  std::size_t tasks = 20;
  std::size_t family_size = 4;
  std::size_t variants = 3;  // snippets per task per language
  std::uint64_t seed = 7;
};

struct Snippet {
  std::string task_id;
  ParseTree tree;
};

struct SynthCorpus {
  std::vector<Snippet> snippets;
  std::map<std::string, GrammarSchema> schemas;

  std::vector<ParseTree> trees() const {
    std::vector<ParseTree> out;
    for (const auto& s : snippets) out.push_back(s.tree);
    return out;
  }
};

namespace detail {

enum class Kind { func, var_decl, assign, for_range, while_loop, if_else, ret, call_stmt, binop, compare, call, name, num, str };

struct Node {
  Kind kind;
  std::string text;  // operator word, call name, or variable slot
  std::vector<std::shared_ptr<Node>> kids;
};
using P = std::shared_ptr<Node>;

inline P mk(Kind k, std::string text = {}, std::vector<P> kids = {}) {
  return std::make_shared<Node>(Node{k, std::move(text), std::move(kids)});
}

inline const std::vector<std::string>& arith_ops() {
  static const std::vector<std::string> v{"add", "sub", "mul", "div", "mod"};
  return v;
}
inline const std::vector<std::string>& compare_ops() {
  static const std::vector<std::string> v{"lt", "gt", "le", "ge", "eq", "ne"};
  return v;
}
inline const std::vector<std::string>& call_names() {
  static const std::vector<std::string> v{"max", "min", "abs", "len", "sqrt", "sum", "sorted", "round", "floor", "pow"};
  return v;
}
inline const std::vector<std::string>& stmt_calls() {
  static const std::vector<std::string> v{"print", "append", "push", "write", "log"};
  return v;
}
// Identifier words; a variant binds each variable slot to one or two words.
inline const std::vector<std::string>& words() {
  static const std::vector<std::string> v{"count", "total", "index", "value", "result", "item",  "acc",
                                          "left",  "right", "size",  "limit", "step",   "temp",  "best",
                                          "score", "node",  "key",   "data",  "pos",    "offset"};
  return v;
}
inline const std::vector<std::string>& func_words() {
  static const std::vector<std::string> v{"solve", "run", "compute", "process", "helper", "calc", "main", "answer"};
  return v;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.uniform_index(v.size())];
}

struct ProgramGen {
  Rng& rng;
  int vars = 0;

  std::string fresh() { return "v" + std::to_string(vars++); }
  std::string any_var() { return "v" + std::to_string(rng.uniform_index(static_cast<std::size_t>(std::max(vars, 1)))); }

  P expr(int depth) {
    const double r = rng.uniform();
    if (depth <= 0 || r < 0.5) {
      const double s = rng.uniform();
      if (s < 0.6) return mk(Kind::name, any_var());
      if (s < 0.9) return mk(Kind::num, std::to_string(rng.uniform_index(100)));
      return mk(Kind::str, "s" + std::to_string(rng.uniform_index(5)));
    }
    if (r < 0.75) return mk(Kind::binop, pick(arith_ops(), rng), {expr(depth - 1), expr(depth - 1)});
    std::vector<P> args{expr(depth - 1)};
    if (rng.bernoulli(0.4)) args.push_back(expr(depth - 1));
    return mk(Kind::call, pick(call_names(), rng), args);
  }

  P cond() { return mk(Kind::compare, pick(compare_ops(), rng), {mk(Kind::name, any_var()), expr(1)}); }

  std::vector<P> block(int depth, std::size_t lo, std::size_t hi) {
    std::vector<P> out;
    const std::size_t n = lo + rng.uniform_index(hi - lo + 1);
    for (std::size_t i = 0; i < n; ++i) out.push_back(stmt(depth));
    return out;
  }

  P stmt(int depth) {
    const double r = rng.uniform();
    if (depth > 0 && r < 0.2) {
      auto bound = expr(1);
      auto v = fresh();
      return mk(Kind::for_range, v, {bound, mk(Kind::func, "", block(depth - 1, 1, 2))});
    }
    if (depth > 0 && r < 0.3) return mk(Kind::while_loop, "", {cond(), mk(Kind::func, "", block(depth - 1, 1, 1))});
    if (depth > 0 && r < 0.45) {
      std::vector<P> kids{cond(), mk(Kind::func, "", block(depth - 1, 1, 1))};
      if (rng.bernoulli(0.5)) kids.push_back(mk(Kind::func, "", block(depth - 1, 1, 1)));
      return mk(Kind::if_else, "", kids);
    }
    if (r < 0.65) {
      auto e = expr(1);
      return mk(Kind::var_decl, fresh(), {e});
    }
    if (r < 0.85) return mk(Kind::assign, any_var(), {expr(1)});
    return mk(Kind::call_stmt, pick(stmt_calls(), rng), {expr(1)});
  }

  // Function with 1-3 parameters, a body and a final return.
  P program() {
    const std::size_t params = 1 + rng.uniform_index(3);
    std::vector<P> kids;
    for (std::size_t i = 0; i < params; ++i) kids.push_back(mk(Kind::name, fresh()));
    auto body = block(2, 2, 3);
    body.push_back(mk(Kind::ret, "", {expr(1)}));
    kids.push_back(mk(Kind::func, "", body));  // body holder
    return mk(Kind::func, "", kids);
  }
};

inline P clone_tree(const P& n) {
  auto c = mk(n->kind, n->text);
  for (const auto& k : n->kids) c->kids.push_back(clone_tree(k));
  return c;
}

inline void collect(const P& n, Kind k, std::vector<P>& out) {
  if (n->kind == k) out.push_back(n);
  for (const auto& c : n->kids) collect(c, k, out);
}

// Sibling task: same skeleton, every operator and called function replaced.
inline P mutate(const P& base, Rng& rng) {
  auto t = clone_tree(base);
  std::vector<P> sites;
  collect(t, Kind::binop, sites);
  collect(t, Kind::compare, sites);
  collect(t, Kind::call, sites);
  collect(t, Kind::call_stmt, sites);
  if (sites.empty()) {
    auto& body = t->kids.back()->kids;
    body.insert(body.end() - 1, mk(Kind::call_stmt, pick(stmt_calls(), rng), {mk(Kind::num, "1")}));
    return t;
  }
  // Every site gets a different operator or callee.
  for (auto& s : sites) {
    const auto& pool = s->kind == Kind::binop     ? arith_ops()
                       : s->kind == Kind::compare ? compare_ops()
                       : s->kind == Kind::call    ? call_names()
                                                  : stmt_calls();
    std::string next = s->text;
    while (next == s->text) next = pick(pool, rng);
    s->text = next;
  }
  return t;
}

// Surface choices of one rendering.
struct Variant {
  std::map<std::string, std::vector<std::string>> names;  // variable slot -> words
  std::vector<std::string> func;
  bool swap_commutative = false;

  const std::vector<std::string>& words_for(const std::string& slot, Rng& rng) {
    auto it = names.find(slot);
    if (it != names.end()) return it->second;
    std::vector<std::string> w{pick(detail::words(), rng)};
    if (rng.bernoulli(0.4)) w.push_back(pick(detail::words(), rng));
    return names.emplace(slot, std::move(w)).first->second;
  }
};

inline std::string camel(const std::vector<std::string>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::string part = w[i];
    if (i > 0 && !part.empty()) part[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(part[0])));
    s += part;
  }
  return s;
}

inline std::string snake(const std::vector<std::string>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "_" : "") + w[i];
  return s;
}

class TreeBuilder {
 public:
  explicit TreeBuilder(std::string language) { tree_.language = std::move(language); }

  NodeId add(std::string type, std::vector<std::string> attrs = {}) {
    const NodeId id = tree_.nodes.size();
    tree_.nodes.push_back({id, std::move(type), std::move(attrs), {}});
    return id;
  }
  NodeId add_under(NodeId parent, std::string type, std::vector<std::string> attrs = {}) {
    const NodeId id = add(std::move(type), std::move(attrs));
    tree_.nodes[parent].children.push_back(id);
    return id;
  }
  void attach(NodeId parent, NodeId child) { tree_.nodes[parent].children.push_back(child); }
  ParseTree finish(std::string source_id) {
    tree_.source_id = std::move(source_id);
    tree_.root = 0;
    return std::move(tree_);
  }

 private:
  ParseTree tree_;
};

struct Renderer {
  bool java;
  Variant& var;
  Rng& rng;
  TreeBuilder b;

  std::string ident(const std::string& slot) {
    const auto& w = var.words_for(slot, rng);
    return java ? camel(w) : snake(w);
  }
  std::string t(const char* jv, const char* py) const { return java ? jv : py; }

  NodeId expr(const P& e) {
    switch (e->kind) {
      case Kind::name: return b.add(t("Identifier", "identifier"), {ident(e->text)});
      case Kind::num: return b.add(t("ConstantNumber", "constant_number"), {e->text});
      case Kind::str: return b.add(t("ConstantString", "constant_string"), {"\"" + e->text + "\""});
      case Kind::binop: {
        const NodeId n = b.add(t("BinaryExpression", "binary_operator"), {e->text});
        auto kids = e->kids;
        if (var.swap_commutative && (e->text == "add" || e->text == "mul")) std::swap(kids[0], kids[1]);
        for (const auto& k : kids) b.attach(n, expr(k));
        return n;
      }
      case Kind::compare: {
        const NodeId n = b.add(t("BinaryExpression", "comparison_operator"), {e->text});
        for (const auto& k : e->kids) b.attach(n, expr(k));
        return n;
      }
      case Kind::call: return call(e->text, e->kids);
      default: throw Error("synth: not an expression");
    }
  }

  NodeId call(const std::string& fname, const std::vector<P>& args) {
    const NodeId n = b.add(t("CallExpression", "call_expression"));
    b.add_under(n, t("Identifier", "identifier"), {fname});
    const NodeId list = b.add_under(n, t("ArgumentList", "argument_list"));
    for (const auto& a : args) b.attach(list, expr(a));
    return n;
  }

  void body(NodeId parent, const P& holder) {
    const NodeId blk = b.add_under(parent, t("Block", "block"));
    for (const auto& s : holder->kids) stmt(blk, s);
  }

  NodeId type_ref() {
    static const std::vector<std::string> types{"int", "long", "double"};
    return b.add(t("TypeReference", "type"), {pick(types, rng)});
  }

  void stmt(NodeId parent, const P& s) {
    switch (s->kind) {
      case Kind::var_decl: {
        if (java) {
          const NodeId n = b.add_under(parent, "VariableDeclaration");
          b.attach(n, type_ref());
          b.add_under(n, "Identifier", {ident(s->text)});
          b.attach(n, expr(s->kids[0]));
        } else {
          const NodeId es = b.add_under(parent, "expression_statement");
          const NodeId n = b.add_under(es, "assignment");
          b.add_under(n, "identifier", {ident(s->text)});
          b.attach(n, expr(s->kids[0]));
        }
        return;
      }
      case Kind::assign: {
        const NodeId es = b.add_under(parent, t("ExpressionStatement", "expression_statement"));
        const NodeId n = b.add_under(es, t("Assignment", "assignment"));
        b.add_under(n, t("Identifier", "identifier"), {ident(s->text)});
        b.attach(n, expr(s->kids[0]));
        return;
      }
      case Kind::call_stmt: {
        const NodeId es = b.add_under(parent, t("ExpressionStatement", "expression_statement"));
        b.attach(es, call(s->text, s->kids));
        return;
      }
      case Kind::ret: {
        const NodeId n = b.add_under(parent, t("ReturnStatement", "return_statement"));
        b.attach(n, expr(s->kids[0]));
        return;
      }
      case Kind::for_range: {
        const std::string v = ident(s->text);
        if (java) {
          const NodeId n = b.add_under(parent, "ForStatement");
          const NodeId init = b.add_under(n, "VariableDeclaration");
          b.add_under(init, "TypeReference", {"int"});
          b.add_under(init, "Identifier", {v});
          b.add_under(init, "ConstantNumber", {"0"});
          const NodeId c = b.add_under(n, "BinaryExpression", {"lt"});
          b.add_under(c, "Identifier", {v});
          b.attach(c, expr(s->kids[0]));
          const NodeId u = b.add_under(n, "UpdateExpression", {"++"});
          b.add_under(u, "Identifier", {v});
          body(n, s->kids[1]);
        } else {
          const NodeId n = b.add_under(parent, "for_statement");
          b.add_under(n, "identifier", {v});
          const NodeId r = b.add_under(n, "call_expression");
          b.add_under(r, "identifier", {"range"});
          const NodeId args = b.add_under(r, "argument_list");
          b.attach(args, expr(s->kids[0]));
          body(n, s->kids[1]);
        }
        return;
      }
      case Kind::while_loop: {
        const NodeId n = b.add_under(parent, t("WhileStatement", "while_statement"));
        b.attach(n, expr(s->kids[0]));
        body(n, s->kids[1]);
        return;
      }
      case Kind::if_else: {
        const NodeId n = b.add_under(parent, t("IfStatement", "if_statement"));
        b.attach(n, expr(s->kids[0]));
        body(n, s->kids[1]);
        if (s->kids.size() > 2) {
          if (java) {
            body(n, s->kids[2]);
          } else {
            const NodeId e = b.add_under(n, "else_clause");
            body(e, s->kids[2]);
          }
        }
        return;
      }
      default: throw Error("synth: not a statement");
    }
  }

  ParseTree render(const P& prog, const std::string& source_id) {
    const std::string fname = java ? camel(var.func) : snake(var.func);
    NodeId fn;
    if (java) {
      const NodeId unit = b.add("CompilationUnit");
      const NodeId cls = b.add_under(unit, "ClassDeclaration", {"Solution"});
      b.add_under(cls, "Modifier", {"public"});
      fn = b.add_under(cls, "FunctionDefinition");
      b.add_under(fn, "Modifier", {"public"});
      b.add_under(fn, "Modifier", {"static"});
      b.attach(fn, type_ref());
      b.add_under(fn, "Identifier", {fname});
      const NodeId params = b.add_under(fn, "FormalParameters");
      for (std::size_t i = 0; i + 1 < prog->kids.size(); ++i) {
        const NodeId p = b.add_under(params, "FormalParameter");
        b.attach(p, type_ref());
        b.add_under(p, "Identifier", {ident(prog->kids[i]->text)});
      }
    } else {
      const NodeId mod = b.add("module");
      fn = b.add_under(mod, "function_definition");
      b.add_under(fn, "identifier", {fname});
      const NodeId params = b.add_under(fn, "parameters");
      for (std::size_t i = 0; i + 1 < prog->kids.size(); ++i)
        b.add_under(params, "identifier", {ident(prog->kids[i]->text)});
    }
    body(fn, prog->kids.back());
    return b.finish(source_id);
  }
};

struct SpecRow {
  const char* type;
  std::vector<std::string> fields;
  std::vector<std::string> child_types;
  std::size_t arity_min;
  std::optional<std::size_t> arity_max;
  std::vector<bool> optional = {}, repeatable = {};
};

inline GrammarSchema make_schema(const std::string& language, const std::vector<SpecRow>& rows) {
  GrammarSchema s;
  s.language = language;
  for (const auto& r : rows) {
    NodeSpec spec;
    spec.field_names = r.fields;
    spec.child_types = r.child_types;
    spec.optional_flags = r.optional.empty() ? std::vector<bool>(r.fields.size(), false) : r.optional;
    spec.repeatable_flags = r.repeatable.empty() ? std::vector<bool>(r.fields.size(), false) : r.repeatable;
    spec.arity_min = r.arity_min;
    spec.arity_max = r.arity_max;
    s.node_specs.emplace(r.type, std::move(spec));
  }
  return s;
}

inline GrammarSchema jv_schema() {
  using std::nullopt;
  return make_schema(
      "jv",
      {{"CompilationUnit", {"declarations"}, {"ClassDeclaration"}, 0, nullopt, {false}, {true}},
       {"ClassDeclaration", {"modifiers", "body"}, {"Modifier", "FunctionDefinition"}, 1, nullopt, {true, false}, {true, true}},
       {"Modifier", {}, {}, 0, 0},
       {"FunctionDefinition", {"modifiers", "type", "name", "parameters", "body"},
        {"Modifier", "TypeReference", "Identifier", "FormalParameters", "Block"}, 4, nullopt,
        {true, false, false, false, false}, {true, false, false, false, false}},
       {"FormalParameters", {"parameter"}, {"FormalParameter"}, 0, nullopt, {true}, {true}},
       {"FormalParameter", {"type", "name"}, {"TypeReference", "Identifier"}, 2, 2},
       {"TypeReference", {}, {}, 0, 0},
       {"Identifier", {}, {}, 0, 0},
       {"Block", {"statement"}, {"VariableDeclaration", "ExpressionStatement", "ForStatement", "WhileStatement", "IfStatement", "ReturnStatement"}, 0, nullopt, {true}, {true}},
       {"VariableDeclaration", {"type", "name", "value"}, {"TypeReference", "Identifier", "expression"}, 3, 3},
       {"ExpressionStatement", {"expression"}, {"Assignment", "CallExpression"}, 1, 1},
       {"Assignment", {"left", "right"}, {"Identifier", "expression"}, 2, 2},
       {"ForStatement", {"init", "condition", "update", "body"}, {"VariableDeclaration", "BinaryExpression", "UpdateExpression", "Block"}, 4, 4},
       {"UpdateExpression", {"argument"}, {"Identifier"}, 1, 1},
       {"WhileStatement", {"condition", "body"}, {"BinaryExpression", "Block"}, 2, 2},
       {"IfStatement", {"condition", "consequence", "alternative"}, {"BinaryExpression", "Block", "Block"}, 2, 3, {false, false, true}, {}},
       {"ReturnStatement", {"value"}, {"expression"}, 1, 1},
       {"BinaryExpression", {"left", "right"}, {"expression", "expression"}, 2, 2},
       {"CallExpression", {"function", "arguments"}, {"Identifier", "ArgumentList"}, 2, 2},
       {"ArgumentList", {"argument"}, {"expression"}, 0, nullopt, {true}, {true}},
       {"ConstantNumber", {}, {}, 0, 0},
       {"ConstantString", {}, {}, 0, 0}});
}

inline GrammarSchema py_schema() {
  using std::nullopt;
  return make_schema(
      "py",
      {{"module", {"statement"}, {"function_definition"}, 0, nullopt, {true}, {true}},
       {"function_definition", {"name", "parameters", "body"}, {"identifier", "parameters", "block"}, 3, 3},
       {"parameters", {"parameter"}, {"identifier"}, 0, nullopt, {true}, {true}},
       {"identifier", {}, {}, 0, 0},
       {"type", {}, {}, 0, 0},
       {"block", {"statement"}, {"expression_statement", "for_statement", "while_statement", "if_statement", "return_statement"}, 1, nullopt, {false}, {true}},
       {"expression_statement", {"expression"}, {"assignment", "call_expression"}, 1, 1},
       {"assignment", {"left", "right"}, {"identifier", "expression"}, 2, 2},
       {"for_statement", {"left", "right", "body"}, {"identifier", "call_expression", "block"}, 3, 3},
       {"while_statement", {"condition", "body"}, {"comparison_operator", "block"}, 2, 2},
       {"if_statement", {"condition", "consequence", "alternative"}, {"comparison_operator", "block", "else_clause"}, 2, 3, {false, false, true}, {}},
       {"else_clause", {"body"}, {"block"}, 1, 1},
       {"return_statement", {"value"}, {"expression"}, 1, 1},
       {"binary_operator", {"left", "right"}, {"expression", "expression"}, 2, 2},
       {"comparison_operator", {"left", "right"}, {"expression", "expression"}, 2, 2},
       {"call_expression", {"function", "arguments"}, {"identifier", "argument_list"}, 2, 2},
       {"argument_list", {"argument"}, {"expression"}, 0, nullopt, {true}, {true}},
       {"constant_number", {}, {}, 0, 0},
       {"constant_string", {}, {}, 0, 0}});
}

}  // namespace detail

inline std::string task_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%03zu", i);
  return buf;
}

inline SynthCorpus generate(const SynthConfig& cfg) {
  using namespace detail;
  SynthCorpus out;
  out.schemas.emplace("jv", jv_schema());
  out.schemas.emplace("py", py_schema());
  Rng rng(derive_seed(cfg.seed, "synth"));
  const std::size_t family = std::max<std::size_t>(1, cfg.family_size);
  P skeleton;
  for (std::size_t t = 0; t < cfg.tasks; ++t) {
    P prog;
    if (t % family == 0) {
      ProgramGen gen{rng};
      skeleton = gen.program();
      prog = skeleton;
    } else {
      prog = mutate(skeleton, rng);
    }
    const std::string task = task_name(t);
    for (std::size_t v = 0; v < cfg.variants; ++v) {
      for (bool java : {true, false}) {
        Variant var;
        var.func = {pick(func_words(), rng)};
        if (rng.bernoulli(0.5)) var.func.push_back(pick(words(), rng));
        var.swap_commutative = rng.bernoulli(0.5);
        Renderer r{java, var, rng, TreeBuilder(java ? "jv" : "py")};
        const std::string lang = java ? "jv" : "py";
        out.snippets.push_back({task, r.render(prog, "s" + std::to_string(v))});
      }
    }
  }
  return out;
}

// Writes <dir>/corpus/<task>/<lang>/<id>.json and <dir>/schemas/<lang>.json.
inline void write_corpus(const SynthCorpus& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const auto& s : c.snippets) {
    const fs::path p = dir / "corpus" / s.task_id / s.tree.language / (s.tree.source_id + ".json");
    fs::create_directories(p.parent_path());
    save_parse_tree(p, s.tree);
  }
  fs::create_directories(dir / "schemas");
  for (const auto& [lang, schema] : c.schemas) write_json_file(dir / "schemas" / (lang + ".json"), to_json(schema), 2);
}

}  // namespace astbridge::synth
