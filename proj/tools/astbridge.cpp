// astbridge command line: one binary, one subcommand per pipeline stage.
//
// Settings resolve as flag > ASTBRIDGE_<NAME> environment variable >
// --config JSON file > built-in default. The resolved view is echoed into
// the provenance block of every artifact.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "astbridge/http_provider.hpp"
#include "astbridge/pipeline.hpp"
#include "astbridge/provenance.hpp"

namespace fs = std::filesystem;
using namespace astbridge;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exit with status 1 after the report has been written.
struct AuditFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Knob {
  const char* name;  // flag without dashes; config key uses '_' for '-'
  const char* help;
  const char* fallback;  // nullptr = required, "" = optional with no value
};

// Every knob any subcommand accepts.
const std::vector<Knob>& knob_table() {
  static const std::vector<Knob> t = {
      {"corpus", "corpus root: <task>/<language>/<snippet>.json", nullptr},
      {"schemas", "directory of <language>.json grammar schemas", ""},
      {"labels", "universal label set JSON", nullptr},
      {"policy", "key-node policy: JSON list of label names", ""},
      {"graphs", "unified graphs JSONL written by enhance", nullptr},
      {"splits", "split manifest JSON", nullptr},
      {"model", "model checkpoint (sidecar at <model>.json)", nullptr},
      {"out", "output path", nullptr},
      {"ratio", "train:valid:test ratios", "8:1:1"},
      {"seed", "global seed", "17"},
      {"task", "training objective: clone | retrieval", "clone"},
      {"neg-k", "negatives per retrieval anchor", "10"},
      {"tau", "contrastive temperature", "0.1"},
      {"margin", "clone-loss margin", "10"},
      {"loss-form", "clone-loss negative distance: sphere | unit_euclidean | euclidean", "sphere"},
      {"epochs", "training epochs", "10"},
      {"max-steps", "stop after this many optimizer steps (0 = no cap)", "0"},
      {"batch", "batch size (default 24 for clone, 8 for retrieval)", ""},
      {"lr", "Adam learning rate", "0.001"},
      {"negatives", "negative pairs: hard | random", "hard"},
      {"mining", "hard-negative ranking: static | dynamic", "static"},
      {"hard-fraction", "share of hard negatives among clone negatives", "0.5"},
      {"threshold", "clone decision threshold or 'auto' (tuned on valid)", "auto"},
      {"k", "cut-off for Precision@k and retrieval lists", "4"},
      {"jobs", "worker threads", "1"},
      {"split", "split to evaluate: train | valid | test", "test"},
      {"query", "graph id to retrieve for", nullptr},
      {"format", "embedding export format: tsv | bin", "tsv"},
      {"pairs", "pair lists as <split>=<file.jsonl>; repeatable", ""},
      {"label-threshold", "label similarity threshold", "0.75"},
      {"f-min", "minimum key frequency before mapping to Other", "10"},
      {"h-max", "maximum context heterogeneity before mapping to Other", "0.9"},
      {"provider", "label similarity: builtin or an http://host:port/embed URL", "builtin"},
      {"prune-ratio", "share of deletable edges removed", "0.4"},
      {"max-nodes", "largest accepted parse tree", "400"},
      {"max-attr-tokens", "attribute tokens kept per node", "8"},
      {"structural", "apply global-root wrapper collapse and pruning: true | false", "true"},
      {"tasks", "synthetic tasks", "20"},
      {"variants", "synthetic snippets per task and language", "3"},
      {"family-size", "synthetic sibling tasks sharing a skeleton", "4"},
  };
  return t;
}

const Knob& knob(const std::string& name) {
  for (const auto& k : knob_table())
    if (name == k.name) return k;
  throw std::logic_error("unknown knob " + name);
}

std::string env_name(const std::string& name) {
  std::string s = "ASTBRIDGE_";
  for (char c : name) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string config_key(std::string name) {
  std::replace(name.begin(), name.end(), '-', '_');
  return name;
}

class Settings {
 public:
  Settings(CLI::App* app, std::vector<std::string> names) : app_(app), names_(std::move(names)) {
    app_->add_option("--config", config_path_, "JSON config file")->envname("ASTBRIDGE_CONFIG");
    for (const auto& n : names_) {
      const Knob& k = knob(n);
      std::string help = k.help;
      if (k.fallback && *k.fallback) help += " [" + std::string(k.fallback) + "]";
      if (n == "pairs") {
        opts_[n] = app_->add_option("--" + n, multi_, help);
      } else {
        opts_[n] = app_->add_option("--" + n, flags_[n], help);
      }
    }
  }

  void load() {
    if (config_path_.empty()) return;
    file_ = read_json_file(config_path_);
    if (!file_.is_object()) throw UsageError("config file must hold a JSON object");
  }

  std::optional<std::string> raw(const std::string& name) const {
    if (opts_.at(name)->count() > 0) {
      if (name == "pairs") return join(multi_);
      return flags_.at(name);
    }
    if (const char* e = std::getenv(env_name(name).c_str())) return std::string(e);
    if (file_.contains(config_key(name))) {
      const json& v = file_.at(config_key(name));
      if (v.is_string()) return v.get<std::string>();
      if (v.is_array() && name == "pairs") return join(v.get<std::vector<std::string>>());
      return v.dump();
    }
    const Knob& k = knob(name);
    if (k.fallback && *k.fallback) return std::string(k.fallback);
    return std::nullopt;
  }

  bool has(const std::string& name) const { return raw(name).has_value(); }

  std::string str(const std::string& name) const {
    auto v = raw(name);
    if (!v) throw UsageError("missing required setting --" + name);
    return *v;
  }

  double real(const std::string& name) const {
    const std::string s = str(name);
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + name + " expects a number, got '" + s + "'");
  }

  std::uint64_t count(const std::string& name) const {
    const std::string s = str(name);
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
      try {
        return std::stoull(s);
      } catch (const std::exception&) {
      }
    }
    throw UsageError("--" + name + " expects a non-negative integer, got '" + s + "'");
  }

  bool flag(const std::string& name) const {
    const std::string s = str(name);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw UsageError("--" + name + " expects true or false, got '" + s + "'");
  }

  std::string choice(const std::string& name, std::initializer_list<const char*> allowed) const {
    const std::string s = str(name);
    for (const char* a : allowed)
      if (s == a) return s;
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : " | ") + a;
    throw UsageError("--" + name + " expects " + list + ", got '" + s + "'");
  }

  // The fully resolved view, for provenance.
  json effective() const {
    json j = json::object();
    for (const auto& n : names_)
      if (auto v = raw(n)) j[config_key(n)] = *v;
    return j;
  }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
  }

  CLI::App* app_;
  std::vector<std::string> names_;
  std::string config_path_;
  json file_ = json::object();
  std::map<std::string, std::string> flags_;
  std::vector<std::string> multi_;
  std::map<std::string, CLI::Option*> opts_;
};

// Prints the subcommand's settings as a schema: flag, env, config key.
void print_schema(std::ostream& out, const std::string& sub, const std::vector<std::string>& names) {
  out << "settings for '" << sub << "' (flag / environment / config key):\n";
  for (const auto& n : names) {
    const Knob& k = knob(n);
    out << "  --" << n << " / " << env_name(n) << " / " << config_key(n) << "  " << k.help;
    if (!k.fallback) out << " (required)";
    else if (*k.fallback) out << " [default " << k.fallback << "]";
    out << '\n';
  }
  out << "  --config / ASTBRIDGE_CONFIG  JSON object with any of the keys above\n";
}

// ---------------------------------------------------------------------------
// Artifact helpers

std::string hash_corpus(const CorpusManifest& m) {
  std::string acc;
  for (const auto& e : m.entries) acc += e.graph_id() + ":" + hash_file(e.path) + "\n";
  return hash_string(acc);
}

std::string hash_dir_json(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir))
    if (f.is_regular_file() && f.path().extension() == ".json") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += f.filename().string() + ":" + hash_file(f.string()) + "\n";
  return hash_string(acc);
}

Provenance provenance(const Settings& s) {
  Provenance p;
  p.config = s.effective();
  p.seed = s.has("seed") ? s.count("seed") : 0;
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Writes to --out when given, else standard output.
void emit(const Settings& s, const std::string& text) {
  if (s.has("out")) write_text(s.str("out"), text);
  else std::cout << text;
}

std::string jsonl_header(const Provenance& p, json extra = json::object()) {
  extra["provenance"] = p.to_json();
  return extra.dump() + "\n";
}

Dataset load_graphs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path);
  std::vector<UnifiedAst> graphs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(path + ": invalid JSON line: " + e.what());
    }
    if (j.contains("provenance")) continue;
    graphs.push_back(unified_ast_from_json(j));
  }
  if (graphs.empty()) throw EmptyCorpus("no graphs in " + path);
  return Dataset(std::move(graphs));
}

std::vector<PairExample> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path);
  std::vector<PairExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.contains("provenance")) continue;
    out.push_back(pair_from_json(j));
  }
  return out;
}

std::array<double, 3> parse_ratio(const std::string& s) {
  std::array<double, 3> r{};
  std::stringstream in(s);
  std::string part;
  std::size_t i = 0;
  while (std::getline(in, part, ':')) {
    if (i >= 3) throw UsageError("--ratio expects a:b:c");
    try {
      r[i++] = std::stod(part);
    } catch (const std::exception&) {
      throw UsageError("--ratio expects a:b:c, got '" + s + "'");
    }
  }
  if (i != 3) throw UsageError("--ratio expects a:b:c, got '" + s + "'");
  return r;
}

NegativeKind negative_kind(const Settings& s) {
  return s.choice("negatives", {"hard", "random"}) == "hard" ? NegativeKind::hard : NegativeKind::random;
}

std::vector<std::string> split_ids(const Settings& s, const Dataset& ds, const SplitManifest& splits) {
  const std::string name = s.choice("split", {"train", "valid", "test"});
  auto ids = ds.ids_in(splits[name]);
  if (ids.empty()) throw EmptyCorpus("split " + name + " has no graphs");
  return ids;
}

SplitManifest load_splits(const Settings& s) { return split_manifest_from_json(read_json_file(s.str("splits"))); }

void check_model_labels(const json& sidecar, const Dataset& ds) {
  const auto rows = sidecar.at("type_rows").get<std::size_t>();
  for (const auto& g : ds.graphs)
    for (const auto& n : g.nodes)
      if (n.label >= rows) throw UnknownLabel("graph " + g.graph_id + " uses label " + std::to_string(n.label) +
                                              " beyond the model's " + std::to_string(rows) + " rows");
}

// ---------------------------------------------------------------------------
// Subcommands

int run_synth(const Settings& s) {
  synth::SynthConfig cfg;
  cfg.tasks = s.count("tasks");
  cfg.variants = s.count("variants");
  cfg.family_size = s.count("family-size");
  cfg.seed = s.count("seed");
  const fs::path out = s.str("out");
  auto corpus = synth::generate(cfg);
  synth::write_corpus(corpus, out);
  write_json_file(out / "provenance.json", provenance(s).to_json(), 2);
  log::info("wrote " + std::to_string(corpus.snippets.size()) + " snippets under " + out.string());
  return 0;
}

int run_split(const Settings& s) {
  const auto manifest = scan_corpus(s.str("corpus"));
  auto splits = make_splits(manifest.task_ids(), parse_ratio(s.str("ratio")), s.count("seed"));
  auto p = provenance(s);
  p.input_hashes["corpus"] = hash_corpus(manifest);
  json j = to_json(splits);
  j["provenance"] = p.to_json();
  emit(s, j.dump(2) + "\n");
  return 0;
}

int run_unify(const Settings& s) {
  const auto manifest = scan_corpus(s.str("corpus"));
  const auto corpus = load_corpus(manifest, s.count("max-nodes"));
  std::set<std::string> train_tasks;
  auto p = provenance(s);
  p.input_hashes["corpus"] = hash_corpus(manifest);
  if (s.has("splits")) {
    train_tasks = load_splits(s).train;
    p.input_hashes["splits"] = hash_file(s.str("splits"));
  }
  std::vector<ParseTree> trees;
  for (const auto& c : corpus)
    if (train_tasks.empty() || train_tasks.contains(c.task_id)) trees.push_back(c.tree);
  std::map<std::string, GrammarSchema> schemas;
  if (s.has("schemas")) {
    schemas = load_schemas(s.str("schemas"));
    p.input_hashes["schemas"] = hash_dir_json(s.str("schemas"));
  }
  UnifyConfig cfg{s.real("label-threshold"), s.count("f-min"), s.real("h-max")};
  const std::string provider = s.str("provider");
  UniversalLabelSet labels;
  if (provider == "builtin") {
    labels = build_label_set(trees, schemas, cfg);
  } else {
    SimilarityProvider ext = http_provider(provider);
    labels = build_label_set(trees, schemas, cfg, ext);
  }
  json j = to_json(labels);
  j["provenance"] = p.to_json();
  emit(s, j.dump(2) + "\n");
  log::info("universal labels: " + std::to_string(labels.size()));
  return 0;
}

int run_enhance(const Settings& s) {
  const auto manifest = scan_corpus(s.str("corpus"));
  const auto corpus = load_corpus(manifest, s.count("max-nodes"));
  const auto labels = label_set_from_json(read_json_file(s.str("labels")));
  auto p = provenance(s);
  p.input_hashes["corpus"] = hash_corpus(manifest);
  p.input_hashes["labels"] = label_set_hash(labels);
  std::vector<std::string> names = default_key_label_names();
  if (s.has("policy")) {
    names = load_policy_names(s.str("policy"));
    p.input_hashes["policy"] = hash_file(s.str("policy"));
  }
  const auto policy = make_key_policy(names, labels);
  EnhanceConfig cfg;
  cfg.prune.ratio = s.real("prune-ratio");
  cfg.prune.seed = s.count("seed");
  cfg.max_attr_tokens = s.count("max-attr-tokens");
  cfg.enabled = s.flag("structural");
  std::string out = jsonl_header(p);
  for (const auto& g : enhance_all(corpus, labels, policy, cfg)) out += to_json(g).dump() + "\n";
  emit(s, out);
  return 0;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig c;
  c.objective = s.choice("task", {"clone", "retrieval"}) == "clone" ? Objective::clone : Objective::retrieval;
  c.batch_size = s.has("batch") ? s.count("batch") : (c.objective == Objective::clone ? 24 : 8);
  c.lr = s.real("lr");
  c.epochs = s.count("epochs");
  c.max_steps = s.count("max-steps");
  c.neg_k = s.count("neg-k");
  if (c.neg_k > 64) throw UsageError("--neg-k must be within 0..64");
  c.loss.tau = s.real("tau");
  c.loss.margin = s.real("margin");
  c.loss.form = form_from_name(s.choice("loss-form", {"sphere", "unit_euclidean", "euclidean"}));
  c.negatives = negative_kind(s);
  c.mining = s.choice("mining", {"static", "dynamic"}) == "static" ? MiningMode::static_histogram
                                                                  : MiningMode::dynamic_model;
  c.hard_fraction = s.real("hard-fraction");
  if (c.hard_fraction < 0 || c.hard_fraction > 1) throw UsageError("--hard-fraction must be within [0, 1]");
  c.seed = s.count("seed");
  c.jobs = std::max<std::uint64_t>(1, s.count("jobs"));
  c.k = s.count("k");
  if (c.batch_size == 0) throw UsageError("--batch must be positive");
  if (!(c.loss.tau > 0)) throw UsageError("--tau must be positive");
  return c;
}

int run_train(const Settings& s) {
  const TrainConfig cfg = train_config(s);
  const auto ds = load_graphs(s.str("graphs"));
  const auto splits = load_splits(s);
  const auto labels = label_set_from_json(read_json_file(s.str("labels")));
  auto p = provenance(s);
  p.input_hashes["graphs"] = hash_file(s.str("graphs"));
  p.input_hashes["splits"] = hash_file(s.str("splits"));
  p.input_hashes["labels"] = label_set_hash(labels);

  // The attribute vocabulary comes from training graphs only.
  std::vector<UnifiedAst> train_graphs;
  for (const auto& id : ds.ids_in(splits.train)) train_graphs.push_back(ds.at(id));
  auto model = GmnModel<float>::initialize(cfg.model, labels.global_root_id() + 1,
                                           Vocabulary::from_graphs(train_graphs), derive_seed(cfg.seed, "model"));
  const fs::path out = s.str("out");
  std::ostringstream log_lines;
  auto result = train(model, ds, splits, cfg, &log_lines);

  json side = model_sidecar(result.best, label_set_hash(labels));
  side["train"] = to_json(cfg);
  side["steps"] = result.steps;
  side["best_score"] = result.best_score;
  side["provenance"] = p.to_json();
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_model(out, result.best, side);
  write_text(out.string() + ".log.jsonl", jsonl_header(p) + log_lines.str());
  log::info("saved " + out.string() + " after " + std::to_string(result.steps) + " steps");
  return 0;
}

struct LoadedModel {
  GmnModel<float> model;
  json sidecar;
};

LoadedModel load_checked_model(const Settings& s, const Dataset& ds, Provenance& p) {
  const std::string path = s.str("model");
  LoadedModel m{load_model<float>(path), read_json_file(path + ".json")};
  check_model_labels(m.sidecar, ds);
  p.input_hashes["model"] = hash_file(path);
  return m;
}

// Pairs for one split, reproducible from the seed.
std::vector<PairExample> eval_pairs(const Settings& s, const Dataset& ds, const std::vector<std::string>& ids,
                                    const std::string& salt) {
  return build_clone_pairs(ds, ids, negative_kind(s), derive_seed(s.count("seed"), salt), nullptr,
                           s.real("hard-fraction"));
}

// Threshold from --threshold, or argmax-F1 over validation pairs.
std::pair<double, std::string> resolve_threshold(const Settings& s, const GmnModel<float>& model, const Dataset& ds,
                                                 const SplitManifest& splits) {
  const std::string t = s.str("threshold");
  if (t != "auto") return {s.real("threshold"), "fixed"};
  const auto ids = ds.ids_in(splits.valid);
  if (ids.empty()) throw EmptyCorpus("threshold auto needs a non-empty valid split");
  const auto pairs = eval_pairs(s, ds, ids, "eval-valid");
  const auto sims = pair_similarities(model, ds, pairs);
  std::vector<int> labels;
  for (const auto& q : pairs) labels.push_back(q.label);
  return {select_threshold(sims, labels), "valid"};
}

int run_detect(const Settings& s) {
  const auto ds = load_graphs(s.str("graphs"));
  const auto splits = load_splits(s);
  auto p = provenance(s);
  p.input_hashes["graphs"] = hash_file(s.str("graphs"));
  p.input_hashes["splits"] = hash_file(s.str("splits"));
  const auto m = load_checked_model(s, ds, p);
  const auto [threshold, source] = resolve_threshold(s, m.model, ds, splits);
  const auto ids = split_ids(s, ds, splits);
  const auto pairs = eval_pairs(s, ds, ids, "eval-" + s.str("split"));
  const auto sims = pair_similarities(m.model, ds, pairs);
  const auto det = detect_clones(pairs, sims, threshold);
  std::string out = jsonl_header(p, {{"threshold", threshold},
                                     {"threshold_source", source},
                                     {"metrics", to_json(det.metrics)}});
  for (const auto& pr : det.predictions) out += to_json(pr).dump() + "\n";
  emit(s, out);
  if (s.has("out")) std::cout << json{{"threshold", threshold}, {"metrics", to_json(det.metrics)}}.dump() << "\n";
  return 0;
}

int run_retrieve(const Settings& s) {
  const auto ds = load_graphs(s.str("graphs"));
  auto p = provenance(s);
  p.input_hashes["graphs"] = hash_file(s.str("graphs"));
  const auto m = load_checked_model(s, ds, p);
  const std::string query = s.str("query");
  const auto& q = ds.at(query);
  std::vector<std::string> ids;
  if (s.has("splits")) {
    p.input_hashes["splits"] = hash_file(s.str("splits"));
    ids = ds.ids_in(load_splits(s)[s.choice("split", {"train", "valid", "test"})]);
  } else {
    for (const auto& [id, i] : ds.index) ids.push_back(id);
  }
  const std::size_t k = s.count("k");
  auto hits = rank_candidates(ds, query, ids, gmn_scorer(m.model));
  std::set<std::string> languages;
  for (const auto& id : ids) languages.insert(ds.at(id).language);
  languages.erase(q.language);
  hits.resize(std::min(hits.size(), k * std::max<std::size_t>(1, languages.size())));
  json list = json::array();
  for (std::size_t i = 0; i < hits.size(); ++i)
    list.push_back({{"rank", i + 1},
                    {"id", hits[i].id},
                    {"sim", hits[i].sim},
                    {"relevant", hits[i].relevant},
                    {"top_k", i < k}});
  json out = {{"provenance", p.to_json()}, {"query", query}, {"k", k}, {"hits", list}};
  emit(s, out.dump(2) + "\n");
  return 0;
}

int run_eval(const Settings& s) {
  const auto ds = load_graphs(s.str("graphs"));
  const auto splits = load_splits(s);
  auto p = provenance(s);
  p.input_hashes["graphs"] = hash_file(s.str("graphs"));
  p.input_hashes["splits"] = hash_file(s.str("splits"));
  const auto m = load_checked_model(s, ds, p);
  const auto ids = split_ids(s, ds, splits);
  json out = {{"provenance", p.to_json()}, {"split", s.str("split")}};
  const std::string task = s.choice("task", {"clone", "retrieval"});
  if (task == "clone") {
    const auto [threshold, source] = resolve_threshold(s, m.model, ds, splits);
    const auto pairs = eval_pairs(s, ds, ids, "eval-" + s.str("split"));
    const auto sims = pair_similarities(m.model, ds, pairs);
    out["threshold"] = threshold;
    out["threshold_source"] = source;
    out["metrics"] = to_json(detect_clones(pairs, sims, threshold).metrics);
  } else {
    out["metrics"] = to_json(evaluate_retrieval(ds, ids, gmn_scorer(m.model), s.count("k")));
  }
  emit(s, out.dump(2) + "\n");
  return 0;
}

int run_export(const Settings& s) {
  const auto ds = load_graphs(s.str("graphs"));
  auto p = provenance(s);
  p.input_hashes["graphs"] = hash_file(s.str("graphs"));
  const auto m = load_checked_model(s, ds, p);
  std::vector<std::string> ids;
  if (s.has("splits")) {
    p.input_hashes["splits"] = hash_file(s.str("splits"));
    ids = split_ids(s, ds, load_splits(s));
  } else {
    for (const auto& [id, i] : ds.index) ids.push_back(id);
  }
  const auto index = EmbeddingIndex::build(m.model, ds, ids);
  const std::string fmt = s.choice("format", {"tsv", "bin"});
  const fs::path out = s.str("out");
  write_text(out, fmt == "tsv" ? index.to_tsv() : index.serialize());
  write_json_file(out.string() + ".provenance.json", p.to_json(), 2);
  return 0;
}

int run_pairs(const Settings& s) {
  const auto ds = load_graphs(s.str("graphs"));
  const auto splits = load_splits(s);
  auto p = provenance(s);
  p.input_hashes["graphs"] = hash_file(s.str("graphs"));
  p.input_hashes["splits"] = hash_file(s.str("splits"));
  const auto pairs = eval_pairs(s, ds, split_ids(s, ds, splits), "pairs-" + s.str("split"));
  std::string out = jsonl_header(p);
  for (const auto& q : pairs) out += to_json(q).dump() + "\n";
  emit(s, out);
  return 0;
}

int run_check_splits(const Settings& s) {
  const auto ds = load_graphs(s.str("graphs"));
  const auto splits = load_splits(s);
  auto p = provenance(s);
  p.input_hashes["graphs"] = hash_file(s.str("graphs"));
  p.input_hashes["splits"] = hash_file(s.str("splits"));
  std::map<std::string, std::vector<PairExample>> pairs;
  if (s.has("pairs")) {
    std::stringstream in(s.str("pairs"));
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw UsageError("--pairs expects <split>=<file>, got '" + item + "'");
      const std::string split = item.substr(0, eq), file = item.substr(eq + 1);
      if (split != "train" && split != "valid" && split != "test") throw UsageError("unknown split '" + split + "'");
      auto list = load_pairs(file);
      p.input_hashes["pairs." + split] = hash_file(file);
      auto& dst = pairs[split];
      dst.insert(dst.end(), list.begin(), list.end());
    }
  } else {
    for (const char* name : kSplitNames) {
      const auto ids = ds.ids_in(splits[name]);
      if (!ids.empty()) pairs[name] = eval_pairs(s, ds, ids, std::string("pairs-") + name);
    }
  }
  auto task_of = [&ds](const std::string& id) {
    if (auto it = ds.index.find(id); it != ds.index.end()) return ds.graphs[it->second].task_id;
    return id.substr(0, id.find('/'));
  };
  const auto audit = check_split_integrity(splits, pairs, task_of);
  json out = to_json(audit);
  out["provenance"] = p.to_json();
  emit(s, out.dump(2) + "\n");
  for (const auto& [split, c] : audit.counts) log::info(split + ": " + count_line(c.first, c.second));
  if (!audit.clean()) throw AuditFailure("split audit found overlaps");
  return 0;
}

struct Subcommand {
  const char* name;
  const char* help;
  std::vector<std::string> knobs;
  int (*run)(const Settings&);
};

const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> subs = {
      {"synth", "write a synthetic two-language corpus", {"out", "tasks", "variants", "family-size", "seed"}, run_synth},
      {"split", "task-level train/valid/test split", {"corpus", "ratio", "seed", "out"}, run_split},
      {"unify",
       "build the universal label set",
       {"corpus", "schemas", "splits", "label-threshold", "f-min", "h-max", "provider", "max-nodes", "seed", "out"},
       run_unify},
      {"enhance",
       "map, root, classify and prune every snippet into unified graphs",
       {"corpus", "labels", "policy", "prune-ratio", "max-nodes", "max-attr-tokens", "structural", "seed", "out"},
       run_enhance},
      {"train",
       "train the graph matching network",
       {"graphs", "splits", "labels", "task", "neg-k", "tau", "margin", "loss-form", "epochs", "max-steps", "batch",
        "lr", "negatives", "mining", "hard-fraction", "k", "seed", "jobs", "out"},
       run_train},
      {"detect",
       "classify clone pairs of a split",
       {"graphs", "splits", "model", "split", "threshold", "negatives", "hard-fraction", "seed", "out"},
       run_detect},
      {"retrieve",
       "rank cross-language candidates for one query",
       {"graphs", "model", "query", "k", "splits", "split", "seed", "out"},
       run_retrieve},
      {"eval",
       "clone or retrieval metrics on a split",
       {"graphs", "splits", "model", "split", "task", "threshold", "negatives", "hard-fraction", "k", "seed", "out"},
       run_eval},
      {"export-embeddings",
       "write graph embeddings as TSV or an EMBIDX1 binary index",
       {"graphs", "model", "splits", "split", "format", "seed", "out"},
       run_export},
      {"pairs",
       "write the evaluation pairs of a split as JSONL",
       {"graphs", "splits", "split", "negatives", "hard-fraction", "seed", "out"},
       run_pairs},
      {"check-splits",
       "audit task, snippet and pair overlap across splits",
       {"graphs", "splits", "pairs", "negatives", "hard-fraction", "seed", "out"},
       run_check_splits},
  };
  return subs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"astbridge: cross-language code embedding via unified ASTs and graph matching"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug | info | warn | error | off")->envname("ASTBRIDGE_LOG_LEVEL");

  std::vector<std::pair<CLI::App*, std::unique_ptr<Settings>>> apps;
  for (const auto& sub : subcommands()) {
    CLI::App* a = app.add_subcommand(sub.name, sub.help);
    apps.emplace_back(a, std::make_unique<Settings>(a, sub.knobs));
  }

  auto usage = [&](const std::string& msg) {
    std::cerr << "astbridge: " << msg << "\n\n";
    for (std::size_t i = 0; i < apps.size(); ++i) {
      if (apps[i].first->parsed()) {
        std::cerr << apps[i].first->help();
        print_schema(std::cerr, subcommands()[i].name, subcommands()[i].knobs);
        return 2;
      }
    }
    std::cerr << app.help();
    return 2;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return usage(e.what());
  }

  static const std::map<std::string, log::Level> levels = {{"debug", log::Level::debug},
                                                           {"info", log::Level::info},
                                                           {"warn", log::Level::warn},
                                                           {"error", log::Level::error},
                                                           {"off", log::Level::off}};
  if (!levels.contains(log_level)) return usage("unknown log level " + log_level);
  log::set_level(levels.at(log_level));

  for (std::size_t i = 0; i < apps.size(); ++i) {
    if (!apps[i].first->parsed()) continue;
    try {
      apps[i].second->load();
      return subcommands()[i].run(*apps[i].second);
    } catch (const UsageError& e) {
      return usage(e.what());
    } catch (const AuditFailure& e) {
      log::error(e.what());
      return 1;
    } catch (const Error& e) {
      log::error(e.what());
      return 1;
    } catch (const json::exception& e) {
      log::error(std::string("malformed input: ") + e.what());
      return 1;
    } catch (const std::filesystem::filesystem_error& e) {
      log::error(e.what());
      return 1;
    }
  }
  return usage("no subcommand");
}
