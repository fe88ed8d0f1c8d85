#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shared working directory; the pipeline fixture fills it once.
const fs::path& work() {
  static const fs::path dir = fs::temp_directory_path() / ("astbridge_cli_" + std::to_string(::getpid()));
  return dir;
}

CliResult cli(const std::string& args, const std::string& env = "") {
  const fs::path out = work() / "stdout.txt", err = work() / "stderr.txt";
  const std::string cmd = "cd " + work().string() + " && env -u ASTBRIDGE_CONFIG " + env + " " + ASTBRIDGE_CLI_PATH +
                          " --log-level warn " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(json::parse(line));
  return rows;
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(work());
    fs::create_directories(work());
    const std::pair<const char*, const char*> steps[] = {
        {"synth", "synth --tasks 10 --variants 1 --out data"},
        {"split", "split --corpus data/corpus --out splits.json"},
        {"unify", "unify --corpus data/corpus --schemas data/schemas --splits splits.json --out labels.json"},
        {"enhance", "enhance --corpus data/corpus --labels labels.json --out graphs.jsonl"},
        {"train", "train --graphs graphs.jsonl --splits splits.json --labels labels.json --max-steps 2 --batch 4 "
                  "--out model.bin"},
    };
    for (const auto& [name, args] : steps) {
      const CliResult r = cli(args);
      ASSERT_EQ(r.code, 0) << name << ": " << r.err;
    }
  }
  static void TearDownTestSuite() { fs::remove_all(work()); }
};

}  // namespace

TEST_F(CliPipeline, ArtifactsCarryProvenance) {
  EXPECT_TRUE(fs::exists(work() / "model.bin"));
  EXPECT_TRUE(fs::exists(work() / "model.bin.json"));
  const auto graphs = jsonl(work() / "graphs.jsonl");
  ASSERT_GT(graphs.size(), 1u);
  EXPECT_TRUE(graphs[0].contains("provenance"));
  EXPECT_TRUE(graphs[0]["provenance"].contains("config"));
  const auto log = jsonl(work() / "model.bin.log.jsonl");
  ASSERT_GE(log.size(), 2u);
  for (const char* key : {"epoch", "step", "loss", "val_p", "val_r", "val_f1", "val_mrr"}) EXPECT_TRUE(log[1].contains(key));
  EXPECT_EQ(log.back()["step"], 2);
}

TEST_F(CliPipeline, CheckSplitsCleanAndPlanted) {
  CliResult r = cli("check-splits --graphs graphs.jsonl --splits splits.json");
  EXPECT_EQ(r.code, 0) << r.err;
  auto report = json::parse(r.out);
  EXPECT_TRUE(report["clean"].get<bool>());
  EXPECT_EQ(report["task_overlap"], 0);
  EXPECT_NE(report["splits"]["train"]["summary"].get<std::string>().find(" pairs over 8 tasks"), std::string::npos);

  // a test pair that reuses a training pair, swapped
  ASSERT_EQ(cli("pairs --graphs graphs.jsonl --splits splits.json --split train --out train_pairs.jsonl").code, 0);
  ASSERT_EQ(cli("pairs --graphs graphs.jsonl --splits splits.json --split test --out test_pairs.jsonl").code, 0);
  auto train = jsonl(work() / "train_pairs.jsonl");
  ASSERT_GT(train.size(), 1u);
  json leak = train[1];
  std::swap(leak["g1_id"], leak["g2_id"]);
  std::ofstream(work() / "test_pairs.jsonl", std::ios::app) << leak.dump() << "\n";
  r = cli("check-splits --graphs graphs.jsonl --splits splits.json --pairs train=train_pairs.jsonl "
          "--pairs test=test_pairs.jsonl");
  EXPECT_EQ(r.code, 1);
  report = json::parse(r.out);
  EXPECT_EQ(report["pair_overlap"], 1);
  EXPECT_FALSE(report["clean"].get<bool>());
}

TEST_F(CliPipeline, DetectWithAutoThreshold) {
  CliResult r = cli("detect --graphs graphs.jsonl --splits splits.json --model model.bin --out pred.jsonl");
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = jsonl(work() / "pred.jsonl");
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0]["threshold_source"], "valid");
  const double t = rows[0]["threshold"];
  for (std::size_t i = 1; i < rows.size(); ++i) {
    for (const char* key : {"g1_id", "g2_id", "sim", "predicted", "label"}) ASSERT_TRUE(rows[i].contains(key));
    EXPECT_EQ(rows[i]["predicted"].get<bool>(), rows[i]["sim"].get<double>() >= t);
  }
  r = cli("detect --graphs graphs.jsonl --splits splits.json --model model.bin --threshold 0.5 --out fixed.jsonl");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(jsonl(work() / "fixed.jsonl")[0]["threshold"], 0.5);
}

TEST_F(CliPipeline, RetrieveListsTopK) {
  const auto graphs = jsonl(work() / "graphs.jsonl");
  const std::string query = graphs[1]["graph_id"];
  CliResult r = cli("retrieve --graphs graphs.jsonl --model model.bin --k 3 --query " + query);
  ASSERT_EQ(r.code, 0) << r.err;
  auto out = json::parse(r.out);
  // two languages: at most k candidates, all top-k
  ASSERT_EQ(out["hits"].size(), 3u);
  double prev = 2;
  for (const auto& h : out["hits"]) {
    EXPECT_TRUE(h["top_k"].get<bool>());
    EXPECT_LE(h["sim"].get<double>(), prev);
    prev = h["sim"];
  }
}

TEST_F(CliPipeline, EvalAndExport) {
  CliResult r = cli("eval --graphs graphs.jsonl --splits splits.json --model model.bin --task retrieval --split train");
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = json::parse(r.out)["metrics"];
  EXPECT_GT(m["mrr"].get<double>(), 0.0);
  r = cli("export-embeddings --graphs graphs.jsonl --splits splits.json --model model.bin --split test --format bin "
          "--out emb.bin");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(work() / "emb.bin").substr(0, 7), "EMBIDX1");
  EXPECT_TRUE(fs::exists(work() / "emb.bin.provenance.json"));
}

TEST_F(CliPipeline, UsageErrorsExitTwoWithSchema) {
  CliResult r = cli("split --corpus data/corpus --bogus 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ASTBRIDGE_RATIO"), std::string::npos);
  r = cli("split --out x.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--corpus"), std::string::npos);
  r = cli("train --graphs graphs.jsonl --splits splits.json --labels labels.json --lr fast --out m.bin");
  EXPECT_EQ(r.code, 2);
  r = cli("train --graphs graphs.jsonl --splits splits.json --labels labels.json --task ranking --out m.bin");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(cli("").code, 2);
}

TEST_F(CliPipeline, BadInputsExitOne) {
  std::ofstream(work() / "broken.jsonl") << "{\"graph_id\": 3}\n";
  EXPECT_EQ(cli("check-splits --graphs broken.jsonl --splits splits.json").code, 1);
  EXPECT_EQ(cli("split --corpus missing_dir --out s.json").code, 1);
}

TEST_F(CliPipeline, SettingPrecedence) {
  // 10 tasks: 6:2:2 keeps 6 for training, 1:1:8 one, 2:4:4 two
  std::ofstream(work() / "cfg.json") << R"({"ratio": "2:4:4"})";
  auto train_size = [](const std::string& path) { return json::parse(slurp(work() / path))["train"].size(); };
  ASSERT_EQ(cli("split --corpus data/corpus --config cfg.json --out a.json").code, 0);
  EXPECT_EQ(train_size("a.json"), 2u);
  ASSERT_EQ(cli("split --corpus data/corpus --config cfg.json --out b.json", "ASTBRIDGE_RATIO=1:1:8").code, 0);
  EXPECT_EQ(train_size("b.json"), 1u);
  ASSERT_EQ(cli("split --corpus data/corpus --config cfg.json --ratio 6:2:2 --out c.json", "ASTBRIDGE_RATIO=1:1:8").code, 0);
  EXPECT_EQ(train_size("c.json"), 6u);
  ASSERT_EQ(cli("split --corpus data/corpus --out d.json").code, 0);
  EXPECT_EQ(train_size("d.json"), 8u);
  EXPECT_EQ(json::parse(slurp(work() / "c.json"))["provenance"]["config"]["ratio"], "6:2:2");
}
