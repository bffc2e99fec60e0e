#include "test_helpers.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "hdiff/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "hdiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = hdiff::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;
  std::string dataset, labelled;

  void SetUp() override {
    dir = fs::path(HDIFF_TEST_TMPDIR) / ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(dir);
    fs::create_directories(dir);
    dataset = (dir / "data.csv").string();
    std::ofstream(dataset) << "x0,x1\n0,0\n1,0.5\n-0.8,0.3\n";
    labelled = (dir / "labelled.csv").string();
    std::ofstream(labelled) << "x0,x1,label\n-2,0,0\n-2,0.3,0\n2,0,1\n2,-0.3,1\n";
  }

  std::string out(const std::string& sub) const { return (dir / sub).string(); }
};

const std::vector<std::string> kBridge = {"--set", "forward.variant=bridge", "--set", "forward.target=[3,0]"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<std::string> kTinyTrain = {"--set", "train.epochs=2",          "--set", "train.steps_per_epoch=5",
                                             "--set", "train.paths_per_point=4", "--set", "train.hidden=[8]",
                                             "--set", "train.corpus_dt=0.01"};

}  // namespace

TEST_F(Cli, GenerateWritesTheRequestedRows) {
  const auto r = run(with({"generate", "--exact", "--dataset", dataset, "-n", "7", "--seed", "3", "-o", out("g")}, kBridge));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "g" / "samples.csv"), 8u);
  EXPECT_EQ(slurp(dir / "g" / "samples.csv").substr(0, 27), "x0,x1,lifetime,steps,init0,");
  const json m = json::parse(slurp(dir / "g" / "generate_metrics.json"));
  EXPECT_EQ(m["generated"], 7);
  EXPECT_EQ(m["failures"], 0);
}

TEST_F(Cli, TrainThenGenerateIsDeterministic) {
  const auto t = run(with(with({"train", "--dataset", dataset, "--seed", "1", "-o", out("t")}, kBridge), kTinyTrain));
  ASSERT_EQ(t.code, 0) << t.err;
  const std::string ckpt = out("t/model.ckpt");
  ASSERT_TRUE(fs::exists(ckpt));
  ASSERT_TRUE(fs::exists(ckpt + ".support"));
  EXPECT_EQ(count_lines(dir / "t" / "metrics.jsonl"), 3u);
  const json first = json::parse(slurp(dir / "t" / "metrics.jsonl").substr(0, slurp(dir / "t" / "metrics.jsonl").find('\n')));
  EXPECT_EQ(first["event"], "epoch_loss");
  EXPECT_EQ(first["seed"], 1);

  const auto t2 = run(with(with({"train", "--dataset", dataset, "--seed", "1", "-o", out("t2")}, kBridge), kTinyTrain));
  ASSERT_EQ(t2.code, 0) << t2.err;
  EXPECT_EQ(slurp(ckpt), slurp(out("t2/model.ckpt")));

  for (const char* sub : {"a", "b"}) {
    const auto g = run(with({"generate", "--checkpoint", ckpt, "-n", "5", "--seed", "9", "-o", out(sub),
                             "--set", "sampling.step_cap=20000"}, kBridge));
    ASSERT_EQ(g.code, 0) << g.err;
  }
  EXPECT_EQ(slurp(dir / "a" / "samples.csv"), slurp(dir / "b" / "samples.csv"));
  EXPECT_EQ(slurp(dir / "a" / "generate_metrics.json"), slurp(dir / "b" / "generate_metrics.json"));
}

TEST_F(Cli, ThreadCountDoesNotChangeOutput) {
  for (const char* threads : {"1", "3"}) {
    const auto r = run(with({"sample-exact", "--dataset", dataset, "-n", "12", "--seed", "5", "--threads", threads,
                             "-o", out(std::string("s") + threads)}, kBridge));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir / "s1" / "samples.csv"), slurp(dir / "s3" / "samples.csv"));
}

TEST_F(Cli, SimulateForwardWithTrace) {
  const auto r = run({"simulate-forward", "-n", "4", "--trace", "--seed", "2", "-o", out("f")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "f" / "forward_paths.csv"), 5u);
  EXPECT_GT(count_lines(dir / "f" / "trace.csv"), 5u);
  const json m = json::parse(slurp(dir / "f" / "forward_metrics.json"));
  EXPECT_EQ(m["kill_reasons"]["rate"], 4);
}

TEST_F(Cli, ConditionAnomalyAndClassify) {
  auto c = run(with({"condition", "--exact", "--dataset", dataset, "--point", "1.5,1.5", "-n", "20", "-o", out("c")}, kBridge));
  ASSERT_EQ(c.code, 0) << c.err;
  const json cj = json::parse(slurp(dir / "c" / "condition.json"));
  EXPECT_EQ(cj["exact_posterior"].size(), 3u);
  double s = 0.0;
  for (const auto& f : cj["frequencies"]) s += f.get<double>();
  EXPECT_NEAR(s, 1.0, 1e-12);

  auto a = run({"anomaly", "--exact", "--dataset", dataset, "--point", "0,4", "--set", "query.runs=10", "--set",
                "query.threshold=0.5", "-o", out("a")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(json::parse(slurp(dir / "a" / "anomaly.json"))["decision"], "anomaly");

  auto k = run({"classify", "--exact", "--dataset", labelled, "--point", "-1.5,0.2", "--set", "query.runs=20", "-o",
                out("k")});
  ASSERT_EQ(k.code, 0) << k.err;
  const json kj = json::parse(slurp(dir / "k" / "classify.json"));
  EXPECT_EQ(kj["class"], 0);
  EXPECT_EQ(kj["posterior"]["exact"].size(), 2u);
}

TEST_F(Cli, ValidateReportsPassAndFailure) {
  auto ok = run({"validate", "--set", "validate.checks=[\"ou-approx\"]", "-o", out("v")});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  auto bad = run({"validate", "--set", "validate.checks=[\"ou-approx\"]", "--set", "validate.ou_dim=2", "--set",
                  "validate.ou_rate=5", "-o", out("v2")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  EXPECT_FALSE(json::parse(slurp(dir / "v2" / "validation.json"))["passed"].get<bool>());
}

TEST_F(Cli, ErrorsGiveNonZeroExitCodes) {
  // dimension mismatch between dataset and process
  auto r = run({"generate", "--exact", "--dataset", dataset, "--set", "process.dim=3", "-o", out("e")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dimension mismatch"), std::string::npos);
  // missing checkpoint
  r = run(with({"generate", "--checkpoint", out("nope.ckpt"), "-o", out("e")}, kBridge));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("checkpoint not found"), std::string::npos);
  // malformed config
  const std::string cfg = out("bad.json");
  std::ofstream(cfg) << "{ \"seed\": ";
  r = run({"generate", "--config", cfg, "-o", out("e")});
  EXPECT_EQ(r.code, 2);
  // wrong type in config
  r = run({"generate", "--set", "support.epsilon=\"wide\"", "-o", out("e")});
  EXPECT_EQ(r.code, 2);
  // unknown subcommand and missing subcommand
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  // conditioning point inside the support
  r = run(with({"condition", "--exact", "--dataset", dataset, "--point", "0,0", "-o", out("e")}, kBridge));
  EXPECT_EQ(r.code, 2);
  // bad point
  r = run({"anomaly", "--exact", "--dataset", dataset, "--point", "1,abc", "-o", out("e")});
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, ConfigFileAndOverrides) {
  const std::string cfg = out("cfg.json");
  std::ofstream(cfg) << R"({"seed": 4, "sampling": {"count": 3}, "forward": {"variant": "sphere", "radius": 4.0}})";
  auto r = run({"sample-exact", "--config", cfg, "--dataset", dataset, "-o", out("x")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "x" / "samples.csv"), 4u);
  EXPECT_EQ(json::parse(slurp(dir / "x" / "sample_exact_metrics.json"))["seed"], 4);
  r = run({"sample-exact", "--config", cfg, "--seed", "8", "-n", "2", "--dataset", dataset, "-o", out("y")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "y" / "samples.csv"), 3u);
  EXPECT_EQ(json::parse(slurp(dir / "y" / "sample_exact_metrics.json"))["seed"], 8);
}
