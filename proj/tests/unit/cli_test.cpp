#include <gtest/gtest.h>

#include <json.hpp>
#include <sstream>

#include "eduseg/cli.hpp"
#include "eduseg/corpus.hpp"
#include "eduseg/synthetic.hpp"
#include "fixtures.hpp"

namespace eduseg {
namespace {

using nlohmann::json;
using testing::read_text;
using testing::TempDir;
using testing::write_text;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// One synthetic corpus and a quickly trained checkpoint shared by the suite.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    auto r = run({"synth", "--out-dir", dir().string(), "--dim", "8", "--reps-dim", "4", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"train", "--train", path("train.txt"), "--val", path("val.txt"), "--embeddings",
             path("embeddings.txt"), "--checkpoint", path("model.ckpt"), "--hidden", "4", "--max-epochs", "2",
             "--learning-rate", "0.01"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static const std::filesystem::path& dir() { return dir_->path(); }
  static std::string path(const std::string& name) { return (dir() / name).string(); }

  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

TEST_F(CliTest, SynthWritesSplits) {
  EXPECT_EQ(load_corpus(path("train.txt")).size(), 300u);
  EXPECT_EQ(load_corpus(path("val.txt")).size(), 50u);
  EXPECT_EQ(load_corpus(path("test.txt")).size(), 50u);
  EXPECT_NO_THROW(load_contextual_reps(path("test.rep1"), load_corpus(path("test.txt"))));
}

TEST_F(CliTest, TrainWritesMetricsLog) {
  std::istringstream log(read_text(path("model.ckpt.metrics.jsonl")));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = json::parse(line);
    EXPECT_EQ(j["epoch"], ++lines);
    EXPECT_TRUE(j.contains("val_f1"));
  }
  EXPECT_EQ(lines, 2);
}

TEST_F(CliTest, MissingCorpusExitsTwoNamingPath) {
  auto r = run({"train", "--train", path("nope.txt"), "--val", path("val.txt"), "--embeddings",
                path("embeddings.txt"), "--checkpoint", path("x.ckpt")});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find(path("nope.txt")), std::string::npos) << r.err;
}

TEST_F(CliTest, ElmoWithoutRepsIsConfigError) {
  auto r = run({"train", "--train", path("train.txt"), "--val", path("val.txt"), "--embeddings",
                path("embeddings.txt"), "--checkpoint", path("y.ckpt"), "--use-elmo"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("--reps"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(path("y.ckpt")));
}

TEST_F(CliTest, SegmentEmptyInput) {
  write_text(dir() / "empty.txt", "");
  auto r = run({"segment", "--checkpoint", path("model.ckpt"), "--input", path("empty.txt"), "--output",
                path("empty.out")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text(dir() / "empty.out"), "");
}

TEST_F(CliTest, SegmentIsDeterministicAndKeepsTokens) {
  write_text(dir() / "raw.txt", "Mr.\nRambo\nsays\nthat\na\nproperty\n\nit\nrose\nbecause\nprice\n");
  auto a = run({"segment", "--checkpoint", path("model.ckpt"), "--input", path("raw.txt"), "--output",
                path("seg1.txt")});
  auto b = run({"segment", "--checkpoint", path("model.ckpt"), "--input", path("raw.txt"), "--output",
                path("seg2.txt")});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(read_text(dir() / "seg1.txt"), read_text(dir() / "seg2.txt"));
  auto seg = load_corpus(dir() / "seg1.txt");
  ASSERT_EQ(seg.size(), 2u);
  EXPECT_EQ(seg[0].tokens, (std::vector<std::string>{"Mr.", "Rambo", "says", "that", "a", "property"}));
  EXPECT_EQ(seg[0].labels[0], 0);
}

TEST_F(CliTest, SegmentToStdout) {
  auto r = run({"segment", "--checkpoint", path("model.ckpt"), "--input", path("test.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  EXPECT_EQ(parse_corpus(in).size(), 50u);
}

TEST_F(CliTest, EvalPrintsMetrics) {
  auto r = run({"eval", "--checkpoint", path("model.ckpt"), "--corpus", path("test.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(r.out);
  for (const char* key : {"precision", "recall", "f1", "tp", "fp", "fn"}) EXPECT_TRUE(j.contains(key)) << key;
}

TEST_F(CliTest, EvalOfOwnOutputIsPerfect) {
  auto seg = run({"segment", "--checkpoint", path("model.ckpt"), "--input", path("test.txt"), "--output",
                  path("echo.txt")});
  ASSERT_EQ(seg.code, 0) << seg.err;
  auto r = run({"eval", "--checkpoint", path("model.ckpt"), "--corpus", path("echo.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["f1"], 1.0);
}

TEST_F(CliTest, MisalignedRepsFail) {
  auto r = run({"train", "--train", path("train.txt"), "--val", path("val.txt"), "--embeddings",
                path("embeddings.txt"), "--checkpoint", path("e.ckpt"), "--use-elmo", "--reps",
                path("train.rep1"), "--val-reps", path("val.rep1"), "--hidden", "4", "--max-epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  // Reps of a different corpus.
  auto shuffled = load_corpus(path("test.txt"));
  std::rotate(shuffled.begin(), shuffled.begin() + 1, shuffled.end());
  write_corpus(dir() / "rotated.txt", shuffled);
  auto e = run({"eval", "--checkpoint", path("e.ckpt"), "--corpus", path("rotated.txt"), "--reps",
                path("test.rep1")});
  EXPECT_NE(e.code, 0);
  EXPECT_NE(e.err.find("sentence"), std::string::npos) << e.err;
}

TEST_F(CliTest, BenchReportsRowsAndSidecar) {
  auto r = run({"bench", "--checkpoint", path("model.ckpt"), "--corpus", path("test.txt"), "--batch-sizes",
                "32", "--repetitions", "5", "--warmup", "0", "--bench-json", path("bench.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Speedup"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("1.0x"), std::string::npos) << r.out;
  auto j = json::parse(read_text(dir() / "bench.json"));
  ASSERT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(j["rows"][0]["batch_size"], 1);
  EXPECT_EQ(j["rows"][1]["batch_size"], 32);
  EXPECT_EQ(j["rows"][0]["samples"].size(), 5u);
}

TEST_F(CliTest, UnknownConfigKey) {
  write_text(dir() / "bad.json", R"({"learnin_rate": 0.1})");
  auto r = run({"eval", "--config", path("bad.json"), "--checkpoint", path("model.ckpt"), "--corpus",
                path("test.txt")});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("learnin_rate"), std::string::npos) << r.err;
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  write_text(dir() / "cfg.json", json{{"train", path("train.txt")}, {"val", path("val.txt")},
                                      {"embeddings", path("embeddings.txt")}, {"checkpoint", path("c.ckpt")},
                                      {"hidden", 4}, {"max_epochs", 5}}.dump());
  auto r = run({"train", "--config", path("cfg.json"), "--max-epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(read_text(dir() / "c.ckpt.metrics.jsonl")).at("epoch"), 1);
}

TEST(CliConfig, ApplyJsonTypeChecks) {
  cli::CliConfig c;
  cli::apply_json(c, R"({"hidden": 7, "window": "inf", "batch_sizes": [1, 8]})");
  EXPECT_EQ(c.train.hidden, 7u);
  EXPECT_TRUE(c.train.window.is_unbounded());
  EXPECT_EQ(c.batch_sizes, (std::vector<std::size_t>{1, 8}));
  EXPECT_THROW(cli::apply_json(c, R"({"hidden": "seven"})"), ConfigError);
  EXPECT_THROW(cli::apply_json(c, R"({"mystery": 1})"), ConfigError);
}

TEST(CliUsage, NoSubcommandIsUsageError) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

}  // namespace
}  // namespace eduseg
