#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relind/pipeline.hpp"

using namespace relind;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("relind-pipeline-" + std::to_string(::getpid()) + "-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult cli(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(RELIND_CLI) + "' " + args +
                          " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// One synthetic world shared by the CLI tests.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("cli"));
    const auto r = cli(*dir_, "synth world --facts 20 --distractors 15 --noise 0.1");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static const fs::path& dir() { return *dir_; }
  static CliResult run(const std::string& args) { return cli(*dir_, "--config world/demo.conf " + args); }

 private:
  static fs::path* dir_;
};

fs::path* CliTest::dir_ = nullptr;

}  // namespace

TEST(Config, FileResolvesPathsAgainstItsDirectory) {
  const auto dir = scratch("config");
  std::ofstream(dir / "a.conf") << "# comment\n"
                                   "corpus = texts   # trailing\n"
                                   "dataset=/abs/pairs.tsv\n"
                                   "fixture = w.json\n"
                                   "top = all\n"
                                   "aggregation = sum\n"
                                   "learning_rate = 0.25\n"
                                   "presplit = yes\n"
                                   "\n";
  RunConfig c;
  load_config_file(c, dir / "a.conf");
  EXPECT_EQ(c.corpus, (dir / "texts").string());
  EXPECT_EQ(c.dataset, "/abs/pairs.tsv");
  EXPECT_EQ(c.fixture, (dir / "w.json").string());
  EXPECT_FALSE(c.eval.filter_templates);
  EXPECT_EQ(c.eval.aggregation, Aggregation::sum);
  EXPECT_EQ(c.eval.train.learning_rate, 0.25);
  EXPECT_TRUE(c.eval.mining.presplit);
  EXPECT_NO_THROW(c.validate());
  fs::remove_all(dir);
}

TEST(Config, RejectsBadInput) {
  RunConfig c;
  EXPECT_THROW(apply_setting(c, "colour", "red"), ConfigError);
  EXPECT_THROW(apply_setting(c, "epochs", "five"), ConfigError);
  EXPECT_THROW(apply_setting(c, "k", "-3"), ConfigError);
  EXPECT_THROW(apply_setting(c, "k", "10x"), ConfigError);
  EXPECT_THROW(apply_setting(c, "presplit", "maybe"), ConfigError);
  EXPECT_THROW(apply_setting(c, "aggregation", "mean"), ConfigError);
  EXPECT_THROW(load_config_file(c, "/nonexistent/relind.conf"), ConfigError);

  // No backend, then both.
  EXPECT_THROW(c.validate(), ConfigError);
  c.fixture = "w.json";
  c.remote = "http://localhost:8000";
  EXPECT_THROW(c.validate(), ConfigError);
  c.remote.clear();
  apply_setting(c, "top", "200");
  apply_setting(c, "prefilter", "100");
  EXPECT_THROW(c.validate(), ConfigError);
  apply_setting(c, "format", "xml");
  apply_setting(c, "top", "all");
  EXPECT_THROW(c.validate(), ConfigError);

  const auto dir = scratch("badconf");
  std::ofstream(dir / "b.conf") << "corpus\n";
  EXPECT_THROW(load_config_file(c, dir / "b.conf"), ConfigError);
  fs::remove_all(dir);
}

TEST(Config, TextRenderingRoundTrips) {
  RunConfig c;
  c.corpus = "/data/corpus";
  c.dataset = "/data/pairs.tsv";
  c.fixture = "/data/world.json";
  c.output = "/tmp/elsewhere";
  c.eval.workers = 7;
  c.eval.train.learning_rate = 0.1;
  c.eval.cross_ratio = 1.5;
  c.eval.filter_templates = false;
  const auto text = config_to_text(c);
  EXPECT_EQ(text.find("output"), std::string::npos);
  EXPECT_EQ(text.find("workers"), std::string::npos);
  EXPECT_NE(text.find("learning_rate = 0.1\n"), std::string::npos);
  EXPECT_NE(text.find("top = all\n"), std::string::npos);

  const auto dir = scratch("roundtrip");
  std::ofstream(dir / "c.conf") << text;
  RunConfig back;
  load_config_file(back, dir / "c.conf");
  EXPECT_EQ(config_to_text(back), text);
  fs::remove_all(dir);
}

TEST_F(CliTest, RunEqualsChainedStages) {
  const auto whole = run("--out whole --csv true run");
  ASSERT_EQ(whole.code, 0) << whole.err;
  EXPECT_NE(whole.out.find("micro-avg"), std::string::npos);

  for (const char* stage : {"split", "mine", "filter", "train", "eval"}) {
    const auto r = run(std::string("--out chained --csv true ") + stage);
    ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
  }
  // Command-line paths are relative to the working directory.
  const auto a = dir() / "whole", b = dir() / "chained";
  for (const char* f : {"report.json", "report.txt", "report.csv", "manifest.json", "run.conf"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  for (const auto& e : fs::directory_iterator(a / "models")) {
    EXPECT_EQ(slurp(e.path()), slurp(b / "models" / e.path().filename())) << e.path();
  }
  const auto report = nlohmann::json::parse(slurp(a / "report.json"));
  EXPECT_GE(report["aggregate"]["f1"].get<double>(), 0.9);
  EXPECT_EQ(report["manifest"]["config_hash"],
            std::to_string(fnv1a(slurp(a / "run.conf"))));
}

TEST_F(CliTest, RepeatedRunsAreIdentical) {
  const auto one = run("--out det1 --workers 1 run");
  const auto two = run("--out det2 --workers 4 run");
  ASSERT_EQ(one.code, 0) << one.err;
  ASSERT_EQ(two.code, 0) << two.err;
  EXPECT_EQ(one.out, two.out);
  EXPECT_EQ(slurp(dir() / "det1" / "report.json"), slurp(dir() / "det2" / "report.json"));
}

TEST_F(CliTest, MissingArtifactNamesTheProducer) {
  const auto fresh = run("--out fresh train");
  EXPECT_EQ(fresh.code, 2);
  EXPECT_NE(fresh.err.find("run `relind split` first"), std::string::npos) << fresh.err;

  ASSERT_EQ(run("--out partial split").code, 0);
  const auto r = run("--out partial train");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("run `relind filter` first"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("stage 'train' failed"), std::string::npos) << r.err;
}

TEST_F(CliTest, ClassifyLinksAndProbe) {
  ASSERT_EQ(run("--out models run").code, 0);
  const auto pairs = slurp(dir() / "world" / "dataset.tsv");
  std::istringstream in(pairs);
  std::string rel, head, tail;
  std::getline(in, rel, '\t');
  std::getline(in, head, '\t');
  std::getline(in, tail);

  const auto pos = run("--out models --json classify " + head + " " + tail + " --relation " + rel);
  ASSERT_EQ(pos.code, 0) << pos.err;
  const auto j = nlohmann::json::parse(pos.out);
  EXPECT_TRUE(j["decision_max"].get<bool>());
  EXPECT_EQ(j["per_template"].size(), 10u);
  const auto neg = run("--out models --json classify " + tail + " " + head + " --relation " + rel);
  ASSERT_EQ(neg.code, 0) << neg.err;
  EXPECT_FALSE(nlohmann::json::parse(neg.out)["decision_max"].get<bool>());

  const auto ambiguous = run("--out models classify " + head + " " + tail);
  EXPECT_EQ(ambiguous.code, 1);

  const auto links = run("--out models --json links " + head + " --relation " + rel);
  ASSERT_EQ(links.code, 0) << links.err;
  EXPECT_EQ(nlohmann::json::parse(links.out)["candidates"][0]["token"], tail);

  const auto probe = run("probe \"" + head + " is the capital of [MASK] .\"");
  ASSERT_EQ(probe.code, 0) << probe.err;
  EXPECT_FALSE(probe.out.empty());
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli(dir(), "--config world/demo.conf --top 20 --prefilter 10 run").code, 1);
  std::ofstream(dir() / "bad.conf") << "colour = red\n";
  EXPECT_EQ(cli(dir(), "--config bad.conf run").code, 1);
  EXPECT_EQ(run("probe \"no mask here\"").code, 2);
  EXPECT_EQ(cli(dir(), "--remote http://127.0.0.1:1 probe \"a [MASK] .\"").code, 3);
  EXPECT_NE(cli(dir(), "frobnicate").code, 0);
}
