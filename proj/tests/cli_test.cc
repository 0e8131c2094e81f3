#include <arpa/inet.h>
#include <gtest/gtest.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>

#include "binary_io.h"
#include "test_util.h"

namespace chunkrag {
namespace {

using testing::data_path;
using testing::TempDir;

struct CliResult {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded and returns its exit code and stdout.
CliResult run(const std::string& args) {
  const std::string command = std::string(CHUNKRAG_CLI) + " " + args + " 2>/dev/null";
  CliResult result;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (pipe == nullptr) return result;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) result.out.append(buf, n);
  const int status = ::pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string toy_flags() {
  return "--task triple --data " + data_path("toy.jsonl") + " --labels " +
         data_path("toy_labels.json") + " --mock-rules " + data_path("toy_rules.json") +
         " --epochs 5";
}

TEST(CliTest, HelpExitsZero) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("evaluate --help").code, 0);
}

TEST(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("evaluate --bogus-flag 1 " + toy_flags()).code, 1);
  EXPECT_EQ(run("evaluate").code, 1);
}

TEST(CliTest, InvalidConfigurationExitsOne) {
  EXPECT_EQ(run("evaluate --data /nonexistent/data.jsonl").code, 1);
  EXPECT_EQ(run("evaluate --loss-mode bogus " + toy_flags()).code, 1);
  EXPECT_EQ(run("evaluate --chunk-len 0 " + toy_flags()).code, 1);
  EXPECT_EQ(run("evaluate --ablation XYZ " + toy_flags()).code, 1);
  EXPECT_EQ(run("evaluate --memory-split test " + toy_flags()).code, 1);
  EXPECT_EQ(run("sweep --m 0 " + toy_flags()).code, 1);
}

TEST(CliTest, ToyWorkflow) {
  TempDir dir;
  const auto memory = dir.file("memory.bin");
  const auto scorer = dir.file("scorer.ckpt");
  ASSERT_EQ(run("build-memory --out " + memory + " " + toy_flags()).code, 0);
  ASSERT_EQ(run("train-scorer --memory " + memory + " --out " + scorer + " " + toy_flags()).code,
            0);
  EXPECT_TRUE(std::filesystem::exists(scorer + ".loss.csv"));
  const auto extracted = run("extract --memory " + memory + " --scorer " + scorer +
                             " --text 'prostacyclin treats renal injury' " + toy_flags());
  ASSERT_EQ(extracted.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(extracted.out).contains("triples")) << extracted.out;

  const auto evaluated = run("evaluate --out-dir " + dir.file("run") + " " + toy_flags());
  ASSERT_EQ(evaluated.code, 0);
  EXPECT_NE(evaluated.out.find("Precision"), std::string::npos);
  EXPECT_EQ(io::read_file(dir.file("run/report.txt")), evaluated.out);

  const auto baseline = run("baseline-knn --n 0,1 --out " + dir.file("knn.json") + " " +
                            toy_flags());
  ASSERT_EQ(baseline.code, 0);
  EXPECT_EQ(nlohmann::json::parse(io::read_file(dir.file("knn.json"))).size(), 2u);
}

TEST(CliTest, ConfigFileSuppliesFlags) {
  TempDir dir;
  {
    std::ofstream ini(dir.file("run.ini"));
    ini << "[evaluate]\ntask = \"triple\"\nepochs = 5\nlabels = \"" << data_path("toy_labels.json")
        << "\"\nmock-rules = \"" << data_path("toy_rules.json") << "\"\n";
  }
  const auto from_file = run("--config " + dir.file("run.ini") + " evaluate --data " +
                             data_path("toy.jsonl"));
  ASSERT_EQ(from_file.code, 0);
  EXPECT_EQ(from_file.out, run("evaluate " + toy_flags()).out);
}

TEST(CliTest, SyntheticCorpusEndToEnd) {
  TempDir dir;
  ASSERT_EQ(run("make-synthetic --out-dir " + dir.path().string()).code, 0);
  for (const char* name : {"data.jsonl", "labels.json", "rules.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.file(name))) << name;
  }
  const auto result =
      run("evaluate --task classification --chunk-len 1 --eta 0.3 --loss-mode full-kl"
          " --learning-rate 0.05 --epochs 200 --batch-size 8 --data " + dir.file("data.jsonl") +
          " --labels " + dir.file("labels.json") + " --mock-rules " + dir.file("rules.json") +
          " --out-dir " + dir.file("run"));
  ASSERT_EQ(result.code, 0);
  const auto report = nlohmann::json::parse(io::read_file(dir.file("run/report.json")));
  EXPECT_GE(report["scores"]["label"]["f1"].get<double>(), 0.9);
}

TEST(CliTest, RuntimeFailureExitsTwo) {
  TempDir dir;
  ASSERT_EQ(run("evaluate --out-dir " + dir.path().string() + " " + toy_flags()).code, 0);
  // A plain listening socket without SO_REUSEPORT, so the server cannot share it.
  const int blocker = ::socket(AF_INET, SOCK_STREAM, 0);
  ASSERT_GE(blocker, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(blocker, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  ASSERT_EQ(::listen(blocker, 1), 0);
  socklen_t len = sizeof addr;
  ::getsockname(blocker, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);
  const auto result = run("serve --host 127.0.0.1 --port " + std::to_string(port) +
                          " --memory " + dir.file("memory.bin") + " --scorer " +
                          dir.file("scorer.ckpt") + " " + toy_flags());
  ::close(blocker);
  EXPECT_EQ(result.code, 2);
}

}  // namespace
}  // namespace chunkrag
