#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "support.hpp"

namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string(MANIC_CLI) + " " + args + " 2>&1";
  Outcome out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) out.output += buf.data();
  const int status = ::pclose(pipe);
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

void write_tiny_config(const std::filesystem::path& path) {
  nlohmann::json cfg{{"environment", {{"kind", "ramp-test"}}},
                     {"walk_steps", 150},
                     {"nldr", {{"dims", 1}, {"neighbors", 6}}},
                     {"train",
                      {{"epochs", 3},
                       {"pixels_per_frame", 16},
                       {"topology",
                        {{"transition_hidden", {6}},
                         {"decoder_hidden", {6}},
                         {"encoder_hidden", {4}},
                         {"encoder_downsample", 2}}}}},
                     {"refine_epochs", 1},
                     {"contentment_hidden", {4}},
                     {"agent", {{"horizon", 3}, {"pool_size", 4}, {"refine_iterations", 1}, {"inference", {{"steps", 5}}}}},
                     {"evolution", {{"population", 2}, {"generations", 1}}}};
  std::ofstream(path) << cfg.dump(2);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 2") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("teleport").code == 2);
    CHECK(run_cli("collect").code == 2);
    CHECK(run_cli("bootstrap --in /nonexistent/walk.bin --out x.bin").code == 2);
    CHECK(run_cli("collect --out x.bin --config /nonexistent/config.json").code == 2);
  }

  TEST_CASE("help exits with 0") {
    auto r = run_cli("--help");
    CHECK(r.code == 0);
    CHECK(r.output.find("bootstrap") != std::string::npos);
  }

  TEST_CASE("pipeline on the brightness ramp") {
    testing::TempDir dir("cli_pipeline");
    const auto cfg = dir / "config.json";
    write_tiny_config(cfg);
    const std::string common = "--config " + quoted(cfg) + " --seed 3";

    auto r = run_cli("collect " + common + " --out " + quoted(dir / "walk.bin"));
    INFO(r.output);
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(dir / "walk.bin"));
    CHECK(run_cli("collect " + common + " --out " + quoted(dir / "walk.bin")).code == 2);
    CHECK(run_cli("collect " + common + " --force --out " + quoted(dir / "walk.bin")).code == 0);

    r = run_cli("bootstrap " + common + " --in " + quoted(dir / "walk.bin") + " --out " + quoted(dir / "beliefs.bin"));
    INFO(r.output);
    REQUIRE(r.code == 0);
    CHECK(r.output.find("estimated 1-D beliefs") != std::string::npos);

    r = run_cli("pretrain " + common + " --data " + quoted(dir / "walk.bin") + " --beliefs " + quoted(dir / "beliefs.bin") +
              " --out " + quoted(dir / "model"));
    INFO(r.output);
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(dir / "model" / "learning_system.json"));
    CHECK(std::filesystem::exists(dir / "model" / "train_log.json"));

    r = run_cli("run " + common + " --model " + quoted(dir / "model") + " --steps 4 --episodes 2 --out " +
              quoted(dir / "run"));
    INFO(r.output);
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(dir / "run" / "summary.json"));
    CHECK_FALSE(std::filesystem::exists(dir / "run" / ".manic.lock"));
    CHECK(run_cli("run " + common + " --model " + quoted(dir / "model") + " --steps 4 --out " + quoted(dir / "run")).code ==
          2);

    r = run_cli("eval " + common + " --model " + quoted(dir / "model") + " --data " + quoted(dir / "walk.bin") +
              " --starts 2 --horizon 5 --out " + quoted(dir / "metrics.json"));
    INFO(r.output);
    REQUIRE(r.code == 0);
    auto metrics = nlohmann::json::parse(std::ifstream(dir / "metrics.json"));
    CHECK(metrics["open_loop"]["model_by_step"].size() == 5);

    r = run_cli("eval " + common + " --data " + quoted(dir / "walk.bin") + " --beliefs " + quoted(dir / "beliefs.bin"));
    INFO(r.output);
    CHECK(r.code == 0);
    CHECK(r.output.find("R2") != std::string::npos);

    CHECK(run_cli("evolve " + common + " --model " + quoted(dir / "model") + " --out " + quoted(dir / "h.mncm")).code == 2);
  }

  TEST_CASE("a held lock blocks a second writer") {
    testing::TempDir dir("cli_lock");
    { std::ofstream(dir / ".manic.lock") << "1\n"; }
    auto r = run_cli("collect --steps 10 --out " + quoted(dir / "walk.bin"));
    CHECK(r.code == 2);
    CHECK(r.output.find("locked") != std::string::npos);
  }
}
