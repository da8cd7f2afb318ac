#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "metacount_cli_test";

struct Run {
  int code;
  std::string err;
};

Run run(const std::string& args) {
  const fs::path err = kRoot / "stderr.txt";
  const std::string cmd =
      std::string(METACOUNT_BIN) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string tiny_config() {
  fs::create_directories(kRoot);
  const fs::path path = kRoot / "tiny.ini";
  std::ofstream(path) << "[experiment]\nseed = 3\nout = " << (kRoot / "out").string() << "\n"
                      << "[dataset]\ntrain_scenes = 2\ntest_scenes = 1\nimages_per_scene = 7\n"
                      << "height = 16\nwidth = 16\n"
                      << "[model]\nextractor = 4:3:1,4:3:2\nestimator = 4:3:2,1:3:1\n"
                      << "[pretrain]\nepochs = 1\nbatch_size = 4\n"
                      << "[train]\nalpha = 1e-4\nouter_iterations = 3\nk = 2\nmeta_test_size = 3\n"
                      << "[reptile]\nouter_iterations = 3\n"
                      << "[eval]\nk = 1,2\nsteps = 2\ntrials = 2\n";
  return path.string();
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  fs::create_directories(kRoot);
  auto r = run("");
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error:", 0) == 0);
  r = run("frobnicate");
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error:", 0) == 0);
  r = run("evaluate --trials many");
  CHECK(r.code == 1);
  r = run("generate --config /nonexistent/cfg.ini");
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error:", 0) == 0);
  CHECK(run("--help").code == 0);
}

TEST_CASE("config errors exit with 1") {
  fs::create_directories(kRoot);
  const fs::path bad = kRoot / "bad.ini";
  std::ofstream(bad) << "[train]\nalpha = -1\n";
  auto r = run("pretrain --config " + bad.string());
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error:", 0) == 0);
  CHECK(r.err.find("alpha") != std::string::npos);

  std::ofstream(bad) << "[train]\nbogus = 1\n";
  CHECK(run("pretrain --config " + bad.string()).code == 1);
  CHECK(run("evaluate --config " + tiny_config() + " --method nonsense").code == 1);
  CHECK(run("evaluate --config " + tiny_config() + " --k 7").code == 1);
}

TEST_CASE("missing upstream artifacts exit with 2") {
  const std::string cfg = tiny_config();
  fs::remove_all(kRoot / "out");
  auto r = run("pretrain --config " + cfg);
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error:", 0) == 0);
  CHECK(run("generate --config " + cfg).code == 0);
  r = run("metatrain --config " + cfg);
  CHECK(r.code == 2);
  CHECK(r.err.find("pretrain") != std::string::npos);
}

TEST_CASE("a tiny pipeline runs end to end") {
  const std::string cfg = tiny_config();
  const fs::path out = kRoot / "out";
  fs::remove_all(out);
  REQUIRE(run("generate --config " + cfg).code == 0);
  CHECK(fs::exists(out / "data" / "scene_0" / "annotations.txt"));
  REQUIRE(run("pretrain --config " + cfg).code == 0);
  REQUIRE(run("metatrain --config " + cfg).code == 0);
  REQUIRE(run("reptile --config " + cfg).code == 0);
  CHECK(fs::exists(out / "checkpoints" / "pretrained.ckpt"));
  CHECK(fs::exists(out / "checkpoints" / "maml.ckpt"));
  CHECK(fs::exists(out / "logs" / "metatrain.log"));
  REQUIRE(run("evaluate --config " + cfg).code == 0);
  CHECK(fs::exists(out / "reports" / "comparison_k1.json"));
  CHECK(fs::exists(out / "reports" / "comparison_k2.txt"));
  CHECK(fs::exists(out / "reports" / "maml" / "k2" / "scene_2.json"));
  REQUIRE(run("evaluate --config " + cfg + " --method maml --k 1 --roi").code == 0);
  REQUIRE(run("curves --config " + cfg).code == 0);
  CHECK(fs::exists(out / "curves" / "maml_k1_scene_2.csv"));
  CHECK(fs::exists(out / "curves" / "mean_k2_scene_2.csv"));
}
