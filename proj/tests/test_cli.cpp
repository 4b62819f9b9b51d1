#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("rcm_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path in_work(const std::string& name) { return workdir() / name; }

// Runs the CLI with `args`, stdout to `out_name`; returns the exit status.
int run(const std::string& args, const std::string& out_name = "stdout.txt") {
  const std::string cmd =
      std::string(RCM_CLI_PATH) + " " + args + " > " + in_work(out_name).string() + " 2> " + in_work("stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("validate on the built-in suite exits 0") {
  CHECK(run("validate") == 0);
  const std::string out = slurp(in_work("stdout.txt"));
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(out.find("oracle-exactness") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run("") == 1);
  CHECK(run("no-such-command") == 1);
  CHECK(run("validate --no-such-flag") == 1);
  CHECK(run("bench --corpus /nonexistent/file.txt") == 1);
  CHECK(run("bench --corpus " + std::string(RCM_CORPUS_PATH) + " --B 0") == 1);
  CHECK(run("bench --corpus " + std::string(RCM_CORPUS_PATH) + " --seeds 1,1") == 1);
  CHECK(run("decipher --instance x.json") == 1);
  CHECK(run("--help") == 0);
}

TEST_CASE("bench writes two deterministic rows") {
  const std::string args = "bench --corpus " + std::string(RCM_CORPUS_PATH) +
                           " --B 1 --methods rcms,beam --seeds 3 --length 300 --iterations 2 --no-timing";
  REQUIRE(run(args, "a.csv") == 0);
  REQUIRE(run(args + " --workers 2", "b.csv") == 0);
  const std::string a = slurp(in_work("a.csv"));
  CHECK(a == slurp(in_work("b.csv")));
  std::istringstream lines(a);
  std::string header;
  std::getline(lines, header);
  CHECK(header.rfind("format_version,method,beam,seed,", 0) == 0);
  std::string row;
  int rows = 0;
  while (std::getline(lines, row)) {
    ++rows;
    CHECK(row.rfind(rows == 1 ? "1,rcms,1,3," : "1,beam,1,3,", 0) == 0);
    CHECK(row.substr(row.size() - 6) == ",0.000");
  }
  CHECK(rows == 2);
}

TEST_CASE("config file values apply and flags win") {
  std::ofstream(in_work("bench.toml")) << "[bench]\nlength = 250\niterations = 1\nB = [7]\n";
  const std::string base = "--config " + in_work("bench.toml").string() + " bench --corpus " +
                           std::string(RCM_CORPUS_PATH) + " --methods beam --no-timing";
  REQUIRE(run(base, "c.csv") == 0);
  CHECK(slurp(in_work("c.csv")).find("1,beam,7,1,2,absolute-discounting,0.25,0.01,250,1,") != std::string::npos);
  REQUIRE(run(base + " --B 2", "d.csv") == 0);
  CHECK(slurp(in_work("d.csv")).find("1,beam,2,1,") != std::string::npos);
}

TEST_CASE("full-width decipher equals the exact E-step") {
  std::mt19937_64 rng(1);
  std::string text;
  for (int i = 0; i < 600; ++i) text += "aabbc  "[rng() % 7];
  std::ofstream(in_work("small.txt")) << text;
  const std::string corpus = in_work("small.txt").string();
  REQUIRE(run("train-lm --alphabet 'abc ' --corpus " + corpus + " --out " + in_work("lm.json").string()) == 0);
  REQUIRE(run("gen-cipher --alphabet 'abc ' --corpus " + corpus + " --length 6 --seed 4 --out " +
              in_work("inst.json").string()) == 0);
  const std::string common =
      "decipher --instance " + in_work("inst.json").string() + " --lm " + in_work("lm.json").string() + " --iterations 5";
  REQUIRE(run(common + " --method rcms --B 4096 --dump-trellis " + in_work("t.jsonl").string(), "rcms.json") == 0);
  REQUIRE(run(common + " --method exact", "exact.json") == 0);
  const auto r = nlohmann::json::parse(slurp(in_work("rcms.json")));
  const auto e = nlohmann::json::parse(slurp(in_work("exact.json")));
  CHECK(r.at("format") == "rcm-em-run");
  const auto& lr = r.at("log_likelihood");
  const auto& le = e.at("log_likelihood");
  REQUIRE(lr.size() == le.size());
  for (std::size_t k = 0; k < lr.size(); ++k) {
    const double a = lr[k].get<double>();
    const double b = le[k].get<double>();
    CHECK(std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)));
  }
  std::ifstream dump(in_work("t.jsonl"));
  std::string first;
  std::getline(dump, first);
  CHECK(nlohmann::json::parse(first).at("format") == "rcm-trellis");
}

TEST_CASE("compare prints one row per method") {
  REQUIRE(run("train-lm --alphabet 'abc ' --smoothing laplace --corpus " + in_work("small.txt").string() + " --out " +
              in_work("alt.json").string()) == 0);
  REQUIRE(run("compare --instance " + in_work("inst.json").string() + " --lm " + in_work("lm.json").string() +
              " --alt-lm " + in_work("alt.json").string() + " --B 4 --iterations 2 --methods rcms,beam,hybrid,exact") ==
          0);
  const std::string out = slurp(in_work("stdout.txt"));
  for (const char* m : {"rcms", "beam", "hybrid", "exact"}) CHECK(out.find(m) != std::string::npos);
  fs::remove_all(workdir());
}
