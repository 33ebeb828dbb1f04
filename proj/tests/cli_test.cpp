// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Black-box checks of the command line tool: exit codes, file outputs,
// determinism. DSE_CLI_PATH is injected by the build.

#include <catch2/catch.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "dse/model.hpp"
#include "dse/wav.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string out, err;
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const auto dir = fs::temp_directory_path();
  const auto out_path = (dir / ("dse_cli_out_" + std::to_string(counter) + ".txt")).string();
  const auto err_path = (dir / ("dse_cli_err_" + std::to_string(counter) + ".txt")).string();
  ++counter;
  const std::string cmd =
      std::string(DSE_CLI_PATH) + " " + args + " > " + out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(status);
  auto slurp = [](const std::string& p) {
    std::ifstream f(p);
    return std::string((std::istreambuf_iterator<char>(f)), {});
  };
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  std::remove(out_path.c_str());
  std::remove(err_path.c_str());
  return r;
}

std::string scratch_dir(const char* name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

std::string slurp_file(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST_CASE("usage errors exit with 2", "[cli]") {
  CHECK(run_cli("definitely-not-a-subcommand").exit_code == 2);
  CHECK(run_cli("simulate").exit_code == 2);                      // missing required flags
  CHECK(run_cli("simulate --kind sideways --count 1 --out /tmp/x").exit_code == 2);
  CHECK(run_cli("enhance --in a.wav --angle 200 --weights w.bin").exit_code == 2);
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("missing inputs exit with 1", "[cli]") {
  const auto r = run_cli("enhance --in /nonexistent.wav --angle 90 --weights /nonexistent.bin");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("simulate writes count examples and is byte-deterministic", "[cli][slow]") {
  const auto d1 = scratch_dir("dse_cli_sim1");
  const auto d2 = scratch_dir("dse_cli_sim2");
  const std::string flags = " --kind fixed --count 3 --seed 7 --duration 1.0 --out ";
  REQUIRE(run_cli("simulate" + flags + d1).exit_code == 0);
  REQUIRE(run_cli("simulate" + flags + d2).exit_code == 0);

  int manifest_lines = 0;
  std::ifstream mf(d1 + "/manifest.jsonl");
  for (std::string line; std::getline(mf, line);)
    if (!line.empty()) ++manifest_lines;
  CHECK(manifest_lines == 3);

  for (const char* f : {"mixture_00000.wav", "reference_00002.wav", "manifest.jsonl"}) {
    INFO(f);
    REQUIRE(slurp_file(d1 + "/" + std::string(f)) == slurp_file(d2 + "/" + std::string(f)));
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("variable-kind manifests keep the 15 degree separation", "[cli][slow]") {
  const auto d = scratch_dir("dse_cli_var");
  REQUIRE(run_cli("simulate --kind variable --count 4 --seed 3 --duration 0.6 --out " + d)
              .exit_code == 0);
  std::ifstream mf(d + "/manifest.jsonl");
  int checked = 0;
  for (std::string line; std::getline(mf, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const double tgt = j["target"]["azimuth"], itf = j["interferer"]["azimuth"];
    CHECK(std::abs(std::abs(tgt - itf) - 15.0) < 1e-6);
    ++checked;
  }
  CHECK(checked == 4);
  fs::remove_all(d);
}

TEST_CASE("train --steps 0 writes the untouched initialization", "[cli][slow]") {
  const auto d = scratch_dir("dse_cli_train0");
  REQUIRE(run_cli("simulate --kind fixed --count 2 --seed 9 --duration 0.8 --out " + d)
              .exit_code == 0);
  const auto r = run_cli("train --data " + d + " --steps 0 --seed 21 --out " + d + "/w.bin");
  REQUIRE(r.exit_code == 0);

  const auto loaded = dse::load_weights(d + "/w.bin");
  dse::ModelConfig cfg;
  dse::validate_weights(loaded, cfg);
  const auto init = dse::init_weights<float>(cfg, 21);
  for (const auto& [name, t] : init.entries()) {
    const auto& u = loaded.at(name);
    for (std::int64_t i = 0; i < t.numel(); ++i) REQUIRE(u.data()[i] == t.data()[i]);
  }
  fs::remove_all(d);
}

TEST_CASE("enhance emits a mono wav of matching duration", "[cli][slow]") {
  const auto d = scratch_dir("dse_cli_enh");
  REQUIRE(run_cli("simulate --kind fixed --count 1 --seed 4 --duration 1.0 --out " + d)
              .exit_code == 0);
  REQUIRE(run_cli("train --data " + d + " --steps 0 --seed 2 --out " + d + "/w.bin").exit_code ==
          0);
  const auto r = run_cli("enhance --in " + d + "/mixture_00000.wav --angle 90 --width 7 " +
                         "--weights " + d + "/w.bin --out " + d + "/enh.wav");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("real-time factor") != std::string::npos);

  const auto in = dse::read_wav(d + "/mixture_00000.wav");
  const auto out = dse::read_wav(d + "/enh.wav");
  REQUIRE(out.channels.size() == 1);
  CHECK(out.size() == in.size());

  // Mono input must be refused.
  CHECK(run_cli("enhance --in " + d + "/enh.wav --angle 90 --weights " + d + "/w.bin --out " + d +
                "/x.wav")
            .exit_code == 1);
  fs::remove_all(d);
}

TEST_CASE("eval emits the 13-column interference table", "[cli][slow]") {
  const auto d = scratch_dir("dse_cli_eval");
  REQUIRE(run_cli("simulate --kind fixed --count 1 --seed 5 --duration 0.8 --out " + d)
              .exit_code == 0);
  REQUIRE(run_cli("train --data " + d + " --steps 0 --seed 2 --out " + d + "/w.bin").exit_code ==
          0);
  const auto r = run_cli("eval --weights " + d + "/w.bin --sweep interference --scenes 1 " +
                         "--seed 11 --snr 0 --identity-mask --out " + d + "/table.csv");
  REQUIRE(r.exit_code == 0);

  std::ifstream f(d + "/table.csv");
  std::string header;
  REQUIRE(std::getline(f, header));
  int commas = 0;
  for (char c : header) commas += c == ',';
  CHECK(commas == 14);  // label + 13 angles + avg
  CHECK(header.find(",0,15,30,") != std::string::npos);
  CHECK(header.find(",180,avg") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("config file feeds flags, command line wins", "[cli][slow]") {
  const auto d = scratch_dir("dse_cli_cfg");
  {
    std::ofstream cfg(d + "/dse.cfg");
    cfg << "simulate.kind=fixed\nsimulate.count=2\nsimulate.seed=6\nsimulate.duration=0.6\n"
        << "simulate.out=" << d << "/a\n";
  }
  REQUIRE(run_cli("--config " + d + "/dse.cfg simulate").exit_code == 0);
  CHECK(fs::exists(d + "/a/manifest.jsonl"));

  // Flag overrides the file's output directory.
  REQUIRE(run_cli("--config " + d + "/dse.cfg simulate --out " + d + "/b").exit_code == 0);
  CHECK(fs::exists(d + "/b/manifest.jsonl"));
  fs::remove_all(d);
}
