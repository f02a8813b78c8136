#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "doctest.h"
#include "synthetic.hpp"
#include "ttyrl/env.hpp"
#include "ttyrl/errors.hpp"
#include "ttyrl/train.hpp"

using namespace ttyrl;
using ttyrl::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

// Runs the CLI with stdout captured to a file.
Run cli(const std::string& args, const fs::path& cwd, const std::string& env = {}) {
  const auto out = cwd / "stdout.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" + TTYRL_CLI + "' " + args + " > '" +
                          out.string() + "' 2> '" + (cwd / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Payload of a .npy file (header skipped).
std::string npy_payload(const fs::path& p) {
  const auto s = read_file(p);
  REQUIRE(s.size() >= 10);
  REQUIRE(s.compare(0, 6, "\x93NUMPY") == 0);
  const auto header = static_cast<std::size_t>(static_cast<unsigned char>(s[8])) |
                      (static_cast<std::size_t>(static_cast<unsigned char>(s[9])) << 8);
  return s.substr(10 + header);
}

template <typename T>
std::string bytes_of(const std::vector<T>& v) {
  return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

}  // namespace

TEST_CASE("help on every subcommand exits 0") {
  TempDir dir("cli_help");
  for (const char* sub : {"catalog", "store inspect", "repack", "bench-loader", "render", "sample", "train", "eval",
                          "report", "synth"}) {
    CAPTURE(sub);
    const auto r = cli(std::string(sub) + " --help", dir.path());
    CHECK(r.code == 0);
    CHECK(r.out.find("--help") != std::string::npos);
  }
  CHECK(cli("--help", dir.path()).code == 0);
}

TEST_CASE("usage and runtime errors map to exit codes") {
  TempDir dir("cli_codes");
  CHECK(cli("", dir.path()).code == 1);
  CHECK(cli("frobnicate", dir.path()).code == 1);
  CHECK(cli("train --algo sac", dir.path()).code == 1);
  CHECK(cli("catalog --format yaml", dir.path()).code == 1);
  CHECK(cli("eval", dir.path()).code == 1);
  CHECK(cli("bench-loader --store x.ktb --batch 0", dir.path()).code == 1);
  CHECK(cli("store inspect missing.ktb", dir.path()).code == 2);
  CHECK(cli("repack --input nowhere --task mon-hum-neu --out o.ktb", dir.path()).code == 2);
  CHECK(cli("sample --task foo-bar-baz", dir.path()).code == 2);
}

TEST_CASE("catalog exports 38 rows") {
  TempDir dir("cli_catalog");
  const auto r = cli("catalog --format json", dir.path());
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  REQUIRE(j.size() == 38);
  bool found = false;
  for (const auto& row : j) {
    if (row["task"] == "mon-hum-neu") {
      CHECK(row["transitions"] == 33741542);
      found = true;
    }
  }
  CHECK(found);
  const auto csv = cli("catalog --format csv", dir.path());
  CHECK(std::count(csv.out.begin(), csv.out.end(), '\n') == 39);
}

TEST_CASE("pipeline smoke: synth, inspect, train, eval, report") {
  TempDir dir("cli_pipe");
  REQUIRE(cli("synth --out raw --episodes 12 --seed 4 --store synth.ktb", dir.path()).code == 0);
  const auto inspect = cli("store inspect synth.ktb", dir.path());
  REQUIRE(inspect.code == 0);
  const auto j = nlohmann::json::parse(inspect.out);
  CHECK(j["episode_count"] == 12);
  CHECK(j["episodes"].size() == 12);
  CHECK(j["task_id"] == "mon-hum-neu");

  CHECK(cli("repack --input raw --task mon-hum-neu --episodes 6 --strata 3 --seed 1 --out sub.ktb", dir.path())
            .code == 0);
  CHECK(nlohmann::json::parse(cli("store inspect sub.ktb --no-index", dir.path()).out)["episode_count"] == 6);

  // Defaults < config file < flags.
  const std::string model = " --hidden 8 --set encoder.dim=8 --set render.crop_rows=5 --set render.crop_cols=5"
                            " --set actions=19 --batch 4 --seq 4 --log-every 1";
  const auto cfg = std::string(TTYRL_SOURCE_DIR) + "/configs/bc.cfg";
  REQUIRE(cli("train --algo bc --config " + cfg + " --store synth.ktb --iters 3 --metrics m.jsonl --out bc.ktc" + model,
              dir.path())
              .code == 0);
  const auto ckpt = load_checkpoint(dir / "bc.ktc");
  CHECK(ckpt.train.iterations == 3);
  CHECK(ckpt.train.learning_rate == 3e-4);
  CHECK(ckpt.model.hidden == 8);
  CHECK(ckpt.model.layers == 2);
  CHECK(ckpt.step == 3);
  std::ifstream metrics(dir / "m.jsonl");
  std::string line;
  std::size_t losses = 0;
  while (std::getline(metrics, line)) {
    const auto m = nlohmann::json::parse(line);
    CHECK(m.contains("step"));
    CHECK(m.contains("value"));
    if (m["name"] == "loss") ++losses;
  }
  CHECK(losses == 3);

  // Same seed, same checkpoint bytes.
  REQUIRE(cli("train --algo bc --config " + cfg + " --store synth.ktb --iters 3 --out bc2.ktc" + model, dir.path())
              .code == 0);
  CHECK(read_file(dir / "bc.ktc") == read_file(dir / "bc2.ktc"));
  CHECK(cli("train --algo cql --config " + std::string(TTYRL_SOURCE_DIR) +
                "/configs/cql.cfg --store synth.ktb --iters 2 --out cql.ktc" + model,
            dir.path())
            .code == 0);

  REQUIRE(cli("eval --checkpoint bc.ktc --episodes 2 --horizon 20 --out bc.jsonl --agreement", dir.path()).code == 0);
  REQUIRE(cli("eval --checkpoint cql.ktc --episodes 2 --horizon 20 --out cql.jsonl", dir.path()).code == 0);
  CHECK(read_file(dir / "bc.jsonl").find("\"algorithm\":\"bc\"") != std::string::npos);
  const auto rep = cli("report bc.jsonl cql.jsonl --metric normalized_score --replicates 200 --out rep", dir.path());
  REQUIRE(rep.code == 0);
  const auto report = nlohmann::json::parse(read_file(dir / "rep" / "report.json"));
  CHECK(report.contains("probability_of_improvement"));
  CHECK(report["algorithms"]["bc"].contains("profile"));
  CHECK(report["algorithms"]["cql"]["aggregates"].contains("iqm"));
  CHECK(report["normalizer"] == "minmax");
  CHECK(fs::exists(dir / "rep" / "profiles.csv"));

  CHECK(cli("render --store synth.ktb --episode 2 --step 5 --png s.png", dir.path()).code == 0);
  CHECK(read_file(dir / "s.png").substr(1, 3) == "PNG");
  CHECK(cli("render --store synth.ktb --episode 2 --step 5000 --png s.png", dir.path()).code == 2);
  const auto bench = cli("bench-loader --store synth.ktb --batch 2 --seq 4 --iters 2", dir.path());
  CHECK(bench.code == 0);
  CHECK(bench.out.rfind("variant,batch_size,seq_len,memmap_ms,in_memory_ms,compressed_ms", 0) == 0);
}

TEST_CASE("store location falls back to KATAKOMBA_DATA_DIR") {
  TempDir dir("cli_env");
  fs::create_directories(dir / "data");
  REQUIRE(cli("synth --out raw --episodes 3 --seed 1 --store data/mon-hum-neu.ktb", dir.path()).code == 0);
  const auto r = cli("sample --batch 2 --seq 3", dir.path(), "KATAKOMBA_DATA_DIR=data");
  CHECK(r.code == 0);
  CHECK(cli("sample --batch 2 --seq 3", dir.path(), "KATAKOMBA_DATA_DIR=elsewhere").code == 2);
}

TEST_CASE("cli sample arrays equal native sampling for every mode string") {
  TempDir dir("cli_sample");
  generate_gridhack(dir / "raw", 30, 8);
  StrataPlan plan;
  plan.target_episodes = 30;
  import_source(dir / "raw", {Role::Mon, Race::Hum, Alignment::Neu}, plan, dir / "g.ktb", {});
  for (const char* mode : {"in_memory", "memmap", "compressed"}) {
    CAPTURE(mode);
    const auto r = cli(std::string("sample --store g.ktb --batch 64 --seq 16 --seed 77 --call 3 --mode ") + mode +
                           " --out " + mode,
                       dir.path());
    REQUIRE(r.code == 0);
    auto handle = load(dir / "g.ktb", parse_loader_mode(mode));
    const auto b = handle->sample({64, 16, 77, PadPolicy::RejectShort}, 3);
    const fs::path out = dir / mode;
    CHECK(npy_payload(out / "tty_chars.npy") == bytes_of(b.tty_chars));
    CHECK(npy_payload(out / "tty_colors.npy") == bytes_of(b.tty_colors));
    CHECK(npy_payload(out / "tty_cursor.npy") == bytes_of(b.tty_cursor));
    CHECK(npy_payload(out / "prev_actions.npy") == bytes_of(b.prev_actions));
    CHECK(npy_payload(out / "actions.npy") == bytes_of(b.actions));
    CHECK(npy_payload(out / "rewards.npy") == bytes_of(b.rewards));
    CHECK(npy_payload(out / "dones.npy") == bytes_of(b.dones));
    CHECK(read_file(out / "tty_chars.npy").find("'shape': (64, 17, 24, 80)") != std::string::npos);
    CHECK(read_file(out / "actions.npy").find("'shape': (64, 16)") != std::string::npos);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["fields"]["tty_chars"]["shape"] == nlohmann::json({64, 17, 24, 80}));
    handle->close();
    try {
      handle->sample({64, 16, 77, PadPolicy::RejectShort}, 3);
      FAIL("expected UseAfterClose");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UseAfterClose);
    }
  }
  CHECK(read_file(dir / "in_memory" / "actions.npy") == read_file(dir / "compressed" / "actions.npy"));
}
