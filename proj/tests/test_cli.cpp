// End-to-end checks of the tepo command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "tepo/protocol.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef TEPO_CLI
#error "TEPO_CLI must name the tepo executable"
#endif

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
  const std::string cmd = std::string("'") + TEPO_CLI + "' " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

struct Workdir {
  fs::path path;
  Workdir() {
    path = fs::temp_directory_path() / ("tepo_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Workdir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

const Workdir& work() {
  static Workdir w;
  return w;
}

void ensure_dataset() {
  static bool done = false;
  if (done) return;
  const auto r = run("gen-data --out " + (work() / "d") + " --cases 30 --seed 7 --size 32x32");
  REQUIRE(r.code == 0);
  std::ofstream(work() / "all.json") << R"({"data":{"eval_split":"all","train_split":"all"}})";
  done = true;
}

}  // namespace

TEST_CASE("gen-data writes a reproducible dataset") {
  const auto a = work() / "g1", b = work() / "g2";
  REQUIRE(run("gen-data --out " + a + " --cases 10 --seed 7").code == 0);
  REQUIRE(run("gen-data --out " + b + " --cases 10 --seed 7").code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CHECK(slurp(e.path()) == slurp(fs::path(b) / e.path().filename()));
  }
  CHECK(files == 21);
}

TEST_CASE("failures exit nonzero with an error: line") {
  std::ofstream(work() / "plainfile") << "x";
  const auto blocked = work() / "plainfile" + "/sub";
  auto r = run("gen-data --out " + blocked + " --cases 2");
  CHECK(r.code != 0);
  CHECK(r.out.rfind("error:", 0) == 0);
  CHECK(r.out.find(blocked) != std::string::npos);

  r = run("train --data " + (work() / "missing") + " --out " + (work() / "m.bin"));
  CHECK(r.code != 0);
  CHECK(r.out.find("error:") != std::string::npos);

  r = run("train --bogus-flag");
  CHECK(r.code == 2);
  CHECK(r.out.rfind("error:", 0) == 0);

  r = run("");
  CHECK(r.code != 0);

  ensure_dataset();
  r = run("eval --data " + (work() / "d") + " --policy ckpt:" + (work() / "nope.bin") +
          " --out " + (work() / "x.json"));
  CHECK(r.code != 0);
  CHECK(r.out.find("error:") != std::string::npos);

  r = run("eval --data " + (work() / "d") + " --policy teleport --out " + (work() / "x.json"));
  CHECK(r.code != 0);

  std::ofstream(work() / "bad.json") << R"({"train":{"lr":1}})";
  r = run("train --data " + (work() / "d") + " --config " + (work() / "bad.json") + " --out " +
          (work() / "m.bin"));
  CHECK(r.code != 0);
  CHECK(r.out.find("lr") != std::string::npos);
}

TEST_CASE("help lists the flags of every command") {
  for (const auto& [cmd, flags] : std::vector<std::pair<std::string, std::vector<std::string>>>{
           {"gen-data", {"--out", "--cases", "--seed", "--size"}},
           {"train", {"--data", "--episode-len", "--out", "--config", "--seed", "--backend-spawn"}},
           {"eval", {"--data", "--policy", "--steps", "--out", "--jobs", "--backend-tcp"}},
           {"serve-mock", {"--tcp", "--host", "--data"}}}) {
    const auto r = run(cmd + " --help");
    CHECK(r.code == 0);
    for (const auto& f : flags) CHECK_MESSAGE(r.out.find(f) != std::string::npos, cmd << " " << f);
  }
}

TEST_CASE("train is deterministic and writes a log with the merged config") {
  ensure_dataset();
  const std::string common = "train --data " + (work() / "d") + " --config " + (work() / "all.json") +
                             " --episode-len 3 --steps 150";
  REQUIRE(run(common + " --seed 4 --out " + (work() / "m1.bin")).code == 0);
  REQUIRE(run(common + " --seed 4 --out " + (work() / "m2.bin")).code == 0);
  CHECK(slurp(work() / "m1.bin") == slurp(work() / "m2.bin"));
  CHECK(slurp(work() / "m1.bin").rfind("TEPO", 0) == 0);
  const auto log = lines_of(slurp(work() / "m1.bin.log.csv"));
  REQUIRE(log.size() == 2 + 50);
  REQUIRE(log[0].rfind("# config ", 0) == 0);
  const json cfg = json::parse(log[0].substr(9));
  CHECK(cfg["env"]["episode_len"] == 3);
  CHECK(cfg["train"]["seed"] == 4);
  CHECK(cfg["data"]["train_split"] == "all");
  CHECK(log[1] == "episode,steps,mean_reward,final_dice,loss,epsilon");
  CHECK(log.back().rfind("50,", 0) == 0);
  CHECK(run(common + " --seed 5 --out " + (work() / "m3.bin")).code == 0);
  CHECK(slurp(work() / "m3.bin") != slurp(work() / "m1.bin"));
}

TEST_CASE("eval writes matching JSON and CSV reports") {
  ensure_dataset();
  REQUIRE(fs::exists(work() / "m1.bin"));
  const std::string base = "eval --data " + (work() / "d") + " --config " + (work() / "all.json") +
                           " --policy random --policy alternating --policy oracle --policy ckpt:" +
                           (work() / "m1.bin") + " --steps 5 --seed 3";
  auto r = run(base + " --jobs 1 --out " + (work() / "r1.json"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const std::string first_json = slurp(work() / "r1.json"), first_csv = slurp(work() / "r1.csv");
  REQUIRE(run(base + " --jobs 1 --out " + (work() / "r1.json")).code == 0);
  CHECK(slurp(work() / "r1.json") == first_json);
  CHECK(slurp(work() / "r1.csv") == first_csv);
  // the worker count only shows up in the echoed config
  REQUIRE(run(base + " --jobs 3 --out " + (work() / "r2.json")).code == 0);
  CHECK(json::parse(slurp(work() / "r1.json"))["policies"] ==
        json::parse(slurp(work() / "r2.json"))["policies"]);
  const auto c1 = lines_of(first_csv), c2 = lines_of(slurp(work() / "r2.csv"));
  CHECK(std::vector(c1.begin() + 1, c1.end()) == std::vector(c2.begin() + 1, c2.end()));

  const json rep = json::parse(slurp(work() / "r1.json"));
  CHECK(rep["config"]["eval"]["steps"] == 5);
  REQUIRE(rep["policies"].size() == 4);
  CHECK(rep["policies"][3]["policy"] == "ckpt:" + (work() / "m1.bin"));
  for (const auto& p : rep["policies"]) {
    CHECK(p["per_step"].size() == 5);
    CHECK(p["evaluated"] == 30);
  }
  const auto csv = lines_of(slurp(work() / "r1.csv"));
  REQUIRE(csv.size() == 2 + 5 * 4);
  CHECK(csv[0].rfind("# config ", 0) == 0);
  CHECK(csv[1].rfind("policy,step,", 0) == 0);
  CHECK(csv[2].rfind("random,1,", 0) == 0);
  CHECK(csv[7].rfind("alternating,1,100.00,0.00,", 0) == 0);
}

TEST_CASE("train and eval through a spawned serve-mock") {
  ensure_dataset();
  const std::string spawn = std::string("--backend-spawn \"'") + TEPO_CLI + "' serve-mock --data " +
                            (work() / "d") + "\"";
  const std::string common = "train --data " + (work() / "d") + " --config " + (work() / "all.json") +
                             " --episode-len 3 --steps 150 --seed 4";
  REQUIRE(run(common + " " + spawn + " --out " + (work() / "remote.bin")).code == 0);
  CHECK(slurp(work() / "remote.bin") == slurp(work() / "m1.bin"));

  const std::string ev = "eval --data " + (work() / "d") + " --config " + (work() / "all.json") +
                         " --policy oracle --steps 4 --jobs 2";
  REQUIRE(run(ev + " --out " + (work() / "local.json")).code == 0);
  REQUIRE(run(ev + " " + spawn + " --out " + (work() / "remote.json")).code == 0);
  // the echoed config differs (backend section); the per-step rows must not
  const auto a = lines_of(slurp(work() / "local.csv"));
  const auto b = lines_of(slurp(work() / "remote.csv"));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("serve-mock answers malformed lines and keeps going") {
  ensure_dataset();
  const std::string cmd = std::string("printf 'junk\\n{\"op\":\"dance\"}\\n{\"op\":\"predict\",\"prompts\":[]}\\n' | '") +
                          TEPO_CLI + "' serve-mock";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::string out;
  char buf[512];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  CHECK(::pclose(p) == 0);
  const auto lines = lines_of(out);
  REQUIRE(lines.size() == 3);
  for (const auto& l : lines) {
    const json j = json::parse(l);
    CHECK(j["ok"] == false);
    CHECK(j["err"].is_string());
  }
}

TEST_CASE("serve-mock over TCP accepts a new client after a disconnect") {
  ensure_dataset();
  const std::string cmd = std::string("'") + TEPO_CLI + "' serve-mock --tcp 0 --max-connections 2 --data " +
                          (work() / "d") + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  char line[256] = {0};
  REQUIRE(std::fgets(line, sizeof line, p) != nullptr);
  std::smatch m;
  const std::string s = line;
  REQUIRE(std::regex_search(s, m, std::regex(R"(listening on ([0-9.]+):([0-9]+))")));
  const int port = std::stoi(m[2]);
  for (int i = 0; i < 2; ++i) {
    auto ch = tepo::protocol::connect_tcp(m[1], port);
    ch->send_line(R"({"op":"dance"})");
    CHECK(json::parse(ch->recv_line())["ok"] == false);
    ch->send_line(R"({"op":"predict","prompts":[]})");
    CHECK(json::parse(ch->recv_line())["err"] == "predict before set_case");
  }
  CHECK(::pclose(p) == 0);
}
