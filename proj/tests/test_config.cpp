#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "doctest.h"
#include "tepo/config.hpp"

using namespace tepo;
using nlohmann::json;

TEST_CASE("defaults round trip through json") {
  const RunConfig d;
  const auto j = to_json(d);
  for (const char* key : {"data", "env", "clinician", "mock", "train", "eval", "backend", "report"})
    CHECK(j.contains(key));
  CHECK(j["train"]["batch_size"] == 64);
  CHECK(j["train"]["gamma"] == 0.9);
  CHECK(j["env"]["episode_len"] == 9);
  const RunConfig back = merge_json(RunConfig{}, json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK_NOTHROW(d.validate());
}

TEST_CASE("overlay changes only the given fields") {
  const RunConfig c = merge_json(
      RunConfig{}, json::parse(R"({"train":{"learning_rate":0.01},"clinician":{"box_margin":4},
                                   "data":{"synth":{"height":32}}})"));
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.batch_size == 64);
  CHECK(c.env.clinician.box_margin == 4);
  CHECK(c.data.synth.height == 32);
  CHECK(c.data.synth.width == 64);
  // a second overlay keeps the first
  const RunConfig d = merge_json(c, json::parse(R"({"train":{"batch_size":8}})"));
  CHECK(d.train.learning_rate == 0.01);
  CHECK(d.train.batch_size == 8);
}

TEST_CASE("unknown keys and bad types are rejected") {
  CHECK_THROWS_AS(merge_json(RunConfig{}, json::parse(R"({"trian":{}})")), ConfigError);
  CHECK_THROWS_AS(merge_json(RunConfig{}, json::parse(R"({"train":{"lr":0.1}})")), ConfigError);
  CHECK_THROWS_AS(merge_json(RunConfig{}, json::parse(R"({"data":{"synth":{"depth":3}}})")),
                  ConfigError);
  CHECK_THROWS_AS(merge_json(RunConfig{}, json::parse(R"({"train":{"batch_size":"big"}})")),
                  ConfigError);
  CHECK_THROWS_AS(merge_json(RunConfig{}, json::parse(R"({"clinician":{"metric":"cosine"}})")),
                  ConfigError);
  CHECK_THROWS_AS(merge_json(RunConfig{}, json::parse("[1,2]")), ConfigError);
}

TEST_CASE("validation") {
  RunConfig c;
  c.backend.kind = "remote";
  CHECK_THROWS(c.validate());
  c.backend.spawn = "tepo serve-mock";
  CHECK_NOTHROW(c.validate());
  c.backend.kind = "gpu";
  CHECK_THROWS(c.validate());
  RunConfig s;
  s.data.eval_split = "holdout";
  CHECK_THROWS(s.validate());
}

TEST_CASE("config files") {
  const auto path = std::filesystem::temp_directory_path() /
                    ("tepo_cfg_" + std::to_string(::getpid()) + ".json");
  {
    std::ofstream(path) << R"({"eval":{"steps":4}})";
  }
  CHECK(load_config_file(path).eval.steps == 4);
  {
    std::ofstream(path) << "{not json";
  }
  CHECK_THROWS_AS(load_config_file(path), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config_file(path), ConfigError);
}

TEST_CASE("small parsers") {
  CHECK(parse_size("64x48") == std::pair{64, 48});
  CHECK_THROWS(parse_size("64"));
  CHECK_THROWS(parse_size("0x5"));
  CHECK_THROWS(parse_size("8x8x8"));
  CHECK(parse_host_port("127.0.0.1:9000") == std::pair<std::string, int>{"127.0.0.1", 9000});
  CHECK_THROWS(parse_host_port("localhost"));
  CHECK_THROWS(parse_host_port("h:99999"));
}

TEST_CASE("in-memory synthetic cases by split") {
  DataConfig d;
  d.synth_cases = 200;
  d.synth.height = d.synth.width = 32;
  d.synth.min_foreground = 32;
  const auto train = load_cases(d, "train", 0);
  const auto test = load_cases(d, "test", 0);
  const auto all = load_cases(d, "all", 0);
  CHECK(all.size() == 200);
  CHECK(train.size() + test.size() + load_cases(d, "val", 0).size() == 200);
  CHECK(std::is_sorted(train.begin(), train.end(),
                       [](const Case& a, const Case& b) { return a.id < b.id; }));
  for (const auto& c : test) CHECK(split_of(c.id) == Split::Test);
  CHECK(load_cases(d, "train", 5).size() == 5);
  CHECK(load_cases(d, "train", 5)[0].id == train[0].id);
}

TEST_CASE("backend factory") {
  RunConfig c;
  CHECK(backend_factory(c)()->name() == "mock");
  c.backend.kind = "remote";
  c.backend.tcp = "127.0.0.1:1";
  CHECK_THROWS_AS(backend_factory(c)(), TransportError);
}
