#include <thread>

#include <unistd.h>

#include "doctest.h"
#include "oracles.hpp"
#include "tepo/base64.hpp"
#include "tepo/environment.hpp"
#include "tepo/eval.hpp"
#include "tepo/protocol.hpp"
#include "tepo/synthdata.hpp"

using namespace tepo;
using nlohmann::json;

namespace {

std::string b64(const std::string& s) {
  return base64::encode({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::vector<Case> small_cases(std::size_t n) {
  SynthConfig sc;
  sc.height = sc.width = 32;
  sc.min_foreground = 32;
  return generate_cases(sc, n);
}

/// Plays `episodes` random episodes and returns every predicted map in order.
std::vector<ProbMap> play(SegmenterBackend& be, const std::vector<Case>& cases, int episodes) {
  std::vector<ProbMap> maps;
  Environment env(EnvConfig{}, be);
  Rng rng(12);
  for (int e = 0; e < episodes; ++e) {
    ActionMask m = env.reset(cases[static_cast<std::size_t>(e) % cases.size()]);
    while (!env.done()) {
      m = env.step(random_policy(m, rng)).info.action_mask;
      maps.push_back(env.state().prob);
    }
  }
  return maps;
}

std::string sh_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return out + "'";
}

/// A peer scripted in shell: reads one line per reply and prints the reply.
std::unique_ptr<protocol::LineChannel> scripted_peer(const std::vector<std::string>& replies) {
  std::string cmd;
  for (const auto& r : replies) cmd += "read l; printf '%s\\n' " + sh_quote(r) + "; ";
  return protocol::spawn_child(cmd);
}

}  // namespace

TEST_CASE("base64 vectors and strictness") {
  CHECK(b64("") == "");
  CHECK(b64("f") == "Zg==");
  CHECK(b64("fo") == "Zm8=");
  CHECK(b64("foo") == "Zm9v");
  CHECK(b64("foob") == "Zm9vYg==");
  CHECK(b64("foobar") == "Zm9vYmFy");
  const auto d = base64::decode("Zm9vYmE=");
  CHECK(std::string(d.begin(), d.end()) == "fooba");
  CHECK_THROWS_AS(base64::decode("Zm9"), std::invalid_argument);
  CHECK_THROWS_AS(base64::decode("Zm9v!A=="), std::invalid_argument);
  CHECK_THROWS_AS(base64::decode("Z==="), std::invalid_argument);
  Rng rng(1);
  for (int n = 0; n < 64; ++n) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
    const auto enc = base64::encode(bytes);
    CHECK(enc.size() == base64::encoded_size(bytes.size()));
    CHECK(base64::decode(enc) == bytes);
  }
}

TEST_CASE("payload encodings") {
  Rng rng(3);
  ProbMap p(7, 5);
  for (auto& v : p.values()) v = static_cast<float>(rng.uniform());
  CHECK(protocol::decode_prob(protocol::encode_prob(p), 7, 5) == p);
  // little-endian f32: 1.0f is 00 00 80 3f
  CHECK(protocol::encode_prob(ProbMap(1, 1, 1.0f)) == base64::encode(std::vector<std::uint8_t>{0, 0, 0x80, 0x3f}));
  try {
    protocol::decode_prob(protocol::encode_prob(p), 5, 5);
    FAIL("expected a shape mismatch");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).rfind("shape mismatch", 0) == 0);
  }
  const Case c = small_cases(1)[0];
  const Image back = protocol::decode_image(protocol::encode_image(c.image), 32, 32);
  CHECK(back == c.image);
}

TEST_CASE("prompt json") {
  const Prompt pt = Prompt::point(3, 4, PointLabel::Negative, 10, 10);
  const json j = protocol::prompt_to_json(pt);
  CHECK(j == json::parse(R"({"kind":"point","r":3,"c":4,"label":"neg"})"));
  CHECK(protocol::prompt_from_json(j, 10, 10) == pt);
  const Prompt bx = Prompt::box(1, 2, 8, 9, 10, 10);
  CHECK(protocol::prompt_to_json(bx) ==
        json::parse(R"({"kind":"box","r0":1,"c0":2,"r1":8,"c1":9})"));
  CHECK(protocol::prompt_from_json(protocol::prompt_to_json(bx), 10, 10) == bx);
  CHECK_THROWS_AS(protocol::prompt_from_json(j, 3, 3), ProtocolError);
  CHECK_THROWS_AS(protocol::prompt_from_json(json::parse(R"({"kind":"lasso"})"), 10, 10),
                  ProtocolError);
  CHECK_THROWS_AS(protocol::prompt_from_json(json::parse(R"({"kind":"point","r":1,"c":1,"label":"x"})"), 10, 10),
                  ProtocolError);
}

TEST_CASE("request lines") {
  const Case c = small_cases(1)[0];
  const json plain = json::parse(protocol::set_case_line(c, false));
  CHECK(plain["op"] == "set_case");
  CHECK(plain["id"] == c.id);
  CHECK(plain["h"] == 32);
  CHECK(plain["w"] == 32);
  CHECK(base64::decode(plain["image"].get<std::string>()).size() == 32u * 32u);
  CHECK_FALSE(plain.contains("truth"));
  const json ext = json::parse(protocol::set_case_line(c, true));
  CHECK(ext["seed"] == std::to_string(c.seed));
  const auto truth = base64::decode(ext["truth"].get<std::string>());
  for (std::size_t i = 0; i < truth.size(); ++i) CHECK(truth[i] == c.truth.values()[i]);
  PromptSet ps;
  ps.append(Prompt::point(1, 1, PointLabel::Positive, 32, 32));
  const json pr = json::parse(protocol::predict_line(ps));
  CHECK(pr["op"] == "predict");
  CHECK(pr["prompts"].size() == 1);
  for (const auto& line : {protocol::ok_line(), protocol::prob_line(ProbMap(2, 2)),
                           protocol::error_line("x")})
    CHECK(line.find('\n') == std::string::npos);
  CHECK(json::parse(protocol::error_line("bad")) == json::parse(R"({"ok":false,"err":"bad"})"));
}

TEST_CASE("mock server replies") {
  const Case c = small_cases(1)[0];
  protocol::MockServer srv(MockConfig{}, {{c.id, c}});
  auto err = [&](const std::string& line) {
    const json r = json::parse(srv.handle(line));
    return r["ok"] == false && r["err"].is_string();
  };
  CHECK(err("not json"));
  CHECK(err(R"({"op":"dance"})"));
  CHECK(err(R"({"op":"predict","prompts":[{"kind":"point","r":1,"c":1,"label":"pos"}]})"));
  CHECK(err(R"({"op":"set_case","id":"unknown","h":32,"w":32,"image":""})"));
  CHECK(json::parse(srv.handle(protocol::set_case_line(c, false))) == json::parse(R"({"ok":true})"));
  CHECK(err(R"({"op":"predict","prompts":[]})"));
  CHECK(err(R"({"op":"predict","prompts":[{"kind":"point","r":99,"c":1,"label":"pos"}]})"));
  PromptSet ps;
  ps.append(Prompt::point(10, 12, PointLabel::Positive, 32, 32));
  const json r = json::parse(srv.handle(protocol::predict_line(ps)));
  CHECK(r["ok"] == true);
  CHECK(protocol::decode_prob(r["prob"], 32, 32) == mock_predict(c, ps, MockConfig{}));
  srv.reset_session();
  CHECK(err(protocol::predict_line(ps)));
}

TEST_CASE("TCP round trip against the in-process server is bit-identical") {
  const auto cases = small_cases(6);
  int port = 0;
  const int fd = protocol::listen_tcp("127.0.0.1", 0, &port);
  REQUIRE(fd >= 0);
  REQUIRE(port > 0);
  protocol::MockServer srv(MockConfig{});
  std::thread th([&] { srv.serve_listener(fd, 1); });
  std::vector<ProbMap> remote;
  {
    protocol::RemoteSegmenter be(protocol::connect_tcp("127.0.0.1", port), {true});
    remote = play(be, cases, 20);
  }
  th.join();
  ::close(fd);
  MockSegmenter local;
  const auto want = play(local, cases, 20);
  REQUIRE(remote.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(remote[i] == want[i]);
}

#ifdef TEPO_CLI
TEST_CASE("spawned serve-mock child is bit-identical") {
  const auto cases = small_cases(5);
  protocol::RemoteSegmenter be(protocol::spawn_child(sh_quote(TEPO_CLI) + " serve-mock"), {true});
  const auto remote = play(be, cases, 20);
  MockSegmenter local;
  const auto want = play(local, cases, 20);
  REQUIRE(remote.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(remote[i] == want[i]);
}
#endif

TEST_CASE("remote client error mapping") {
  const Case c = small_cases(1)[0];
  PromptSet ps;
  ps.append(Prompt::point(4, 4, PointLabel::Positive, 32, 32));

  SUBCASE("predict before set_case") {
    protocol::RemoteSegmenter be(scripted_peer({}));
    CHECK_THROWS_AS(be.predict(ps), BackendError);
  }
  SUBCASE("wrong grid size") {
    const std::string small = protocol::prob_line(ProbMap(4, 4, 0.5f));
    protocol::RemoteSegmenter be(scripted_peer({protocol::ok_line(), small}));
    be.set_case(c);
    try {
      be.predict(ps);
      FAIL("expected a shape mismatch");
    } catch (const ProtocolError& e) {
      CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
    }
  }
  SUBCASE("peer reports failure") {
    protocol::RemoteSegmenter be(scripted_peer({protocol::error_line("no gpu")}));
    try {
      be.set_case(c);
      FAIL("expected a protocol error");
    } catch (const ProtocolError& e) {
      CHECK(std::string(e.what()).find("no gpu") != std::string::npos);
    }
  }
  SUBCASE("garbage reply") {
    protocol::RemoteSegmenter be(scripted_peer({"hello"}));
    CHECK_THROWS_AS(be.set_case(c), ProtocolError);
  }
  SUBCASE("peer closes mid-request") {
    protocol::RemoteSegmenter be(scripted_peer({protocol::ok_line()}));
    be.set_case(c);
    CHECK_THROWS_AS(be.predict(ps), TransportError);
  }
  SUBCASE("peer never answers") {
    protocol::RemoteSegmenter be(protocol::spawn_child("exit 0"));
    CHECK_THROWS_AS(be.set_case(c), TransportError);
  }
  SUBCASE("nothing listening") {
    int port = 0;
    const int fd = protocol::listen_tcp("127.0.0.1", 0, &port);
    ::close(fd);
    CHECK_THROWS_AS(protocol::connect_tcp("127.0.0.1", port), TransportError);
  }
}

TEST_CASE("a broken peer aborts only its case during evaluation") {
  const auto cases = small_cases(4);
  // first backend dies after one exchange; replacements are healthy
  auto made = std::make_shared<int>(0);
  BackendFactory f = [made]() -> std::unique_ptr<SegmenterBackend> {
    if ((*made)++ == 0)
      return std::make_unique<protocol::RemoteSegmenter>(scripted_peer({protocol::ok_line()}));
    return std::make_unique<MockSegmenter>();
  };
  const auto rep = evaluate(RandomPolicy(1), cases, EnvConfig{}, f, {9, 1, false});
  CHECK(rep.failed == 1);
  CHECK(rep.evaluated == 3);
  CHECK(rep.cases.size() == 4);
}
