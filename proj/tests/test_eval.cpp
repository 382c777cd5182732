#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tepo/agent.hpp"
#include "tepo/eval.hpp"
#include "tepo/metrics.hpp"
#include "tepo/synthdata.hpp"

using namespace tepo;

namespace {

ActionMask mask_of(std::initializer_list<int> ids) {
  ActionMask m;
  for (int i : ids) m.set(ActionId(i));
  return m;
}

BackendFactory mock_factory(MockConfig cfg = {}) {
  return [cfg] { return std::make_unique<MockSegmenter>(cfg); };
}

std::vector<Case> test_cases(std::size_t n) {
  SynthConfig sc;
  sc.height = sc.width = 32;
  sc.min_foreground = 32;
  return generate_cases(sc, n);
}

/// Mock that fails every predict for one case id.
class FailingFor final : public SegmenterBackend {
 public:
  explicit FailingFor(std::string id) : bad_(std::move(id)) {}
  void set_case(const Case& c) override {
    current_ = c.id;
    inner_.set_case(c);
  }
  ProbMap predict(const PromptSet& p) override {
    if (current_ == bad_) throw TransportError("peer closed");
    return inner_.predict(p);
  }
  std::string name() const override { return "failing"; }

 private:
  std::string bad_, current_;
  MockSegmenter inner_;
};

}  // namespace

TEST_CASE("random policy") {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) CHECK(random_policy(mask_of({2}), rng) == ActionId(2));
  std::array<int, 4> n{};
  for (int i = 0; i < 10000; ++i) ++n[random_policy(ActionMask::all(), rng).value()];
  for (int a = 0; a < 4; ++a) CHECK(std::abs(n[a] / 10000.0 - 0.25) <= 0.02);
  Rng a(9), b(9);
  for (int i = 0; i < 50; ++i) CHECK(random_policy(ActionMask::all(), a) == random_policy(ActionMask::all(), b));
  CHECK_THROWS_AS(random_policy(ActionMask{}, rng), EpisodeError);
}

TEST_CASE("alternating policy") {
  CHECK(alternating_policy(1, ActionMask::all()) == ActionId(0));
  CHECK(alternating_policy(2, ActionMask::all()) == ActionId(1));
  CHECK(alternating_policy(3, mask_of({1, 2, 3})) == ActionId(1));
  CHECK(alternating_policy(4, mask_of({0, 3})) == ActionId(0));
  CHECK(alternating_policy(5, mask_of({3})) == ActionId(3));
  CHECK(alternating_policy(3, mask_of({1, 2}), false) == ActionId(1));
  CHECK(alternating_policy(3, mask_of({1, 2, 3}), false) == ActionId(1));
  CHECK(alternating_policy(3, mask_of({2, 3}), false) == ActionId(2));
  CHECK(alternating_policy(2, mask_of({0, 3}), false) == ActionId(0));
  CHECK_THROWS_AS(alternating_policy(1, ActionMask{}), EpisodeError);
}

TEST_CASE("greedy oracle picks the best branch and restores the state") {
  // Large object, every unresolved pixel corrupted: the margin box resolves
  // almost the whole error while a point resolves one disk.
  MockConfig mc;
  mc.corruption_fraction = 1.0;
  MockSegmenter be(mc);
  Case c;
  c.id = "big";
  c.image = Image(64, 64, 0.5);
  c.truth = oracle::block_mask(64, 64, 12, 12, 51, 51);
  Environment env(EnvConfig{}, be);
  env.reset(c);
  const auto snap = env.snapshot();
  std::array<double, 4> r{};
  std::optional<ActionId> best;
  for (ActionId a : env.action_mask().actions()) {
    r[a.value()] = env.step(a).reward;
    env.restore(snap);
    if (!best || r[a.value()] > r[best->value()]) best = a;
  }
  CHECK(*best == ActionId(ActionId::kBox));
  CHECK(r[3] > 0.8);
  for (int a = 0; a < 3; ++a) CHECK(r[a] < r[3] / 2);
  const auto before = env.state().prob;
  CHECK(greedy_oracle_policy(env) == ActionId(ActionId::kBox));
  CHECK(env.state().t == 0);
  CHECK(env.state().prob == before);
}

TEST_CASE("greedy oracle tie goes to action 0") {
  MockConfig mc;
  mc.corruption_fraction = 0.0;
  MockSegmenter be(mc);
  const auto cases = test_cases(3);
  Environment env(EnvConfig{}, be);
  for (const auto& c : cases) {
    env.reset(c);
    // with q = 0 every action yields the truth, hence identical rewards
    CHECK(greedy_oracle_policy(env) == ActionId(0));
  }
}

TEST_CASE("perfect policy on an uncorrupted mock") {
  MockConfig mc;
  mc.corruption_fraction = 0.0;
  const auto cases = test_cases(12);
  const auto rep = evaluate(GreedyOraclePolicy{}, cases, EnvConfig{}, mock_factory(mc), {});
  CHECK(rep.evaluated == 12);
  CHECK(rep.per_step[0].dice_mean == 1.0);
  for (const auto& cr : rep.cases)
    for (std::size_t i = 1; i < cr.rewards.size(); ++i) CHECK(cr.rewards[i] == 0.0);
}

TEST_CASE("one-step oracle dominates every fixed single action") {
  const auto cases = test_cases(40);
  const auto oracle = evaluate(GreedyOraclePolicy{}, cases, EnvConfig{}, mock_factory(), {1, 1, true});
  for (int a = 0; a < 4; ++a) {
    const auto fixed = evaluate(FixedActionPolicy(ActionId(a)), cases, EnvConfig{}, mock_factory(),
                                {1, 1, false});
    REQUIRE(fixed.cases.size() == oracle.cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
      CHECK(oracle.cases[i].dice[0] >= fixed.cases[i].dice[0]);
      CHECK(oracle.cases[i].oracle_step1_dice == oracle.cases[i].dice[0]);
    }
    CHECK(oracle.per_step[0].dice_mean >= fixed.per_step[0].dice_mean);
  }
}

TEST_CASE("report invariants and recounts") {
  const auto cases = test_cases(60);
  for (const char* name : {"random", "alternating", "oracle"}) {
    const auto pol = make_policy(name, 11, 32, 32);
    const auto rep = evaluate(*pol, cases, EnvConfig{}, mock_factory(), {9, 1, true});
    CHECK(rep.per_step.size() == 9);
    CHECK(rep.failed == 0);
    std::vector<std::vector<double>> padded;
    for (const auto& c : rep.cases) {
      double sum = 0.0;
      for (double r : c.rewards) sum += r;
      CHECK(std::abs(sum - c.dice.back()) < 1e-12);
      auto p = c.rewards;
      p.resize(9, 0.0);
      padded.push_back(p);
    }
    for (std::size_t t = 0; t < 9; ++t) {
      const auto& s = rep.per_step[t];
      std::size_t hist = 0, active = 0, mis = 0;
      for (auto n : s.actions) hist += n;
      double mean = 0.0;
      for (const auto& c : rep.cases) {
        active += t < c.actions.size();
        mis += padded[&c - rep.cases.data()][t] < -0.1;
        mean += t < c.dice.size() ? c.dice[t] : c.dice.back();
      }
      mean /= static_cast<double>(rep.cases.size());
      CHECK(hist == s.active);
      CHECK(active == s.active);
      CHECK(mis == s.misunderstandings);
      CHECK(s.misunderstandings == count_misunderstandings(padded, t));
      CHECK(s.dice_mean == doctest::Approx(mean).epsilon(1e-12));
      CHECK(s.dice_mean >= 0.0);
      CHECK(s.dice_mean <= 1.0);
      CHECK(s.dice_std >= 0.0);
    }
    CHECK(rep.per_step[0].misunderstandings == 0);
    CHECK(std::is_sorted(rep.cases.begin(), rep.cases.end(),
                         [](const CaseResult& a, const CaseResult& b) { return a.id < b.id; }));
  }
}

TEST_CASE("misunderstanding counter") {
  const std::vector<std::vector<double>> r{{-0.15}, {-0.1}, {0.2}};
  CHECK(count_misunderstandings(r, 0) == 1);
  const std::vector<std::vector<double>> pos{{0.0, 0.3}, {0.1, 0.0}};
  CHECK(count_misunderstandings(pos, 1) == 0);
  CHECK_THROWS_AS(count_misunderstandings(pos, 2), std::out_of_range);
}

TEST_CASE("random policy produces misunderstandings on the mock") {
  const auto cases = test_cases(1000);
  const auto rep = evaluate(RandomPolicy(0), cases, EnvConfig{}, mock_factory(), {9, 2, false});
  std::size_t total = 0;
  for (const auto& s : rep.per_step) total += s.misunderstandings;
  CHECK(total >= 1);
}

TEST_CASE("results do not depend on the worker count") {
  const auto cases = test_cases(30);
  const auto a = evaluate(RandomPolicy(5), cases, EnvConfig{}, mock_factory(), {9, 1, true});
  const auto b = evaluate(RandomPolicy(5), cases, EnvConfig{}, mock_factory(), {9, 4, true});
  CHECK(report_to_json(a).dump() == report_to_json(b).dump());
  CHECK(report_to_csv_rows(a) == report_to_csv_rows(b));
  // and not on the case order
  auto shuffled = cases;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto c = evaluate(RandomPolicy(5), shuffled, EnvConfig{}, mock_factory(), {9, 3, true});
  CHECK(report_to_json(a).dump() == report_to_json(c).dump());
}

TEST_CASE("backend failures mark the case and the rest still runs") {
  const auto cases = test_cases(8);
  const std::string bad = cases[3].id;
  BackendFactory f = [bad] { return std::make_unique<FailingFor>(bad); };
  for (std::size_t jobs : {1u, 3u}) {
    const auto rep = evaluate(AlternatingPolicy{}, cases, EnvConfig{}, f, {9, jobs, true});
    CHECK(rep.failed == 1);
    CHECK(rep.evaluated == 7);
    std::size_t errors = 0;
    for (const auto& c : rep.cases) {
      if (c.error) {
        ++errors;
        CHECK(c.id == bad);
      } else {
        CHECK_FALSE(c.dice.empty());
      }
    }
    CHECK(errors == 1);
    CHECK(rep.per_step[0].active == 7);
  }
}

TEST_CASE("early stops carry the last Dice forward") {
  CaseResult a{"a", {0, 1}, {0.5, 0.2}, {0.5, 0.7}, 0.5, std::nullopt};
  CaseResult b{"b", {3, 0, 1}, {0.9, -0.3, 0.1}, {0.9, 0.6, 0.7}, 0.9, std::nullopt};
  CaseResult dead{"c", {}, {}, {}, 0.0, std::string("boom")};
  const auto s = aggregate_steps({a, b, dead}, 4);
  REQUIRE(s.size() == 4);
  CHECK(s[0].active == 2);
  CHECK(s[2].active == 1);
  CHECK(s[3].active == 0);
  CHECK(s[2].dice_mean == doctest::Approx((0.7 + 0.7) / 2));
  CHECK(s[3].dice_mean == doctest::Approx((0.7 + 0.7) / 2));
  CHECK(s[0].dice_std == doctest::Approx(0.2));
  CHECK(s[1].misunderstandings == 1);
  CHECK(s[0].actions[0] == 1);
  CHECK(s[0].actions[3] == 1);
}

TEST_CASE("report serialization") {
  const auto cases = test_cases(5);
  const auto rep = evaluate(AlternatingPolicy{}, cases, EnvConfig{}, mock_factory(), {9, 1, true});
  const auto j = report_to_json(rep);
  CHECK(j["policy"] == "alternating");
  CHECK(j["per_step"].size() == 9);
  CHECK(j["cases"].size() == 5);
  CHECK(j["per_step"][0]["dominant_action"] == "fore");
  CHECK(j["per_step"][0]["dominant_pct"] == 100.0);
  const auto rows = report_to_csv_rows(rep);
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 9);
  CHECK(rows.rfind("alternating,1,100.00,0.00,0.00,0.00,", 0) == 0);
  CHECK(csv_header().rfind("policy,step,", 0) == 0);
}

TEST_CASE("policy factory") {
  CHECK(make_policy("random", 0, 8, 8)->name() == "random");
  CHECK(make_policy("oracle", 0, 8, 8)->name() == "oracle");
  CHECK_THROWS_AS(make_policy("greedy", 0, 8, 8), std::invalid_argument);
  CHECK_THROWS(make_policy("ckpt:", 0, 8, 8));
  CHECK_THROWS(make_policy("ckpt:/nonexistent/model.bin", 0, 8, 8));
  const auto cases = test_cases(2);
  CHECK_THROWS(evaluate(RandomPolicy(0), {}, EnvConfig{}, mock_factory(), {}));
  CHECK_THROWS(evaluate(RandomPolicy(0), cases, EnvConfig{}, mock_factory(), {0, 1, true}));
}

TEST_CASE("checkpoint policy rejects the wrong grid") {
  auto net = std::make_shared<const nn::Net>(qnet_spec_for(16, 16));
  CheckpointPolicy p(net, "ckpt:x");
  const auto cases = test_cases(1);
  CHECK_THROWS(p.begin_case(cases[0]));
  auto right = std::make_shared<nn::Net>(qnet_spec_for(32, 32));
  right->init_uniform(1);
  const auto rep =
      evaluate(CheckpointPolicy(right, "ckpt:y"), test_cases(4), EnvConfig{}, mock_factory(), {});
  CHECK(rep.evaluated == 4);
}
