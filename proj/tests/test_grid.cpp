#include "doctest.h"
#include "oracles.hpp"
#include "tepo/grid.hpp"

using namespace tepo;

TEST_CASE("threshold_mask uses a strict 0.5 cut") {
  CHECK(count_foreground(threshold_mask(ProbMap(8, 8, 0.0f))) == 0);
  CHECK(count_foreground(threshold_mask(ProbMap(8, 8, 1.0f))) == 64);
  CHECK(count_foreground(threshold_mask(ProbMap(8, 8, 0.5f))) == 0);
  ProbMap p(8, 8, 0.5f);
  p(3, 4) = std::nextafter(0.5f, 1.0f);
  const auto m = threshold_mask(p);
  CHECK(m(3, 4) == 1);
  CHECK(count_foreground(m) == 1);
}

TEST_CASE("threshold of an embedded mask is the identity") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + static_cast<int>(rng.below(40));
    const int w = 1 + static_cast<int>(rng.below(40));
    const BinaryMask m = oracle::random_mask(rng, h, w);
    CHECK(threshold_mask(to_prob_map(m)) == m);
  }
}

TEST_CASE("clip_box clamps and reorders") {
  CHECK(clip_box(-5, -5, 100, 100, 64, 64).as_box() == BoxPrompt{0, 0, 63, 63});
  CHECK(clip_box(3, 4, 10, 12, 64, 64).as_box() == BoxPrompt{3, 4, 10, 12});
  CHECK(clip_box(10, 10, 5, 5, 64, 64).as_box() == BoxPrompt{5, 5, 10, 10});
  CHECK(clip_box(100, 100, 120, 120, 64, 64).as_box() == BoxPrompt{63, 63, 63, 63});
}

TEST_CASE("prompt constructors enforce bounds") {
  CHECK_THROWS_AS(Prompt::point(-1, 0, PointLabel::Positive, 8, 8), std::out_of_range);
  CHECK_THROWS_AS(Prompt::point(0, 8, PointLabel::Positive, 8, 8), std::out_of_range);
  CHECK_THROWS_AS(Prompt::box(2, 2, 1, 3, 8, 8), std::out_of_range);
  CHECK_THROWS_AS(Prompt::box(0, 0, 8, 3, 8, 8), std::out_of_range);
  CHECK_THROWS(Prompt::point(1, 1, PointLabel::Negative, 8, 8).as_box());
}

TEST_CASE("property: prompts built through constructors stay in bounds") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 8 + static_cast<int>(rng.below(60));
    const int w = 8 + static_cast<int>(rng.below(60));
    PromptSet set;
    for (int i = 0; i < 12; ++i) {
      const int a = static_cast<int>(rng.below(3 * h)) - h;
      const int b = static_cast<int>(rng.below(3 * w)) - w;
      const int c = static_cast<int>(rng.below(3 * h)) - h;
      const int d = static_cast<int>(rng.below(3 * w)) - w;
      if (rng.bernoulli(0.5)) {
        set.append(clip_box(a, b, c, d, h, w));
      } else {
        try {
          set.append(Prompt::point(a, b, PointLabel::Positive, h, w));
        } catch (const std::out_of_range&) {
        }
      }
    }
    for (const auto& p : set) {
      if (p.is_box()) {
        const auto& bx = p.as_box();
        CHECK(bx.r0 >= 0);
        CHECK(bx.c0 >= 0);
        CHECK(bx.r0 <= bx.r1);
        CHECK(bx.c0 <= bx.c1);
        CHECK(bx.r1 < h);
        CHECK(bx.c1 < w);
      } else {
        const auto& pt = p.as_point();
        CHECK((pt.row >= 0 && pt.row < h && pt.col >= 0 && pt.col < w));
      }
    }
  }
}

TEST_CASE("prompt set keeps insertion order") {
  PromptSet s;
  s.append(Prompt::point(1, 1, PointLabel::Positive, 8, 8));
  s.append(Prompt::box(0, 0, 3, 3, 8, 8));
  s.append(Prompt::point(2, 2, PointLabel::Negative, 8, 8));
  REQUIRE(s.size() == 3);
  CHECK(s[0].is_point());
  CHECK(s[1].is_box());
  CHECK(s[2].as_point().label == PointLabel::Negative);
  CHECK(s.has_box());
}

TEST_CASE("validate_case") {
  Case c{"a", Image(8, 8, 0.0), BinaryMask(8, 8, 0), 1};
  CHECK_THROWS_AS(validate_case(c), std::invalid_argument);
  c.truth(2, 2) = 1;
  CHECK_NOTHROW(validate_case(c));
  CHECK_THROWS(validate_case(c, 2));
  c.truth(3, 3) = 7;
  CHECK_THROWS(validate_case(c));
  Case small{"b", Image(5, 5, 0.0), BinaryMask(5, 5, 1), 1};
  CHECK_THROWS_AS(validate_case(small), ShapeError);
  Case mismatch{"c", Image(8, 9, 0.0), BinaryMask(8, 8, 1), 1};
  CHECK_THROWS_AS(validate_case(mismatch), ShapeError);
}

TEST_CASE("action ids and masks") {
  CHECK_THROWS_AS(ActionId(4), std::out_of_range);
  CHECK_THROWS_AS(ActionId(-1), std::out_of_range);
  ActionMask m;
  CHECK(m.empty());
  m.set(ActionId(2));
  m.set(ActionId(3));
  CHECK(m.count() == 2);
  CHECK(m.first() == ActionId(2));
  CHECK(m.contains(ActionId(3)));
  CHECK_FALSE(m.contains(ActionId(0)));
  m.set(ActionId(2), false);
  CHECK(m.first() == ActionId(3));
  CHECK_THROWS(ActionMask{}.first());
  CHECK(ActionMask::all().count() == 4);
}
