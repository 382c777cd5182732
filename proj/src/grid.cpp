#include "tepo/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <utility>

#include "tepo/simd.hpp"

namespace tepo {

bool is_binary(const BinaryMask& m) noexcept {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](std::uint8_t v) { return v == 0 || v == 1; });
}

bool is_probability(const ProbMap& p) noexcept {
  return std::all_of(p.values().begin(), p.values().end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

BinaryMask threshold_mask(const ProbMap& p) {
  BinaryMask out(p.height(), p.width());
  simd::active().threshold_half(p.data(), out.data(), p.size());
  return out;
}

ProbMap to_prob_map(const BinaryMask& m) {
  ProbMap out(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = m.data()[i] ? 1.0f : 0.0f;
  return out;
}

std::size_t count_foreground(const BinaryMask& m) noexcept {
  return simd::active().count_nonzero(m.data(), m.size());
}

Prompt Prompt::point(int row, int col, PointLabel label, int h, int w) {
  if (row < 0 || col < 0 || row >= h || col >= w)
    throw std::out_of_range("point prompt (" + std::to_string(row) + "," + std::to_string(col) +
                            ") outside grid");
  Prompt p;
  p.kind_ = Kind::Point;
  p.point_ = PointPrompt{row, col, label};
  return p;
}

Prompt Prompt::box(int r0, int c0, int r1, int c1, int h, int w) {
  if (r0 < 0 || c0 < 0 || r1 >= h || c1 >= w || r0 > r1 || c0 > c1)
    throw std::out_of_range("box prompt outside grid or with reversed bounds");
  Prompt p;
  p.kind_ = Kind::Box;
  p.box_ = BoxPrompt{r0, c0, r1, c1};
  return p;
}

const PointPrompt& Prompt::as_point() const {
  if (!is_point()) throw std::logic_error("prompt is not a point");
  return point_;
}

const BoxPrompt& Prompt::as_box() const {
  if (!is_box()) throw std::logic_error("prompt is not a box");
  return box_;
}

Prompt clip_box(int r0, int c0, int r1, int c1, int h, int w) {
  if (r0 > r1) std::swap(r0, r1);
  if (c0 > c1) std::swap(c0, c1);
  r0 = std::clamp(r0, 0, h - 1);
  r1 = std::clamp(r1, 0, h - 1);
  c0 = std::clamp(c0, 0, w - 1);
  c1 = std::clamp(c1, 0, w - 1);
  return Prompt::box(r0, c0, r1, c1, h, w);
}

bool PromptSet::has_box() const noexcept {
  return std::any_of(prompts_.begin(), prompts_.end(), [](const Prompt& p) { return p.is_box(); });
}

void validate_case(const Case& c, std::size_t min_foreground) {
  require_same_shape(c.image, c.truth, "case");
  if (c.image.height() < kMinGridSide || c.image.width() < kMinGridSide)
    throw ShapeError("case " + c.id + ": grid must be at least 8x8");
  if (!is_binary(c.truth)) throw std::invalid_argument("case " + c.id + ": truth is not binary");
  const std::size_t fg = count_foreground(c.truth);
  if (fg == 0 || fg < min_foreground)
    throw std::invalid_argument("case " + c.id + ": truth has " + std::to_string(fg) +
                                " foreground pixels, need at least " +
                                std::to_string(std::max<std::size_t>(min_foreground, 1)));
}

std::string action_name(ActionId a) {
  switch (a.value()) {
    case ActionId::kForeground: return "fore";
    case ActionId::kBackground: return "back";
    case ActionId::kCenter: return "center";
    default: return "box";
  }
}

int ActionMask::count() const noexcept { return std::popcount(static_cast<unsigned>(bits_)); }

std::vector<ActionId> ActionMask::actions() const {
  std::vector<ActionId> out;
  for (int a = 0; a < ActionId::kCount; ++a)
    if ((bits_ >> a) & 1u) out.emplace_back(a);
  return out;
}

ActionId ActionMask::first() const {
  for (int a = 0; a < ActionId::kCount; ++a)
    if ((bits_ >> a) & 1u) return ActionId(a);
  throw std::logic_error("empty action mask");
}

}  // namespace tepo
