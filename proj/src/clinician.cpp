#include "tepo/clinician.hpp"

#include <algorithm>
#include <string>

namespace tepo {

void ClinicianConfig::validate() const {
  if (min_interaction_distance < 1)
    throw std::invalid_argument("clinician.min_interaction_distance must be >= 1");
  if (box_margin < 0) throw std::invalid_argument("clinician.box_margin must be >= 0");
}

std::optional<BoxPrompt> bounding_box(const BinaryMask& m) {
  BoxPrompt b{m.height(), m.width(), -1, -1};
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m(r, c)) {
        b.r0 = std::min(b.r0, r);
        b.c0 = std::min(b.c0, c);
        b.r1 = std::max(b.r1, r);
        b.c1 = std::max(b.c1, c);
      }
  if (b.r1 < 0) return std::nullopt;
  return b;
}

namespace {

struct Targets {
  std::optional<InteriorPoint> fore;
  std::optional<InteriorPoint> back;
  std::optional<InteriorPoint> center;
  std::optional<BoxPrompt> anchor;
};

Targets find_targets(const BinaryMask& pred, const BinaryMask& truth, const ClinicianConfig& cfg) {
  const ErrorRegions er = error_regions(pred, truth);
  const std::int64_t gate = std::int64_t{cfg.min_interaction_distance} * cfg.min_interaction_distance;
  auto gated = [&](const BinaryMask& region) -> std::optional<InteriorPoint> {
    auto p = farthest_interior_point(region, cfg.metric);
    if (p && p->squared >= gate) return p;
    return std::nullopt;
  };
  Targets t;
  t.fore = gated(er.false_negative);
  t.back = gated(er.false_positive);
  t.center = gated(er.error);
  t.anchor = bounding_box(cfg.box_anchor == BoxAnchor::Truth ? truth : er.false_negative);
  return t;
}

ActionMask mask_of(const Targets& t, const ClinicianConfig& cfg, bool box_issued) {
  ActionMask m;
  m.set(ActionId(ActionId::kForeground), t.fore.has_value());
  m.set(ActionId(ActionId::kBackground), t.back.has_value());
  m.set(ActionId(ActionId::kCenter), t.center.has_value());
  m.set(ActionId(ActionId::kBox), t.anchor.has_value() && (cfg.allow_repeat_box || !box_issued));
  return m;
}

}  // namespace

ActionMask available_actions(const BinaryMask& pred, const BinaryMask& truth,
                             const ClinicianConfig& cfg, bool box_issued) {
  require_same_shape(pred, truth, "available_actions");
  return mask_of(find_targets(pred, truth, cfg), cfg, box_issued);
}

Prompt realize_prompt(ActionId action, const BinaryMask& pred, const BinaryMask& truth,
                      const ClinicianConfig& cfg, bool box_issued) {
  require_same_shape(pred, truth, "realize_prompt");
  const Targets t = find_targets(pred, truth, cfg);
  if (!mask_of(t, cfg, box_issued).contains(action))
    throw UnavailableAction("action " + std::to_string(action.value()) + " (" +
                            action_name(action) + ") is not available");
  const int h = truth.height();
  const int w = truth.width();
  switch (action.value()) {
    case ActionId::kForeground:
      return Prompt::point(t.fore->row, t.fore->col, PointLabel::Positive, h, w);
    case ActionId::kBackground:
      return Prompt::point(t.back->row, t.back->col, PointLabel::Negative, h, w);
    case ActionId::kCenter: {
      const auto label = truth(t.center->row, t.center->col) ? PointLabel::Positive
                                                              : PointLabel::Negative;
      return Prompt::point(t.center->row, t.center->col, label, h, w);
    }
    default: {
      const BoxPrompt& a = *t.anchor;
      const int m = cfg.box_margin;
      return clip_box(a.r0 - m, a.c0 - m, a.r1 + m, a.c1 + m, h, w);
    }
  }
}

}  // namespace tepo
