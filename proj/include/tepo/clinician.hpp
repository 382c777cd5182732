#pragma once

// Simulated expert: turns an abstract prompt form into a concrete prompt.

#include <stdexcept>

#include "tepo/grid.hpp"
#include "tepo/metrics.hpp"

namespace tepo {

enum class BoxAnchor : std::uint8_t { Truth, FalseNegative };

struct ClinicianConfig {
  /// A region is clickable only if some pixel is at least this far from its boundary.
  int min_interaction_distance = 2;
  /// Dilation applied to the anchor region's bounding box.
  int box_margin = 10;
  DistanceMetric metric = DistanceMetric::Euclidean;
  BoxAnchor box_anchor = BoxAnchor::Truth;
  bool allow_repeat_box = false;

  void validate() const;
};

class UnavailableAction : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// `box_issued` says whether a box prompt was already issued this episode.
ActionMask available_actions(const BinaryMask& pred, const BinaryMask& truth,
                             const ClinicianConfig& cfg, bool box_issued = false);

/// Throws UnavailableAction when `action` is not in available_actions.
Prompt realize_prompt(ActionId action, const BinaryMask& pred, const BinaryMask& truth,
                      const ClinicianConfig& cfg, bool box_issued = false);

/// Tight bounding box of the mask's foreground; nullopt if empty.
std::optional<BoxPrompt> bounding_box(const BinaryMask& m);

}  // namespace tepo
