#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tepo/grid.hpp"

namespace tepo {

/// dice(pred, truth) = 2|pred & truth| / (|pred| + |truth|); 1.0 when both empty.
double dice(const BinaryMask& pred, const BinaryMask& truth);

struct ErrorRegions {
  BinaryMask false_negative;  // truth=1, pred=0
  BinaryMask false_positive;  // truth=0, pred=1
  BinaryMask error;           // union of the two
};

ErrorRegions error_regions(const BinaryMask& pred, const BinaryMask& truth);

enum class DistanceMetric : std::uint8_t { Euclidean, Chebyshev, Manhattan };

DistanceMetric parse_metric(const std::string& s);
std::string metric_name(DistanceMetric m);

/// Per-pixel distance to the nearest pixel outside the region. Pixels beyond
/// the grid border count as outside, so the edge is always a boundary.
/// Distances are held squared, as exact integers.
class DistanceField {
 public:
  DistanceField() = default;
  DistanceField(Grid<std::int64_t> squared, DistanceMetric metric)
      : squared_(std::move(squared)), metric_(metric) {}

  int height() const noexcept { return squared_.height(); }
  int width() const noexcept { return squared_.width(); }
  DistanceMetric metric() const noexcept { return metric_; }
  std::int64_t squared(int r, int c) const noexcept { return squared_(r, c); }
  double at(int r, int c) const noexcept;
  const Grid<std::int64_t>& squared_grid() const noexcept { return squared_; }

 private:
  Grid<std::int64_t> squared_;
  DistanceMetric metric_ = DistanceMetric::Euclidean;
};

DistanceField distance_transform(const BinaryMask& region,
                                 DistanceMetric metric = DistanceMetric::Euclidean);

struct InteriorPoint {
  int row = 0;
  int col = 0;
  std::int64_t squared = 0;
  double distance = 0.0;
  bool operator==(const InteriorPoint&) const = default;
};

/// Region pixel with the largest distance to the boundary; ties go to the
/// smallest row, then the smallest column. nullopt for an empty region.
std::optional<InteriorPoint> farthest_interior_point(
    const BinaryMask& region, DistanceMetric metric = DistanceMetric::Euclidean);

/// Strict threshold below which a step counts as an interactive misunderstanding.
inline constexpr double kMisunderstandingThreshold = -0.1;

/// Number of sequences whose reward at `step` (0-based) is < -0.1.
/// Throws std::out_of_range if a sequence is shorter than step+1.
std::size_t count_misunderstandings(std::span<const std::vector<double>> rewards_per_case,
                                    std::size_t step);

}  // namespace tepo
