#include "tepo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tepo/simd.hpp"

namespace tepo {

double dice(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_shape(pred, truth, "dice");
  const auto& k = simd::active();
  const std::size_t n = pred.size();
  const std::size_t sp = k.count_nonzero(pred.data(), n);
  const std::size_t st = k.count_nonzero(truth.data(), n);
  if (sp + st == 0) return 1.0;
  const std::size_t both = k.count_both(pred.data(), truth.data(), n);
  return 2.0 * static_cast<double>(both) / static_cast<double>(sp + st);
}

ErrorRegions error_regions(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_shape(pred, truth, "error_regions");
  ErrorRegions out{BinaryMask(pred.height(), pred.width()), BinaryMask(pred.height(), pred.width()),
                   BinaryMask(pred.height(), pred.width())};
  const std::size_t n = pred.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = pred.data()[i] != 0;
    const bool t = truth.data()[i] != 0;
    out.false_negative.data()[i] = t && !p;
    out.false_positive.data()[i] = p && !t;
    out.error.data()[i] = p != t;
  }
  return out;
}

DistanceMetric parse_metric(const std::string& s) {
  if (s == "euclidean") return DistanceMetric::Euclidean;
  if (s == "chebyshev") return DistanceMetric::Chebyshev;
  if (s == "manhattan") return DistanceMetric::Manhattan;
  throw std::invalid_argument("unknown distance metric '" + s + "'");
}

std::string metric_name(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::Euclidean: return "euclidean";
    case DistanceMetric::Chebyshev: return "chebyshev";
    default: return "manhattan";
  }
}

double DistanceField::at(int r, int c) const noexcept {
  return std::sqrt(static_cast<double>(squared_(r, c)));
}

namespace {

// Squared Euclidean transform on the grid padded by one ring of background
// (Felzenszwalb & Huttenlocher lower envelope, evaluated in integers).
Grid<std::int64_t> euclidean_squared(const BinaryMask& region) {
  const int h = region.height();
  const int w = region.width();
  const int ph = h + 2;
  const int pw = w + 2;
  auto inside = [&](int pr, int pc) {
    return pr >= 1 && pc >= 1 && pr <= h && pc <= w && region(pr - 1, pc - 1) != 0;
  };

  // Column pass: vertical distance to nearest background in the padded grid.
  std::vector<std::int64_t> g(static_cast<std::size_t>(ph) * pw);
  for (int c = 0; c < pw; ++c) {
    std::int64_t d = 0;
    for (int r = 0; r < ph; ++r) {
      d = inside(r, c) ? d + 1 : 0;
      g[static_cast<std::size_t>(r) * pw + c] = d;
    }
    d = 0;
    for (int r = ph - 1; r >= 0; --r) {
      d = inside(r, c) ? d + 1 : 0;
      auto& v = g[static_cast<std::size_t>(r) * pw + c];
      v = std::min(v, d);
    }
  }

  // Row pass: lower envelope of parabolas (x-q)^2 + g(q)^2.
  Grid<std::int64_t> out(h, w, 0);
  std::vector<int> v(pw);
  std::vector<double> z(pw + 1);
  std::vector<std::int64_t> f(pw);
  for (int r = 1; r <= h; ++r) {
    for (int q = 0; q < pw; ++q) {
      const std::int64_t gv = g[static_cast<std::size_t>(r) * pw + q];
      f[q] = gv * gv;
    }
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < pw; ++q) {
      auto intersect = [&](int p) {
        return static_cast<double>((f[q] + std::int64_t{q} * q) - (f[p] + std::int64_t{p} * p)) /
               (2.0 * (q - p));
      };
      double s = intersect(v[k]);
      while (s <= z[k]) {
        --k;
        s = intersect(v[k]);
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 1; q <= w; ++q) {
      while (z[k + 1] < q) ++k;
      const std::int64_t dx = q - v[k];
      out(r - 1, q - 1) = region(r - 1, q - 1) ? dx * dx + f[v[k]] : 0;
    }
  }
  return out;
}

// Exact two-pass chamfer for the L1 (4-neighbour) and Linf (8-neighbour) metrics.
Grid<std::int64_t> chamfer_squared(const BinaryMask& region, bool diagonal) {
  const int h = region.height();
  const int w = region.width();
  const std::int64_t inf = std::int64_t{h} + w + 4;
  Grid<std::int64_t> d(h, w, 0);
  auto get = [&](int r, int c) -> std::int64_t { return d.contains(r, c) ? d(r, c) : 0; };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!region(r, c)) continue;
      std::int64_t best = std::min(get(r - 1, c), get(r, c - 1));
      if (diagonal) best = std::min({best, get(r - 1, c - 1), get(r - 1, c + 1)});
      d(r, c) = std::min(inf, best + 1);
    }
  for (int r = h - 1; r >= 0; --r)
    for (int c = w - 1; c >= 0; --c) {
      if (!region(r, c)) continue;
      std::int64_t best = std::min(get(r + 1, c), get(r, c + 1));
      if (diagonal) best = std::min({best, get(r + 1, c + 1), get(r + 1, c - 1)});
      d(r, c) = std::min(d(r, c), best + 1);
    }
  for (auto& x : d.values()) x *= x;
  return d;
}

}  // namespace

DistanceField distance_transform(const BinaryMask& region, DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::Euclidean: return DistanceField(euclidean_squared(region), metric);
    case DistanceMetric::Chebyshev: return DistanceField(chamfer_squared(region, true), metric);
    default: return DistanceField(chamfer_squared(region, false), metric);
  }
}

std::optional<InteriorPoint> farthest_interior_point(const BinaryMask& region,
                                                     DistanceMetric metric) {
  if (count_foreground(region) == 0) return std::nullopt;
  const DistanceField field = distance_transform(region, metric);
  InteriorPoint best{-1, -1, -1, 0.0};
  for (int r = 0; r < region.height(); ++r)
    for (int c = 0; c < region.width(); ++c)
      if (region(r, c) && field.squared(r, c) > best.squared)
        best = InteriorPoint{r, c, field.squared(r, c), 0.0};
  best.distance = std::sqrt(static_cast<double>(best.squared));
  return best;
}

std::size_t count_misunderstandings(std::span<const std::vector<double>> rewards_per_case,
                                    std::size_t step) {
  std::size_t n = 0;
  for (const auto& seq : rewards_per_case) {
    if (step >= seq.size())
      throw std::out_of_range("reward sequence shorter than requested step");
    if (seq[step] < kMisunderstandingThreshold) ++n;
  }
  return n;
}

}  // namespace tepo
