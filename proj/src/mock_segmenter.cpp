#include <cmath>
#include <limits>

#include "tepo/rng.hpp"
#include "tepo/segmenter.hpp"

namespace tepo {

void MockConfig::validate() const {
  if (resolve_radius < 1) throw std::invalid_argument("mock.resolve_radius must be >= 1");
  if (noise_cell < 1) throw std::invalid_argument("mock.noise_cell must be >= 1");
  if (!(corruption_fraction >= 0.0 && corruption_fraction <= 1.0))
    throw std::invalid_argument("mock.corruption_fraction must be in [0,1]");
  if (!(resolved_conf > 0.5 && resolved_conf <= 1.0))
    throw std::invalid_argument("mock.resolved_conf must be in (0.5,1]");
  if (!(unresolved_conf > 0.5 && unresolved_conf <= 1.0))
    throw std::invalid_argument("mock.unresolved_conf must be in (0.5,1]");
}

std::uint64_t prompt_history_hash(std::uint64_t case_seed, const PromptSet& prompts) {
  Fnv1a64 h;
  h.update_u64(case_seed);
  h.update_u64(prompts.size());
  for (const auto& p : prompts) {
    if (p.is_point()) {
      const auto& pt = p.as_point();
      h.update("P");
      h.update_i32(pt.row);
      h.update_i32(pt.col);
      h.update(pt.label == PointLabel::Positive ? "+" : "-");
    } else {
      const auto& b = p.as_box();
      h.update("B");
      h.update_i32(b.r0);
      h.update_i32(b.c0);
      h.update_i32(b.r1);
      h.update_i32(b.c1);
    }
  }
  return mix64(h.digest());
}

BinaryMask resolved_region(int h, int w, const PromptSet& prompts, int radius) {
  BinaryMask out(h, w, 0);
  const int r2 = radius * radius;
  for (const auto& p : prompts) {
    if (p.is_box()) {
      const auto& b = p.as_box();
      for (int r = b.r0; r <= b.r1; ++r)
        for (int c = b.c0; c <= b.c1; ++c) out(r, c) = 1;
      continue;
    }
    const auto& pt = p.as_point();
    for (int dr = -radius; dr <= radius; ++dr)
      for (int dc = -radius; dc <= radius; ++dc)
        if (dr * dr + dc * dc <= r2 && out.contains(pt.row + dr, pt.col + dc))
          out(pt.row + dr, pt.col + dc) = 1;
  }
  return out;
}

double upper_normal_quantile(double q) {
  if (q <= 0.0) return std::numeric_limits<double>::infinity();
  if (q >= 1.0) return -std::numeric_limits<double>::infinity();
  // P(Z > z) = erfc(z/sqrt2)/2 is decreasing in z.
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(mid / std::sqrt(2.0)) > q)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

BinaryMask corruption_mask(int h, int w, std::uint64_t key, int noise_cell, double q) {
  BinaryMask out(h, w, 0);
  const double z = upper_normal_quantile(q);
  if (z == std::numeric_limits<double>::infinity()) return out;
  const int lw = w / noise_cell + 2;
  const int lh = h / noise_cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(lh) * lw);
  for (int i = 0; i < lh; ++i)
    for (int j = 0; j < lw; ++j)
      lattice[static_cast<std::size_t>(i) * lw + j] =
          counter_normal(key, (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint32_t>(j));
  const double cell = noise_cell;
  for (int r = 0; r < h; ++r) {
    const int i = r / noise_cell;
    const double fy = (r - i * cell) / cell;
    for (int c = 0; c < w; ++c) {
      const int j = c / noise_cell;
      const double fx = (c - j * cell) / cell;
      const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
      const double w10 = fy * (1 - fx), w11 = fy * fx;
      const auto at = [&](int a, int b) { return lattice[static_cast<std::size_t>(a) * lw + b]; };
      const double v = w00 * at(i, j) + w01 * at(i, j + 1) + w10 * at(i + 1, j) + w11 * at(i + 1, j + 1);
      const double norm = std::sqrt(w00 * w00 + w01 * w01 + w10 * w10 + w11 * w11);
      out(r, c) = v / norm > z ? 1 : 0;
    }
  }
  return out;
}

ProbMap mock_predict(const Case& c, const PromptSet& prompts, const MockConfig& cfg) {
  if (prompts.empty()) throw BackendError("mock predict called with no prompts");
  const int h = c.truth.height();
  const int w = c.truth.width();
  const BinaryMask resolved = resolved_region(h, w, prompts, cfg.resolve_radius);
  const BinaryMask corrupt = corruption_mask(h, w, prompt_history_hash(c.seed, prompts),
                                             cfg.noise_cell, cfg.corruption_fraction);
  const float res_hi = static_cast<float>(cfg.resolved_conf);
  const float res_lo = static_cast<float>(1.0 - cfg.resolved_conf);
  const float unres_hi = static_cast<float>(cfg.unresolved_conf);
  const float unres_lo = static_cast<float>(1.0 - cfg.unresolved_conf);
  ProbMap out(h, w, 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool truth = c.truth.data()[i] != 0;
    if (resolved.data()[i]) {
      out.data()[i] = truth ? res_hi : res_lo;
    } else {
      const bool label = truth != (corrupt.data()[i] != 0);
      out.data()[i] = label ? unres_hi : unres_lo;
    }
  }
  return out;
}

MockSegmenter::MockSegmenter(MockConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void MockSegmenter::set_case(const Case& c) { case_ = c; }

ProbMap MockSegmenter::predict(const PromptSet& prompts) {
  if (!case_) throw BackendError("predict called before set_case");
  return mock_predict(*case_, prompts, cfg_);
}

}  // namespace tepo
