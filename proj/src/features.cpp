#include "tepo/features.hpp"

#include <algorithm>

namespace tepo {

FeatureTensor featurize(const Image& image, const ProbMap& prob, const PromptSet& prompts) {
  require_same_shape(image, prob, "featurize");
  const int h = image.height();
  const int w = image.width();
  FeatureTensor x({kFeatureChannels, h, w}, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      x.at(0, r, c) = std::clamp(image(r, c), 0.0, 1.0);
      x.at(1, r, c) = static_cast<double>(prob(r, c));
    }
  constexpr int rad = kPromptDiskRadius;
  for (const auto& p : prompts) {
    if (p.is_box()) {
      const auto& b = p.as_box();
      for (int r = b.r0; r <= b.r1; ++r)
        for (int c = b.c0; c <= b.c1; ++c) x.at(4, r, c) = 1.0;
      continue;
    }
    const auto& pt = p.as_point();
    const int ch = pt.label == PointLabel::Positive ? 2 : 3;
    for (int dr = -rad; dr <= rad; ++dr)
      for (int dc = -rad; dc <= rad; ++dc) {
        const int r = pt.row + dr, c = pt.col + dc;
        if (dr * dr + dc * dc <= rad * rad && r >= 0 && c >= 0 && r < h && c < w)
          x.at(ch, r, c) = 1.0;
      }
  }
  return x;
}

}  // namespace tepo
