#pragma once

#include "tepo/grid.hpp"
#include "tepo/tensor.hpp"

namespace tepo {

/// 5 x H x W state encoding:
///   0 image intensity in [0,1]
///   1 current foreground probability
///   2 disks (radius 3) at positive point prompts
///   3 disks at negative point prompts
///   4 union of box interiors
using FeatureTensor = nn::Tensor;

inline constexpr int kFeatureChannels = 5;
inline constexpr int kPromptDiskRadius = 3;

FeatureTensor featurize(const Image& image, const ProbMap& prob, const PromptSet& prompts);

}  // namespace tepo
