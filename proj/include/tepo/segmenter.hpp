#pragma once

// Promptable segmentation backends. A backend is bound to one case at a
// time: set_case() then any number of predict() calls with the full prompt
// history so far.

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "tepo/grid.hpp"

namespace tepo {

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The peer went away or the byte stream failed.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The peer answered, but with something we cannot accept.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

class SegmenterBackend {
 public:
  virtual ~SegmenterBackend() = default;
  virtual void set_case(const Case& c) = 0;
  /// Deterministic given (case, prompts). Empty prompt sets are rejected.
  virtual ProbMap predict(const PromptSet& prompts) = 0;
  virtual std::string name() const = 0;
};

struct MockConfig {
  int resolve_radius = 6;
  double corruption_fraction = 0.35;
  int noise_cell = 8;
  double resolved_conf = 1.0;
  double unresolved_conf = 0.8;

  void validate() const;
};

/// Stable 64-bit hash of the case seed and the prompts in insertion order.
std::uint64_t prompt_history_hash(std::uint64_t case_seed, const PromptSet& prompts);

/// Pixels revealed by the prompts: disks around points plus box interiors.
BinaryMask resolved_region(int h, int w, const PromptSet& prompts, int radius);

/// Corruption mask drawn from smooth value noise keyed by `key`. Each pixel's
/// field value is exactly standard normal, so P(corrupted) = q per pixel.
BinaryMask corruption_mask(int h, int w, std::uint64_t key, int noise_cell, double q);

/// z such that P(N(0,1) > z) = q; +inf for q=0, -inf for q=1.
double upper_normal_quantile(double q);

/// Synthetic promptable segmenter: ground truth inside the resolved region,
/// truth XOR a history-keyed corruption field elsewhere.
ProbMap mock_predict(const Case& c, const PromptSet& prompts, const MockConfig& cfg);

class MockSegmenter final : public SegmenterBackend {
 public:
  explicit MockSegmenter(MockConfig cfg = {});
  void set_case(const Case& c) override;
  ProbMap predict(const PromptSet& prompts) override;
  std::string name() const override { return "mock"; }

 private:
  MockConfig cfg_;
  std::optional<Case> case_;
};

}  // namespace tepo
