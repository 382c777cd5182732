#pragma once

// The interaction MDP. State is (image, previous probabilities, prompts so
// far); the reward for a step is the change in Dice it produced.

#include <memory>
#include <optional>

#include "tepo/clinician.hpp"
#include "tepo/features.hpp"
#include "tepo/segmenter.hpp"

namespace tepo {

inline constexpr int kMaxEpisodeLen = 64;

struct EnvConfig {
  int episode_len = 9;
  double discount = 0.9;
  ClinicianConfig clinician;

  void validate() const;
};

struct EnvState {
  std::shared_ptr<const Case> episode_case;
  int t = 0;
  ProbMap prob;  // P_{t-1}; all zero at t = 0
  BinaryMask pred;  // threshold_mask(prob)
  PromptSet prompts;  // T_{t-1}
  double last_dice = 0.0;
  ActionMask mask;  // actions available from this state
  bool done = false;
};

struct StepInfo {
  double dice_after = 0.0;
  std::optional<Prompt> prompt_issued;
  ActionMask action_mask;  // availability in the next state
};

struct StepResult {
  double reward = 0.0;  // dice_after - dice_before
  FeatureTensor next_features;
  bool done = false;
  StepInfo info;
};

class EpisodeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Opaque copy of an environment state.
class EnvSnapshot {
 public:
  const std::string& case_id() const { return state_.episode_case->id; }

 private:
  friend class Environment;
  explicit EnvSnapshot(EnvState s) : state_(std::move(s)) {}
  EnvState state_;
};

/// Single-episode environment bound to one backend. Not reentrant.
class Environment {
 public:
  Environment(EnvConfig cfg, SegmenterBackend& backend);

  /// Starts an episode; returns the initial action mask.
  ActionMask reset(const Case& c);
  ActionMask reset(std::shared_ptr<const Case> c);

  /// Throws EpisodeError when done, UnavailableAction when masked out.
  StepResult step(ActionId action);

  EnvSnapshot snapshot() const;
  /// Throws EpisodeError if the snapshot belongs to another case.
  void restore(const EnvSnapshot& snap);

  const EnvState& state() const noexcept { return state_; }
  const EnvConfig& config() const noexcept { return cfg_; }
  ActionMask action_mask() const noexcept { return state_.mask; }
  bool done() const noexcept { return state_.done; }
  FeatureTensor features() const;

 private:
  EnvConfig cfg_;
  SegmenterBackend* backend_;
  EnvState state_;
};

}  // namespace tepo
