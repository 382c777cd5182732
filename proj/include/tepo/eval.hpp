#pragma once

// Baseline policies and the evaluation harness: per-step Dice mean/std,
// action histograms and misunderstanding counts over a case set.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tepo/environment.hpp"
#include "tepo/qnet.hpp"
#include "tepo/rng.hpp"

namespace tepo {

/// Uniform over the mask.
ActionId random_policy(ActionMask mask, Rng& rng);
/// Odd steps (1-based) fore, even steps back. If the scheduled action is
/// unavailable: the other one of the pair when `swap_fallback`, then the
/// smallest available id.
ActionId alternating_policy(int step, ActionMask mask, bool swap_fallback = true);
/// Tries every available action through snapshot/step/restore and returns the
/// one with the largest immediate reward (ties: smallest id). The environment
/// is left in its original state.
ActionId greedy_oracle_policy(Environment& env);

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// Called before each episode.
  virtual void begin_case(const Case&) {}
  /// step is 1-based. The environment must be left as it was.
  virtual ActionId next_action(Environment& env, int step) = 0;
  /// Independent copy for a worker thread.
  virtual std::unique_ptr<Policy> clone() const = 0;
};

class RandomPolicy final : public Policy {
 public:
  /// Each case draws from its own stream keyed by (seed, case id), so results
  /// do not depend on case order or worker count.
  explicit RandomPolicy(std::uint64_t seed) : seed_(seed) {}
  std::string name() const override { return "random"; }
  void begin_case(const Case& c) override;
  ActionId next_action(Environment& env, int step) override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<RandomPolicy>(seed_); }

 private:
  std::uint64_t seed_;
  Rng rng_;
};

class AlternatingPolicy final : public Policy {
 public:
  explicit AlternatingPolicy(bool swap_fallback = true) : swap_fallback_(swap_fallback) {}
  std::string name() const override { return "alternating"; }
  ActionId next_action(Environment& env, int step) override;
  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<AlternatingPolicy>(swap_fallback_);
  }

 private:
  bool swap_fallback_;
};

class GreedyOraclePolicy final : public Policy {
 public:
  std::string name() const override { return "oracle"; }
  ActionId next_action(Environment& env, int step) override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<GreedyOraclePolicy>(); }
};

/// Always the given action when available, else the smallest available id.
class FixedActionPolicy final : public Policy {
 public:
  explicit FixedActionPolicy(ActionId a) : action_(a) {}
  std::string name() const override { return action_name(action_) + "-only"; }
  ActionId next_action(Environment& env, int step) override;
  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<FixedActionPolicy>(action_);
  }

 private:
  ActionId action_;
};

/// Greedy (epsilon = 0) masked argmax of a trained network.
class CheckpointPolicy final : public Policy {
 public:
  CheckpointPolicy(std::shared_ptr<const nn::Net> net, std::string label);
  std::string name() const override { return label_; }
  void begin_case(const Case& c) override;
  ActionId next_action(Environment& env, int step) override;
  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<CheckpointPolicy>(net_, label_);
  }

 private:
  std::shared_ptr<const nn::Net> net_;
  std::string label_;
};

/// Parses "random", "alternating", "oracle" or "ckpt:PATH". The checkpoint
/// must match the default network for the given grid shape.
std::unique_ptr<Policy> make_policy(const std::string& spec, std::uint64_t seed, int height,
                                    int width, bool alternating_swap_fallback = true);

struct CaseResult {
  std::string id;
  std::vector<int> actions;       // one per step taken
  std::vector<double> rewards;    // one per step taken
  std::vector<double> dice;       // Dice after each step taken
  double oracle_step1_dice = 0.0;  // best Dice reachable with one action
  std::optional<std::string> error;
};

struct StepStats {
  int step = 0;  // 1-based
  double dice_mean = 0.0;
  double dice_std = 0.0;  // population std over all cases
  std::size_t active = 0;  // cases that acted at this step
  std::array<std::size_t, ActionId::kCount> actions{};
  std::size_t misunderstandings = 0;
};

struct EvalReport {
  std::string policy;
  int steps = 0;
  std::vector<StepStats> per_step;
  std::vector<CaseResult> cases;  // sorted by id, failed cases included
  std::size_t evaluated = 0;
  std::size_t failed = 0;
  double oracle_step1_dice_mean = 0.0;
};

using BackendFactory = std::function<std::unique_ptr<SegmenterBackend>()>;

struct EvalOptions {
  int steps = 9;
  std::size_t jobs = 1;
  /// Also compute each case's one-step oracle value.
  bool oracle_reference = true;
};

/// Runs every case for up to opts.steps steps (the env episode length is
/// overridden). Each worker owns a backend from `make_backend`; a backend
/// failure marks that case failed and the worker gets a fresh backend.
EvalReport evaluate(const Policy& policy, const std::vector<Case>& cases, const EnvConfig& env_cfg,
                    const BackendFactory& make_backend, const EvalOptions& opts);

/// Recomputes per-step aggregates from the case trajectories.
std::vector<StepStats> aggregate_steps(const std::vector<CaseResult>& cases, int steps);

nlohmann::ordered_json report_to_json(const EvalReport& r);
std::string csv_header();
/// One row per step.
std::string report_to_csv_rows(const EvalReport& r);

}  // namespace tepo
