#pragma once

// DQN training loop: epsilon-greedy behaviour with action masking, a FIFO
// replay memory and squared Bellman error regression.

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <vector>

#include "tepo/environment.hpp"
#include "tepo/qnet.hpp"
#include "tepo/rng.hpp"

namespace tepo {

/// Lossless compact copy of a ProbMap. Maps with at most 256 distinct values
/// are stored as a palette plus one byte per pixel.
class PackedProb {
 public:
  PackedProb() = default;
  explicit PackedProb(const ProbMap& p);
  ProbMap unpack() const;
  std::size_t bytes() const noexcept;

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<float> palette_;
  std::vector<std::uint8_t> index_;
  std::vector<float> raw_;
};

/// Everything featurize() needs, stored compactly.
struct StoredState {
  std::shared_ptr<const Case> episode_case;
  PackedProb prob;
  PromptSet prompts;

  static std::shared_ptr<const StoredState> capture(const EnvState& s);
  FeatureTensor features() const;
};

struct Transition {
  std::shared_ptr<const StoredState> state;
  ActionId action;
  double reward = 0.0;
  std::shared_ptr<const StoredState> next_state;  // unused when terminal
  bool terminal = false;
  ActionMask next_mask;
};

/// Fixed-capacity FIFO ring; once full, each push evicts the oldest item.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  /// i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;
  /// Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // index of the oldest item once full
  std::vector<Transition> items_;
};

/// Masked argmax of q; ties go to the smallest action id.
ActionId masked_argmax(std::span<const double> q, ActionMask mask);
/// Largest q over the mask.
double masked_max(std::span<const double> q, ActionMask mask);

/// With probability epsilon a uniform draw from `mask`, else the masked argmax
/// of the network output. Throws EpisodeError on an empty mask.
ActionId select_action(const nn::Net& net, const FeatureTensor& features, ActionMask mask,
                       double epsilon, Rng& rng);

/// r for terminal transitions, else r + gamma * max over next_mask of Q(s').
double bellman_target(const Transition& tr, const nn::Net& net, double gamma);

struct TrainConfig {
  /// Episodes M. 0 derives M from target_env_steps / episode length.
  std::size_t episodes = 0;
  std::size_t target_env_steps = 60000;
  double gamma = 0.9;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  /// Fraction of the planned env steps over which epsilon decays.
  double epsilon_decay_fraction = 0.5;
  std::size_t replay_capacity = 50000;
  /// Updates start once the buffer holds this many transitions; 0 means one batch.
  std::size_t warmup = 0;
  std::size_t steps_per_epoch = 10000;
  std::size_t updates_per_epoch = 100;
  /// Copy the online network into a frozen target every this many updates;
  /// 0 bootstraps from the online network.
  std::size_t target_sync = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t resolved_episodes(int episode_len) const;
  std::size_t resolved_warmup() const { return warmup == 0 ? batch_size : warmup; }
};

/// Linear from start to end over the first decay_steps, constant afterwards.
double epsilon_at(std::size_t step, std::size_t decay_steps, double start, double end);

struct TrainLogRow {
  std::size_t episode = 0;  // 1-based
  std::size_t steps = 0;    // env steps so far
  double mean_reward = 0.0;
  double final_dice = 0.0;
  std::optional<double> loss;  // latest update loss, absent before the first update
  double epsilon = 0.0;
};

/// CSV header line, then one line per row.
void write_train_log_header(std::ostream& os);
void write_train_log_row(std::ostream& os, const TrainLogRow& row);

struct TrainResult {
  nn::Net net;
  std::size_t episodes = 0;
  std::size_t env_steps = 0;
  std::size_t updates = 0;
  std::size_t transitions_stored = 0;  // replay size at the end
};

struct TrainHooks {
  /// Called after every episode; the stream is flushed so a backend failure
  /// leaves the partial log on disk.
  std::function<void(const TrainLogRow&)> on_episode;
};

/// Trains a Q-network over `cases`. Feature shape follows the
/// first case; all cases must share it.
TrainResult train(const std::vector<Case>& cases, const EnvConfig& env_cfg, const TrainConfig& cfg,
                  SegmenterBackend& backend, const TrainHooks& hooks = {});

/// Network spec used for a given case shape.
nn::NetSpec qnet_spec_for(int height, int width);

}  // namespace tepo
