#include "tepo/agent.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tepo/features.hpp"

namespace tepo {

PackedProb::PackedProb(const ProbMap& p) : h_(p.height()), w_(p.width()) {
  std::map<float, std::uint8_t> seen;
  const auto& v = p.values();
  for (float x : v) {
    if (seen.count(x)) continue;
    if (seen.size() == 256) {
      raw_ = v;
      return;
    }
    seen.emplace(x, 0);
  }
  std::uint8_t next = 0;
  for (auto& [value, idx] : seen) {
    idx = next++;
    palette_.push_back(value);
  }
  index_.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) index_[i] = seen.at(v[i]);
}

ProbMap PackedProb::unpack() const {
  if (!raw_.empty()) return ProbMap(h_, w_, raw_);
  std::vector<float> v(index_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = palette_[index_[i]];
  return ProbMap(h_, w_, std::move(v));
}

std::size_t PackedProb::bytes() const noexcept {
  return palette_.size() * sizeof(float) + index_.size() + raw_.size() * sizeof(float);
}

std::shared_ptr<const StoredState> StoredState::capture(const EnvState& s) {
  auto out = std::make_shared<StoredState>();
  out->episode_case = s.episode_case;
  out->prob = PackedProb(s.prob);
  out->prompts = s.prompts;
  return out;
}

FeatureTensor StoredState::features() const {
  return featurize(episode_case->image, prob.unpack(), prompts);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("sampling from an empty replay buffer");
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[rng.below(items_.size())]);
  return out;
}

ActionId masked_argmax(std::span<const double> q, ActionMask mask) {
  if (mask.empty()) throw EpisodeError("no available action to choose from");
  if (q.size() != static_cast<std::size_t>(ActionId::kCount))
    throw std::invalid_argument("Q vector must have one entry per action");
  std::optional<ActionId> best;
  for (ActionId a : mask.actions())
    if (!best || q[a.value()] > q[best->value()]) best = a;
  return *best;
}

double masked_max(std::span<const double> q, ActionMask mask) {
  return q[masked_argmax(q, mask).value()];
}

ActionId select_action(const nn::Net& net, const FeatureTensor& features, ActionMask mask,
                       double epsilon, Rng& rng) {
  if (mask.empty()) throw EpisodeError("no available action to choose from");
  if (rng.uniform() < epsilon) {
    const auto acts = mask.actions();
    return acts[rng.below(acts.size())];
  }
  const auto q = net.forward(features);
  return masked_argmax(q.span(), mask);
}

double bellman_target(const Transition& tr, const nn::Net& net, double gamma) {
  if (tr.terminal || gamma == 0.0 || tr.next_mask.empty()) return tr.reward;
  const auto q = net.forward(tr.next_state->features());
  return tr.reward + gamma * masked_max(q.span(), tr.next_mask);
}

void TrainConfig::validate() const {
  if (episodes == 0 && target_env_steps == 0)
    throw std::invalid_argument("train.episodes or train.target_env_steps must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("train.gamma must be in [0,1]");
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train.learning_rate must be a non-negative number");
  for (double e : {epsilon_start, epsilon_end})
    if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("train.epsilon values must be in [0,1]");
  if (!(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0))
    throw std::invalid_argument("train.epsilon_decay_fraction must be in (0,1]");
  if (replay_capacity == 0) throw std::invalid_argument("train.replay_capacity must be positive");
  if (resolved_warmup() < batch_size)
    throw std::invalid_argument("train.warmup must be at least train.batch_size");
  if (resolved_warmup() > replay_capacity)
    throw std::invalid_argument("train.warmup exceeds train.replay_capacity");
  if (steps_per_epoch == 0) throw std::invalid_argument("train.steps_per_epoch must be positive");
}

std::size_t TrainConfig::resolved_episodes(int episode_len) const {
  if (episodes > 0) return episodes;
  const auto t = static_cast<std::size_t>(episode_len);
  return std::max<std::size_t>(1, (target_env_steps + t - 1) / t);
}

double epsilon_at(std::size_t step, std::size_t decay_steps, double start, double end) {
  if (decay_steps == 0 || step >= decay_steps) return end;
  const double f = static_cast<double>(step) / static_cast<double>(decay_steps);
  return start + (end - start) * f;
}

void write_train_log_header(std::ostream& os) {
  os << "episode,steps,mean_reward,final_dice,loss,epsilon\n";
}

void write_train_log_row(std::ostream& os, const TrainLogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,", r.episode, r.steps, r.mean_reward,
                r.final_dice);
  os << buf;
  if (r.loss) {
    std::snprintf(buf, sizeof buf, "%.9g", *r.loss);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, ",%.9g\n", r.epsilon);
  os << buf;
}

nn::NetSpec qnet_spec_for(int height, int width) {
  return nn::NetSpec::default_qnet(kFeatureChannels, height, width);
}

namespace {

double update_once(nn::Net& net, const nn::Net& bootstrap, nn::Adam& opt, const ReplayBuffer& replay,
                   const TrainConfig& cfg, Rng& rng) {
  const auto picks = replay.sample(cfg.batch_size, rng);
  std::vector<FeatureTensor> feats;
  feats.reserve(picks.size());
  std::vector<nn::QSample> batch;
  batch.reserve(picks.size());
  for (const Transition* tr : picks) {
    const double y = bellman_target(*tr, bootstrap, cfg.gamma);
    feats.push_back(tr->state->features());
    batch.push_back({&feats.back(), tr->action.value(), y});
  }
  return nn::backward_and_step(net, opt, batch);
}

}  // namespace

TrainResult train(const std::vector<Case>& cases, const EnvConfig& env_cfg, const TrainConfig& cfg,
                  SegmenterBackend& backend, const TrainHooks& hooks) {
  env_cfg.validate();
  cfg.validate();
  if (cases.empty()) throw std::invalid_argument("training set is empty");
  const int h = cases.front().truth.height();
  const int w = cases.front().truth.width();
  std::vector<std::shared_ptr<const Case>> pool;
  pool.reserve(cases.size());
  for (const auto& c : cases) {
    if (c.truth.height() != h || c.truth.width() != w)
      throw std::invalid_argument("training cases must share one grid shape; '" + c.id + "' differs");
    pool.push_back(std::make_shared<const Case>(c));
  }

  const std::size_t episodes = cfg.resolved_episodes(env_cfg.episode_len);
  const std::size_t planned_steps = episodes * static_cast<std::size_t>(env_cfg.episode_len);
  const auto decay_steps = static_cast<std::size_t>(
      std::llround(cfg.epsilon_decay_fraction * static_cast<double>(planned_steps)));

  TrainResult result{nn::Net(qnet_spec_for(h, w))};
  nn::Net& net = result.net;
  net.init_uniform(mix64(hash_combine(cfg.seed, 0x51)));
  nn::Adam opt(net, nn::AdamConfig{cfg.learning_rate});
  std::optional<nn::Net> target;
  if (cfg.target_sync > 0) target = net;

  Rng rng(cfg.seed);
  ReplayBuffer replay(cfg.replay_capacity);
  Environment env(env_cfg, backend);
  std::optional<double> last_loss;
  std::size_t steps = 0;

  for (std::size_t ep = 1; ep <= episodes; ++ep) {
    const auto& c = pool[rng.below(pool.size())];
    ActionMask mask = env.reset(c);
    auto state = StoredState::capture(env.state());
    double reward_sum = 0.0;
    int ep_steps = 0;
    double eps = epsilon_at(steps, decay_steps, cfg.epsilon_start, cfg.epsilon_end);
    while (!env.done()) {
      eps = epsilon_at(steps, decay_steps, cfg.epsilon_start, cfg.epsilon_end);
      const ActionId a = select_action(net, state->features(), mask, eps, rng);
      const StepResult r = env.step(a);
      auto next = StoredState::capture(env.state());
      replay.push({state, a, r.reward, r.done ? nullptr : next, r.done, r.info.action_mask});
      state = std::move(next);
      mask = r.info.action_mask;
      reward_sum += r.reward;
      ++ep_steps;
      ++steps;

      const std::size_t due = steps * cfg.updates_per_epoch / cfg.steps_per_epoch -
                              (steps - 1) * cfg.updates_per_epoch / cfg.steps_per_epoch;
      for (std::size_t u = 0; u < due; ++u) {
        if (replay.size() < cfg.resolved_warmup()) break;
        last_loss = update_once(net, target ? *target : net, opt, replay, cfg, rng);
        ++result.updates;
        if (target && result.updates % cfg.target_sync == 0) *target = net;
      }
    }
    if (hooks.on_episode) {
      TrainLogRow row;
      row.episode = ep;
      row.steps = steps;
      row.mean_reward = ep_steps ? reward_sum / ep_steps : 0.0;
      row.final_dice = env.state().last_dice;
      row.loss = last_loss;
      row.epsilon = eps;
      hooks.on_episode(row);
    }
  }
  result.episodes = episodes;
  result.env_steps = steps;
  result.transitions_stored = replay.size();
  return result;
}

}  // namespace tepo
