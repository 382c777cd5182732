#include "tepo/environment.hpp"

#include <string>

#include "tepo/metrics.hpp"

namespace tepo {

void EnvConfig::validate() const {
  if (episode_len < 1 || episode_len > kMaxEpisodeLen)
    throw std::invalid_argument("env.episode_len must be in [1,64]");
  if (!(discount >= 0.0 && discount <= 1.0))
    throw std::invalid_argument("env.discount must be in [0,1]");
  clinician.validate();
}

Environment::Environment(EnvConfig cfg, SegmenterBackend& backend)
    : cfg_(std::move(cfg)), backend_(&backend) {
  cfg_.validate();
}

ActionMask Environment::reset(const Case& c) { return reset(std::make_shared<const Case>(c)); }

ActionMask Environment::reset(std::shared_ptr<const Case> c) {
  validate_case(*c);
  backend_->set_case(*c);
  EnvState s;
  const int h = c->truth.height();
  const int w = c->truth.width();
  s.prob = ProbMap(h, w, 0.0f);
  s.pred = BinaryMask(h, w, 0);
  s.last_dice = dice(s.pred, c->truth);
  s.mask = available_actions(s.pred, c->truth, cfg_.clinician, false);
  s.done = s.mask.empty();
  s.episode_case = std::move(c);
  state_ = std::move(s);
  return state_.mask;
}

StepResult Environment::step(ActionId action) {
  if (!state_.episode_case) throw EpisodeError("step called before reset");
  if (state_.done) throw EpisodeError("episode is over");
  const Case& c = *state_.episode_case;
  const Prompt prompt =
      realize_prompt(action, state_.pred, c.truth, cfg_.clinician, state_.prompts.has_box());

  PromptSet next_prompts = state_.prompts;
  next_prompts.append(prompt);
  ProbMap prob = backend_->predict(next_prompts);
  if (!prob.same_shape(c.truth))
    throw ProtocolError("backend returned a " + std::to_string(prob.height()) + "x" +
                        std::to_string(prob.width()) + " map for a " +
                        std::to_string(c.truth.height()) + "x" + std::to_string(c.truth.width()) +
                        " case");
  if (!is_probability(prob)) throw ProtocolError("backend returned values outside [0,1]");

  BinaryMask pred = threshold_mask(prob);
  const double dice_after = dice(pred, c.truth);
  const double reward = dice_after - state_.last_dice;

  state_.t += 1;
  state_.prob = std::move(prob);
  state_.pred = std::move(pred);
  state_.prompts = std::move(next_prompts);
  state_.last_dice = dice_after;
  state_.mask = available_actions(state_.pred, c.truth, cfg_.clinician, state_.prompts.has_box());
  state_.done = state_.t >= cfg_.episode_len || state_.mask.empty();

  StepResult out;
  out.reward = reward;
  out.done = state_.done;
  out.info.dice_after = dice_after;
  out.info.prompt_issued = prompt;
  out.info.action_mask = state_.mask;
  out.next_features = features();
  return out;
}

EnvSnapshot Environment::snapshot() const {
  if (!state_.episode_case) throw EpisodeError("snapshot called before reset");
  return EnvSnapshot(state_);
}

void Environment::restore(const EnvSnapshot& snap) {
  if (!state_.episode_case || snap.state_.episode_case->id != state_.episode_case->id ||
      snap.state_.episode_case->seed != state_.episode_case->seed)
    throw EpisodeError("snapshot belongs to case '" + snap.case_id() + "'");
  state_ = snap.state_;
}

FeatureTensor Environment::features() const {
  const Case& c = *state_.episode_case;
  return featurize(c.image, state_.prob, state_.prompts);
}

}  // namespace tepo
