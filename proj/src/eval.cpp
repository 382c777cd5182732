#include "tepo/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "tepo/agent.hpp"
#include "tepo/metrics.hpp"

namespace tepo {

ActionId random_policy(ActionMask mask, Rng& rng) {
  if (mask.empty()) throw EpisodeError("no available action to choose from");
  const auto acts = mask.actions();
  return acts[rng.below(acts.size())];
}

ActionId alternating_policy(int step, ActionMask mask, bool swap_fallback) {
  if (mask.empty()) throw EpisodeError("no available action to choose from");
  const ActionId scheduled(step % 2 == 1 ? ActionId::kForeground : ActionId::kBackground);
  const ActionId other(step % 2 == 1 ? ActionId::kBackground : ActionId::kForeground);
  if (mask.contains(scheduled)) return scheduled;
  if (swap_fallback && mask.contains(other)) return other;
  return mask.first();
}

ActionId greedy_oracle_policy(Environment& env) {
  const ActionMask mask = env.action_mask();
  if (mask.empty()) throw EpisodeError("no available action to choose from");
  const EnvSnapshot snap = env.snapshot();
  std::optional<ActionId> best;
  double best_reward = 0.0;
  for (ActionId a : mask.actions()) {
    const double r = env.step(a).reward;
    env.restore(snap);
    if (!best || r > best_reward) {
      best = a;
      best_reward = r;
    }
  }
  return *best;
}

void RandomPolicy::begin_case(const Case& c) {
  Fnv1a64 h;
  h.update(c.id);
  rng_ = Rng(hash_combine(seed_, h.digest()));
}

ActionId RandomPolicy::next_action(Environment& env, int) {
  return random_policy(env.action_mask(), rng_);
}

ActionId AlternatingPolicy::next_action(Environment& env, int step) {
  return alternating_policy(step, env.action_mask(), swap_fallback_);
}

ActionId GreedyOraclePolicy::next_action(Environment& env, int) { return greedy_oracle_policy(env); }

ActionId FixedActionPolicy::next_action(Environment& env, int) {
  const ActionMask mask = env.action_mask();
  if (mask.empty()) throw EpisodeError("no available action to choose from");
  return mask.contains(action_) ? action_ : mask.first();
}

CheckpointPolicy::CheckpointPolicy(std::shared_ptr<const nn::Net> net, std::string label)
    : net_(std::move(net)), label_(std::move(label)) {
  if (!net_) throw std::invalid_argument("checkpoint policy needs a network");
  if (net_->output_size() != static_cast<std::size_t>(ActionId::kCount))
    throw nn::FormatError("network must output one value per action");
}

void CheckpointPolicy::begin_case(const Case& c) {
  const auto& spec = net_->spec();
  if (spec.in_height != c.truth.height() || spec.in_width != c.truth.width())
    throw std::invalid_argument("checkpoint expects " + std::to_string(spec.in_height) + "x" +
                                std::to_string(spec.in_width) + " cases, '" + c.id + "' is " +
                                std::to_string(c.truth.height()) + "x" +
                                std::to_string(c.truth.width()));
}

ActionId CheckpointPolicy::next_action(Environment& env, int) {
  const auto q = net_->forward(env.features());
  return masked_argmax(q.span(), env.action_mask());
}

std::unique_ptr<Policy> make_policy(const std::string& spec, std::uint64_t seed, int height,
                                    int width, bool alternating_swap_fallback) {
  if (spec == "random") return std::make_unique<RandomPolicy>(seed);
  if (spec == "alternating") return std::make_unique<AlternatingPolicy>(alternating_swap_fallback);
  if (spec == "oracle") return std::make_unique<GreedyOraclePolicy>();
  if (spec.rfind("ckpt:", 0) == 0) {
    const std::string path = spec.substr(5);
    if (path.empty()) throw std::invalid_argument("policy 'ckpt:' needs a path");
    auto net = std::make_shared<const nn::Net>(nn::load(path, qnet_spec_for(height, width)));
    return std::make_unique<CheckpointPolicy>(std::move(net), spec);
  }
  throw std::invalid_argument("unknown policy '" + spec +
                              "' (expected random, alternating, oracle or ckpt:PATH)");
}

namespace {

double oracle_step1(Environment& env, const Case& c) {
  env.reset(c);
  const EnvSnapshot snap = env.snapshot();
  double best = env.state().last_dice;
  bool any = false;
  for (ActionId a : env.action_mask().actions()) {
    const double d = env.step(a).info.dice_after;
    env.restore(snap);
    if (!any || d > best) best = d;
    any = true;
  }
  return best;
}

CaseResult run_case(Policy& policy, Environment& env, const Case& c, bool with_oracle) {
  CaseResult out;
  out.id = c.id;
  if (with_oracle) out.oracle_step1_dice = oracle_step1(env, c);
  policy.begin_case(c);
  env.reset(c);
  int step = 0;
  while (!env.done()) {
    ++step;
    const ActionId a = policy.next_action(env, step);
    const StepResult r = env.step(a);
    out.actions.push_back(a.value());
    out.rewards.push_back(r.reward);
    out.dice.push_back(r.info.dice_after);
  }
  return out;
}

}  // namespace

std::vector<StepStats> aggregate_steps(const std::vector<CaseResult>& cases, int steps) {
  std::vector<const CaseResult*> ok;
  for (const auto& c : cases)
    if (!c.error) ok.push_back(&c);
  std::vector<std::vector<double>> padded;
  padded.reserve(ok.size());
  for (const auto* c : ok) {
    auto r = c->rewards;
    r.resize(static_cast<std::size_t>(steps), 0.0);
    padded.push_back(std::move(r));
  }

  std::vector<StepStats> out;
  for (int t = 1; t <= steps; ++t) {
    StepStats s;
    s.step = t;
    const auto ti = static_cast<std::size_t>(t - 1);
    double sum = 0.0;
    std::vector<double> values;
    values.reserve(ok.size());
    for (const auto* c : ok) {
      double d = 0.0;
      if (ti < c->dice.size()) {
        d = c->dice[ti];
        ++s.active;
        ++s.actions[static_cast<std::size_t>(c->actions[ti])];
      } else if (!c->dice.empty()) {
        d = c->dice.back();
      }
      values.push_back(d);
      sum += d;
    }
    if (!values.empty()) {
      s.dice_mean = sum / static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - s.dice_mean) * (v - s.dice_mean);
      s.dice_std = std::sqrt(var / static_cast<double>(values.size()));
      s.misunderstandings = count_misunderstandings(padded, ti);
    }
    out.push_back(s);
  }
  return out;
}

EvalReport evaluate(const Policy& policy, const std::vector<Case>& cases, const EnvConfig& env_cfg,
                    const BackendFactory& make_backend, const EvalOptions& opts) {
  if (cases.empty()) throw std::invalid_argument("evaluation set is empty");
  if (opts.steps < 1 || opts.steps > kMaxEpisodeLen)
    throw std::invalid_argument("evaluation steps must be in [1,64]");
  EnvConfig cfg = env_cfg;
  cfg.episode_len = opts.steps;
  cfg.validate();

  std::vector<CaseResult> results(cases.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;

  auto worker = [&] {
    try {
      auto pol = policy.clone();
      auto backend = make_backend();
      for (std::size_t i = next++; i < cases.size(); i = next++) {
        {
          std::lock_guard lock(fatal_mu);
          if (fatal) return;
        }
        Environment env(cfg, *backend);
        try {
          results[i] = run_case(*pol, env, cases[i], opts.oracle_reference);
        } catch (const BackendError& e) {
          results[i] = CaseResult{};
          results[i].id = cases[i].id;
          results[i].error = e.what();
          backend = make_backend();
        }
      }
    } catch (...) {
      std::lock_guard lock(fatal_mu);
      if (!fatal) fatal = std::current_exception();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, cases.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  std::stable_sort(results.begin(), results.end(),
                   [](const CaseResult& a, const CaseResult& b) { return a.id < b.id; });
  EvalReport rep;
  rep.policy = policy.name();
  rep.steps = opts.steps;
  double oracle_sum = 0.0;
  for (const auto& r : results) {
    if (r.error) {
      ++rep.failed;
      continue;
    }
    ++rep.evaluated;
    oracle_sum += r.oracle_step1_dice;
  }
  if (rep.evaluated > 0 && opts.oracle_reference)
    rep.oracle_step1_dice_mean = oracle_sum / static_cast<double>(rep.evaluated);
  rep.per_step = aggregate_steps(results, opts.steps);
  rep.cases = std::move(results);
  return rep;
}

namespace {

double pct(std::size_t n, std::size_t of) {
  return of == 0 ? 0.0 : 100.0 * static_cast<double>(n) / static_cast<double>(of);
}

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char ch : v) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

}  // namespace

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["policy"] = r.policy;
  j["steps"] = r.steps;
  j["evaluated"] = r.evaluated;
  j["failed"] = r.failed;
  j["oracle_step1_dice_mean"] = r.oracle_step1_dice_mean;
  ordered_json steps = ordered_json::array();
  for (const auto& s : r.per_step) {
    ordered_json row;
    row["step"] = s.step;
    row["dice_mean"] = s.dice_mean;
    row["dice_std"] = s.dice_std;
    row["active"] = s.active;
    ordered_json counts, share;
    std::size_t dom = 0;
    for (std::size_t a = 0; a < s.actions.size(); ++a) {
      const std::string name = action_name(ActionId(static_cast<int>(a)));
      counts[name] = s.actions[a];
      share[name] = pct(s.actions[a], s.active);
      if (s.actions[a] > s.actions[dom]) dom = a;
    }
    row["actions"] = counts;
    row["action_pct"] = share;
    if (s.active > 0) {
      row["dominant_action"] = action_name(ActionId(static_cast<int>(dom)));
      row["dominant_pct"] = pct(s.actions[dom], s.active);
    } else {
      row["dominant_action"] = nullptr;
      row["dominant_pct"] = nullptr;
    }
    row["misunderstandings"] = s.misunderstandings;
    steps.push_back(row);
  }
  j["per_step"] = steps;
  ordered_json cs = ordered_json::array();
  for (const auto& c : r.cases) {
    ordered_json o;
    o["id"] = c.id;
    if (c.error) {
      o["error"] = *c.error;
    } else {
      o["actions"] = c.actions;
      o["rewards"] = c.rewards;
      o["dice"] = c.dice;
      o["oracle_step1_dice"] = c.oracle_step1_dice;
    }
    cs.push_back(o);
  }
  j["cases"] = cs;
  return j;
}

std::string csv_header() {
  return "policy,step,action0,action1,action2,action3,dice_mean,dice_std,misunderstandings\n";
}

std::string report_to_csv_rows(const EvalReport& r) {
  std::string out;
  char buf[512];
  for (const auto& s : r.per_step) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.2f,%.2f,%.2f,%.2f,%.6f,%.6f,%zu\n",
                  csv_field(r.policy).c_str(),
                  s.step, pct(s.actions[0], s.active), pct(s.actions[1], s.active),
                  pct(s.actions[2], s.active), pct(s.actions[3], s.active), s.dice_mean, s.dice_std,
                  s.misunderstandings);
    out += buf;
  }
  return out;
}

}  // namespace tepo
