#include "tepo/config.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <thread>

#include "tepo/protocol.hpp"

namespace tepo {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }
  /// Rejects keys no field() or sub() call asked for.
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + name_ + "." + k + "'");
  }

  template <class T>
  void field(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it != j_.end()) out = convert<T>(*it, name_ + "." + key);
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

 private:
  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + " must be true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + " must be a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(path + " must be a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        throw ConfigError(path + " is out of range");
      return static_cast<int>(x);
    } else {
      static_assert(std::is_unsigned_v<T>);
      if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
      if (v.is_number_integer()) throw ConfigError(path + " must be non-negative");
      throw ConfigError(path + " must be a non-negative integer");
    }
  }

  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::string anchor_name(BoxAnchor a) { return a == BoxAnchor::Truth ? "truth" : "false_negative"; }

BoxAnchor parse_anchor(const std::string& s) {
  if (s == "truth") return BoxAnchor::Truth;
  if (s == "false_negative") return BoxAnchor::FalseNegative;
  throw ConfigError("clinician.box_anchor must be 'truth' or 'false_negative'");
}

ordered_json synth_json(const SynthConfig& s) {
  return ordered_json{{"height", s.height},
                      {"width", s.width},
                      {"blobs_min", s.blobs_min},
                      {"blobs_max", s.blobs_max},
                      {"blob_scale_min", s.blob_scale_min},
                      {"blob_scale_max", s.blob_scale_max},
                      {"min_foreground", s.min_foreground},
                      {"noise_std", s.noise_std},
                      {"seed", s.seed}};
}

void check_split(const std::string& s, const char* key) {
  if (s == "all") return;
  try {
    parse_split(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string(key) + " must be train, val, test or all");
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    if (data.dir.empty()) {
      data.synth.validate();
      if (data.synth_cases == 0) throw ConfigError("data.synth_cases must be positive");
    }
    check_split(data.train_split, "data.train_split");
    check_split(data.eval_split, "data.eval_split");
    env.validate();
    mock.validate();
    train.validate();
    if (eval.steps < 1 || eval.steps > kMaxEpisodeLen)
      throw ConfigError("eval.steps must be in [1,64]");
    if (backend.kind == "remote") {
      if (backend.spawn.empty() == backend.tcp.empty())
        throw ConfigError("backend.remote needs exactly one of backend.spawn or backend.tcp");
      if (!backend.tcp.empty()) parse_host_port(backend.tcp);
    } else if (backend.kind != "mock") {
      throw ConfigError("backend.kind must be 'mock' or 'remote'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["data"] = ordered_json{{"dir", c.data.dir},
                           {"synth", synth_json(c.data.synth)},
                           {"synth_cases", c.data.synth_cases},
                           {"train_split", c.data.train_split},
                           {"eval_split", c.data.eval_split},
                           {"max_train_cases", c.data.max_train_cases},
                           {"max_eval_cases", c.data.max_eval_cases}};
  j["env"] = ordered_json{{"episode_len", c.env.episode_len}, {"discount", c.env.discount}};
  const auto& k = c.env.clinician;
  j["clinician"] = ordered_json{{"min_interaction_distance", k.min_interaction_distance},
                                {"box_margin", k.box_margin},
                                {"metric", metric_name(k.metric)},
                                {"box_anchor", anchor_name(k.box_anchor)},
                                {"allow_repeat_box", k.allow_repeat_box}};
  j["mock"] = ordered_json{{"resolve_radius", c.mock.resolve_radius},
                           {"corruption_fraction", c.mock.corruption_fraction},
                           {"noise_cell", c.mock.noise_cell},
                           {"resolved_conf", c.mock.resolved_conf},
                           {"unresolved_conf", c.mock.unresolved_conf}};
  const auto& t = c.train;
  j["train"] = ordered_json{{"episodes", t.episodes},
                            {"target_env_steps", t.target_env_steps},
                            {"gamma", t.gamma},
                            {"batch_size", t.batch_size},
                            {"learning_rate", t.learning_rate},
                            {"epsilon_start", t.epsilon_start},
                            {"epsilon_end", t.epsilon_end},
                            {"epsilon_decay_fraction", t.epsilon_decay_fraction},
                            {"replay_capacity", t.replay_capacity},
                            {"warmup", t.warmup},
                            {"steps_per_epoch", t.steps_per_epoch},
                            {"updates_per_epoch", t.updates_per_epoch},
                            {"target_sync", t.target_sync},
                            {"seed", t.seed}};
  j["eval"] = ordered_json{{"steps", c.eval.steps},
                           {"jobs", c.eval.jobs},
                           {"seed", c.eval.seed},
                           {"alternating_swap_fallback", c.eval.alternating_swap_fallback},
                           {"oracle_reference", c.eval.oracle_reference}};
  j["backend"] = ordered_json{{"kind", c.backend.kind},
                              {"spawn", c.backend.spawn},
                              {"tcp", c.backend.tcp},
                              {"send_truth", c.backend.send_truth}};
  j["report"] = ordered_json{{"out", c.report.out}, {"train_log", c.report.train_log}};
  return j;
}

RunConfig merge_json(const RunConfig& base, const json& j) {
  RunConfig c = base;
  Section root(j, "config");
  if (const json* d = root.sub("data")) {
    Section s(*d, "data");
    s.field("dir", c.data.dir);
    if (const json* sy = s.sub("synth")) {
      Section y(*sy, "data.synth");
      y.field("height", c.data.synth.height);
      y.field("width", c.data.synth.width);
      y.field("blobs_min", c.data.synth.blobs_min);
      y.field("blobs_max", c.data.synth.blobs_max);
      y.field("blob_scale_min", c.data.synth.blob_scale_min);
      y.field("blob_scale_max", c.data.synth.blob_scale_max);
      y.field("min_foreground", c.data.synth.min_foreground);
      y.field("noise_std", c.data.synth.noise_std);
      y.field("seed", c.data.synth.seed);
      y.finish();
    }
    s.field("synth_cases", c.data.synth_cases);
    s.field("train_split", c.data.train_split);
    s.field("eval_split", c.data.eval_split);
    s.field("max_train_cases", c.data.max_train_cases);
    s.field("max_eval_cases", c.data.max_eval_cases);
    s.finish();
  }
  if (const json* e = root.sub("env")) {
    Section s(*e, "env");
    s.field("episode_len", c.env.episode_len);
    s.field("discount", c.env.discount);
    s.finish();
  }
  if (const json* k = root.sub("clinician")) {
    Section s(*k, "clinician");
    auto& cl = c.env.clinician;
    s.field("min_interaction_distance", cl.min_interaction_distance);
    s.field("box_margin", cl.box_margin);
    std::string metric = metric_name(cl.metric);
    s.field("metric", metric);
    try {
      cl.metric = parse_metric(metric);
    } catch (const std::exception&) {
      throw ConfigError("clinician.metric must be euclidean, chebyshev or manhattan");
    }
    std::string anchor = anchor_name(cl.box_anchor);
    s.field("box_anchor", anchor);
    cl.box_anchor = parse_anchor(anchor);
    s.field("allow_repeat_box", cl.allow_repeat_box);
    s.finish();
  }
  if (const json* m = root.sub("mock")) {
    Section s(*m, "mock");
    s.field("resolve_radius", c.mock.resolve_radius);
    s.field("corruption_fraction", c.mock.corruption_fraction);
    s.field("noise_cell", c.mock.noise_cell);
    s.field("resolved_conf", c.mock.resolved_conf);
    s.field("unresolved_conf", c.mock.unresolved_conf);
    s.finish();
  }
  if (const json* t = root.sub("train")) {
    Section s(*t, "train");
    auto& tr = c.train;
    s.field("episodes", tr.episodes);
    s.field("target_env_steps", tr.target_env_steps);
    s.field("gamma", tr.gamma);
    s.field("batch_size", tr.batch_size);
    s.field("learning_rate", tr.learning_rate);
    s.field("epsilon_start", tr.epsilon_start);
    s.field("epsilon_end", tr.epsilon_end);
    s.field("epsilon_decay_fraction", tr.epsilon_decay_fraction);
    s.field("replay_capacity", tr.replay_capacity);
    s.field("warmup", tr.warmup);
    s.field("steps_per_epoch", tr.steps_per_epoch);
    s.field("updates_per_epoch", tr.updates_per_epoch);
    s.field("target_sync", tr.target_sync);
    s.field("seed", tr.seed);
    s.finish();
  }
  if (const json* e = root.sub("eval")) {
    Section s(*e, "eval");
    s.field("steps", c.eval.steps);
    s.field("jobs", c.eval.jobs);
    s.field("seed", c.eval.seed);
    s.field("alternating_swap_fallback", c.eval.alternating_swap_fallback);
    s.field("oracle_reference", c.eval.oracle_reference);
    s.finish();
  }
  if (const json* b = root.sub("backend")) {
    Section s(*b, "backend");
    s.field("kind", c.backend.kind);
    s.field("spawn", c.backend.spawn);
    s.field("tcp", c.backend.tcp);
    s.field("send_truth", c.backend.send_truth);
    s.finish();
  }
  if (const json* r = root.sub("report")) {
    Section s(*r, "report");
    s.field("out", c.report.out);
    s.field("train_log", c.report.train_log);
    s.finish();
  }
  root.finish();
  return c;
}

RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  json j = json::parse(f, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return merge_json(base, j);
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument("no separator");
    std::size_t u1 = 0, u2 = 0;
    const int h = std::stoi(s.substr(0, x), &u1);
    const int w = std::stoi(s.substr(x + 1), &u2);
    if (u1 != x || u2 != s.size() - x - 1 || h < 1 || w < 1) throw std::invalid_argument("bad");
    return {h, w};
  } catch (const std::exception&) {
    throw ConfigError("size must look like HxW, got '" + s + "'");
  }
}

std::pair<std::string, int> parse_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  try {
    if (colon == std::string::npos || colon == 0) throw std::invalid_argument("no colon");
    std::size_t used = 0;
    const int port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1 || port < 1 || port > 65535) throw std::invalid_argument("port");
    return {s.substr(0, colon), port};
  } catch (const std::exception&) {
    throw ConfigError("expected host:port, got '" + s + "'");
  }
}

std::vector<Case> load_cases(const DataConfig& d, const std::string& split, std::size_t max) {
  std::vector<Case> all = d.dir.empty() ? generate_cases(d.synth, d.synth_cases) : read_dataset(d.dir);
  if (split != "all") all = filter_split(all, parse_split(split));
  std::stable_sort(all.begin(), all.end(), [](const Case& a, const Case& b) { return a.id < b.id; });
  if (max > 0 && all.size() > max) all.resize(max);
  return all;
}

BackendFactory backend_factory(const RunConfig& c) {
  if (c.backend.kind == "mock") {
    const MockConfig mc = c.mock;
    return [mc] { return std::make_unique<MockSegmenter>(mc); };
  }
  const protocol::RemoteOptions opts{c.backend.send_truth};
  if (!c.backend.spawn.empty()) {
    const std::string cmd = c.backend.spawn;
    return [cmd, opts]() -> std::unique_ptr<SegmenterBackend> {
      return std::make_unique<protocol::RemoteSegmenter>(protocol::spawn_child(cmd), opts);
    };
  }
  const auto [host, port] = parse_host_port(c.backend.tcp);
  return [host, port, opts]() -> std::unique_ptr<SegmenterBackend> {
    return std::make_unique<protocol::RemoteSegmenter>(protocol::connect_tcp(host, port), opts);
  };
}

}  // namespace tepo
