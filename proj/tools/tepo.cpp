// tepo: dataset generation, DQN training, evaluation and the loopback mock
// segmenter server.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "tepo/agent.hpp"
#include "tepo/config.hpp"
#include "tepo/eval.hpp"
#include "tepo/log.hpp"
#include "tepo/protocol.hpp"
#include "tepo/synthdata.hpp"

namespace {

using namespace tepo;

struct CommonFlags {
  std::string config;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::string backend_spawn;
  std::string backend_tcp;
  bool send_truth = false;
};

void add_config_flag(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration (overridden by flags)")
      ->check(CLI::ExistingFile);
}

void add_backend_flags(CLI::App* cmd, CommonFlags& f) {
  auto* spawn =
      cmd->add_option("--backend-spawn", f.backend_spawn, "Remote segmenter: command speaking the protocol on stdio");
  auto* tcp = cmd->add_option("--backend-tcp", f.backend_tcp, "Remote segmenter: HOST:PORT");
  spawn->excludes(tcp);
  cmd->add_flag("--send-truth", f.send_truth,
                "Send truth/seed with set_case (for a mock server without --data)");
}

/// defaults < config file < flags
RunConfig resolve(const CommonFlags& f) {
  RunConfig c;
  if (!f.config.empty()) c = load_config_file(f.config, c);
  if (!f.data.empty()) c.data.dir = f.data;
  if (!f.backend_spawn.empty()) {
    c.backend.kind = "remote";
    c.backend.spawn = f.backend_spawn;
    c.backend.tcp.clear();
  }
  if (!f.backend_tcp.empty()) {
    c.backend.kind = "remote";
    c.backend.tcp = f.backend_tcp;
    c.backend.spawn.clear();
  }
  if (f.send_truth) c.backend.send_truth = true;
  return c;
}

std::string config_comment(const RunConfig& c) { return "# config " + to_json(c).dump() + "\n"; }

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

// ---------------------------------------------------------------------------

struct GenFlags {
  CommonFlags common;
  std::string out;
  std::size_t cases = 0;
  std::uint64_t seed = 0;
  std::string size = "64x64";
};

int run_gen(const GenFlags& g, const CLI::App& cmd) {
  RunConfig c = resolve(g.common);
  SynthConfig sc = c.data.synth;
  if (cmd.count("--seed")) sc.seed = g.seed;
  if (cmd.count("--size")) {
    const auto [h, w] = parse_size(g.size);
    sc.height = h;
    sc.width = w;
  }
  sc.validate();
  if (g.cases == 0) throw std::invalid_argument("--cases must be positive");
  const auto cases = generate_cases(sc, g.cases);
  write_dataset(g.out, cases, sc);
  log::info("wrote " + std::to_string(cases.size()) + " cases to " + g.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  CommonFlags common;
  std::string out;
  int episode_len = 9;
  std::string log_path;
  std::size_t episodes = 0;
  std::size_t steps = 0;
};

int run_train(const TrainFlags& t, const CLI::App& cmd) {
  RunConfig c = resolve(t.common);
  if (cmd.count("--episode-len")) c.env.episode_len = t.episode_len;
  if (t.common.seed) c.train.seed = *t.common.seed;
  if (cmd.count("--episodes")) c.train.episodes = t.episodes;
  if (cmd.count("--steps")) c.train.target_env_steps = t.steps;
  if (!t.log_path.empty()) c.report.train_log = t.log_path;
  c.validate();

  const auto cases = load_cases(c.data, c.data.train_split, c.data.max_train_cases);
  if (cases.empty()) throw std::invalid_argument("no training cases in split '" + c.data.train_split + "'");
  const std::string log_path = c.report.train_log.empty() ? t.out + ".log.csv" : c.report.train_log;
  auto log_file = open_out(log_path);
  log_file << config_comment(c);
  write_train_log_header(log_file);
  log_file.flush();

  log::info("training TEPO-" + std::to_string(c.env.episode_len) + " on " +
            std::to_string(cases.size()) + " cases, " +
            std::to_string(c.train.resolved_episodes(c.env.episode_len)) + " episodes");
  const auto factory = backend_factory(c);
  auto backend = factory();
  TrainHooks hooks;
  hooks.on_episode = [&](const TrainLogRow& row) {
    write_train_log_row(log_file, row);
    log_file.flush();
    if (row.episode % 500 == 0)
      log::info("episode " + std::to_string(row.episode) + " steps " + std::to_string(row.steps) +
                " epsilon " + std::to_string(row.epsilon));
  };
  const TrainResult res = train(cases, c.env, c.train, *backend, hooks);
  nn::save(res.net, t.out);
  log::info("saved " + t.out + " after " + std::to_string(res.env_steps) + " env steps, " +
            std::to_string(res.updates) + " updates");
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  CommonFlags common;
  std::vector<std::string> policies;
  int steps = 9;
  std::string out;
  std::optional<std::size_t> jobs;
};

int run_eval(const EvalFlags& e, const CLI::App& cmd) {
  RunConfig c = resolve(e.common);
  if (cmd.count("--steps")) c.eval.steps = e.steps;
  if (e.common.seed) c.eval.seed = *e.common.seed;
  if (e.jobs) c.eval.jobs = *e.jobs;
  if (!e.out.empty()) c.report.out = e.out;
  if (c.report.out.empty()) throw std::invalid_argument("--out is required (or report.out in the config)");
  c.validate();

  const auto cases = load_cases(c.data, c.data.eval_split, c.data.max_eval_cases);
  if (cases.empty()) throw std::invalid_argument("no evaluation cases in split '" + c.data.eval_split + "'");
  const int h = cases.front().truth.height();
  const int w = cases.front().truth.width();

  std::vector<std::unique_ptr<Policy>> policies;
  for (const auto& p : e.policies)
    policies.push_back(make_policy(p, c.eval.seed, h, w, c.eval.alternating_swap_fallback));

  EvalOptions opts;
  opts.steps = c.eval.steps;
  opts.jobs = c.eval.jobs ? c.eval.jobs : std::max(1u, std::thread::hardware_concurrency());
  opts.oracle_reference = c.eval.oracle_reference;
  const auto factory = backend_factory(c);

  nlohmann::ordered_json doc;
  doc["config"] = to_json(c);
  doc["policies"] = nlohmann::ordered_json::array();
  std::string csv = config_comment(c) + csv_header();
  for (const auto& p : policies) {
    log::info("evaluating " + p->name() + " on " + std::to_string(cases.size()) + " cases");
    const EvalReport rep = evaluate(*p, cases, c.env, factory, opts);
    if (rep.failed > 0)
      log::error(std::to_string(rep.failed) + " case(s) failed under " + p->name() +
                 " and were excluded");
    log::info(p->name() + ": final dice " + std::to_string(rep.per_step.back().dice_mean));
    doc["policies"].push_back(report_to_json(rep));
    csv += report_to_csv_rows(rep);
  }

  std::filesystem::path json_path = c.report.out;
  std::filesystem::path csv_path = json_path;
  csv_path.replace_extension(".csv");
  if (csv_path == json_path) csv_path += ".csv";
  open_out(json_path.string()) << doc.dump(2) << "\n";
  open_out(csv_path.string()) << csv;
  log::info("wrote " + json_path.string() + " and " + csv_path.string());
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeFlags {
  CommonFlags common;
  std::optional<int> port;
  std::string host = "127.0.0.1";
  std::size_t max_connections = 0;
};

int run_serve(const ServeFlags& s) {
  RunConfig c = resolve(s.common);
  c.mock.validate();
  std::map<std::string, Case> known;
  if (!c.data.dir.empty())
    for (auto& k : read_dataset(c.data.dir)) known.emplace(k.id, std::move(k));
  protocol::MockServer server(c.mock, std::move(known));
  if (!s.port) {
    server.serve_fds(0, 1);
    return 0;
  }
  int bound = 0;
  const int fd = protocol::listen_tcp(s.host, *s.port, &bound);
  std::fprintf(stderr, "serve-mock: listening on %s:%d\n", s.host.c_str(), bound);
  std::fflush(stderr);
  server.serve_listener(fd, s.max_connections);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tepo: prompt-form optimization for interactive segmentation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--cases", gen.cases, "Number of cases")->required();
  gen_cmd->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Grid size HxW")->capture_default_str();
  add_config_flag(gen_cmd, gen.common);

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "Train a DQN agent (TEPO-N)");
  train_cmd->add_option("--data", tr.common.data, "Dataset directory");
  train_cmd->add_option("--episode-len", tr.episode_len, "Interaction steps per training episode (N)")
      ->capture_default_str();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--seed", tr.common.seed, "Training seed (default 0)");
  train_cmd->add_option("--episodes", tr.episodes,
                        "Episodes M (default 0: derived from --steps / episode length)");
  train_cmd->add_option("--steps", tr.steps, "Target env steps when episodes = 0 (default 60000)");
  train_cmd->add_option("--log", tr.log_path, "Training log CSV (default <out>.log.csv)");
  add_config_flag(train_cmd, tr.common);
  add_backend_flags(train_cmd, tr.common);

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate policies and write JSON + CSV reports");
  eval_cmd->add_option("--data", ev.common.data, "Dataset directory");
  eval_cmd
      ->add_option("--policy", ev.policies,
                   "random | alternating | oracle | ckpt:PATH (repeatable)")
      ->required();
  eval_cmd->add_option("--steps", ev.steps, "Interaction steps per case")->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "JSON report path; the CSV is written beside it");
  eval_cmd->add_option("--seed", ev.common.seed, "Seed for the random policy (default 0)");
  eval_cmd->add_option("--jobs", ev.jobs, "Worker threads (default: number of processors)");
  add_config_flag(eval_cmd, ev.common);
  add_backend_flags(eval_cmd, ev.common);

  ServeFlags sv;
  auto* serve_cmd = app.add_subcommand("serve-mock", "Serve the mock segmenter over the wire protocol");
  serve_cmd->add_option("--tcp", sv.port, "Listen on this TCP port instead of stdio (0 picks one)");
  serve_cmd->add_option("--host", sv.host, "Listen address")->capture_default_str();
  serve_cmd->add_option("--data", sv.common.data, "Dataset directory to look cases up by id");
  serve_cmd->add_option("--max-connections", sv.max_connections,
                        "Exit after this many TCP connections (0: never)")
      ->capture_default_str();
  add_config_flag(serve_cmd, sv.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen(gen, *gen_cmd);
    if (*train_cmd) return run_train(tr, *train_cmd);
    if (*eval_cmd) return run_eval(ev, *eval_cmd);
    if (*serve_cmd) return run_serve(sv);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return 1;
  }
  return 0;
}
