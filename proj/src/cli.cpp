#include "emdk/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "emdk/error.hpp"
#include "emdk/estimators.hpp"
#include "emdk/experiment.hpp"
#include "emdk/format.hpp"
#include "emdk/trace_io.hpp"

namespace emdk {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out_dir;
  std::string format = "csv";
  int workers = 1;
};

// Policy source shared by the training subcommands.
struct PolicySource {
  std::string path;
  int vocab = 4;
  int max_len = 3;
  int prompts = 8;
  std::string init = "normal";
  double sigma = 1.0;
};

struct AdjustFlags {
  std::string adjust = "em_inf";
  double delta = 0.3;
  double eta = 0.1;
  int steps = 15;
  double alpha = 0.5;
  double tau_min = 1e-3;
  double tau_max = 10.0;
  int iterations = 60;
  double tolerance = 1e-4;
};

// Reads "key = value" lines; '#' starts a comment. Keys may use '_' or '-'.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config not found: " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    entries.emplace_back(key, value);
  }
  return entries;
}

AdjustMethod parse_adjust(const std::string& name) {
  if (name == "none") return AdjustMethod::none;
  if (name == "em_inf") return AdjustMethod::em_inf;
  if (name == "adaptive_temp") return AdjustMethod::adaptive_temp;
  throw ConfigError("unknown adjust method '" + name + "'");
}

void add_adjust_flags(CLI::App* sub, AdjustFlags& f) {
  sub->add_option("--adjust", f.adjust, "none | em_inf | adaptive_temp")
      ->check(CLI::IsMember({"none", "em_inf", "adaptive_temp"}));
  sub->add_option("--delta", f.delta, "entropy floor (nats)");
  sub->add_option("--eta", f.eta, "EM-INF logit step size");
  sub->add_option("--steps", f.steps, "EM-INF maximum descent steps");
  sub->add_option("--alpha", f.alpha, "adaptive temperature reduction ratio");
  sub->add_option("--tau-min", f.tau_min, "bisection lower temperature");
  sub->add_option("--tau-max", f.tau_max, "bisection upper temperature");
  sub->add_option("--iterations", f.iterations, "bisection iterations");
  sub->add_option("--tolerance", f.tolerance, "bisection entropy tolerance");
}

EmInfConfig em_inf_config(const AdjustFlags& f) { return EmInfConfig{f.delta, f.eta, f.steps}; }

AdaptiveTempConfig adaptive_config(const AdjustFlags& f) {
  return AdaptiveTempConfig{f.alpha, f.delta, f.tau_min, f.tau_max, f.iterations, f.tolerance};
}

void add_policy_flags(CLI::App* sub, PolicySource& p) {
  sub->add_option("--policy", p.path, "policy file to start from");
  sub->add_option("--vocab", p.vocab, "vocabulary size when generating a policy");
  sub->add_option("--max-len", p.max_len, "maximum trajectory length");
  sub->add_option("--prompts", p.prompts, "number of prompts");
  sub->add_option("--init", p.init, "uniform | normal")->check(CLI::IsMember({"uniform", "normal"}));
  sub->add_option("--sigma", p.sigma, "standard deviation for normal init");
}

TabularPolicy load_or_make(const PolicySource& p, std::uint64_t seed) {
  if (!p.path.empty()) return load_policy_file(p.path);
  const PolicyShape shape{p.vocab, p.max_len, p.prompts};
  if (p.init == "uniform") return new_policy(shape, UniformInit{}, seed);
  return new_policy(shape, RandomNormalInit{p.sigma}, seed);
}

fs::path out_dir_or(const Globals& g, const char* fallback) {
  return g.out_dir.empty() ? fs::path(fallback) : fs::path(g.out_dir);
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<PromptId> all_prompts(const TabularPolicy& policy) {
  std::vector<PromptId> prompts(static_cast<std::size_t>(policy.n_prompts()));
  std::iota(prompts.begin(), prompts.end(), 0);
  return prompts;
}

// Rebuilds the argument list so that config entries come first and explicit
// command-line arguments override them (options take their last value).
std::vector<std::string> apply_config(CLI::App& app, CLI::App* sub,
                                      const std::vector<std::string>& args,
                                      const std::string& config_path) {
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config(config_path)) {
    const std::string flag = "--" + key;
    if (key == "config") throw ConfigError("config files cannot include other configs");
    const bool known = (sub && sub->get_option_no_throw(flag)) || app.get_option_no_throw(flag);
    if (!known) {
      throw ConfigError("unknown config key '" + key + "'" +
                        (sub ? " for " + sub->get_name() : std::string()));
    }
    injected.push_back(flag + "=" + value);
  }
  std::vector<std::string> rebuilt;
  std::vector<std::string> rest = args;
  if (sub) {
    rebuilt.push_back(sub->get_name());
    const auto it = std::find(rest.begin(), rest.end(), sub->get_name());
    if (it != rest.end()) rest.erase(it);
  }
  rebuilt.insert(rebuilt.end(), injected.begin(), injected.end());
  rebuilt.insert(rebuilt.end(), rest.begin(), rest.end());
  return rebuilt;
}

void parse_args(CLI::App& app, std::vector<std::string> args) {
  std::reverse(args.begin(), args.end());
  app.parse(args);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Entropy-minimization toolkit: training, inference-time adjustment, FLOPs"};
  app.name("emdk");
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Globals g;
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--config", g.config, "flat 'key = value' config file");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--format", g.format, "csv | jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
  app.add_option("--workers", g.workers, "worker threads for parallel-safe stages");

  // train-emft
  auto* emft_cmd = app.add_subcommand("train-emft", "EM-FT on a tabular policy");
  PolicySource emft_src;
  EmFtConfig emft_cfg;
  add_policy_flags(emft_cmd, emft_src);
  emft_cmd->add_option("--lr", emft_cfg.learning_rate, "learning rate");
  emft_cmd->add_option("--rollouts", emft_cfg.n_rollouts, "trajectories per prompt per step");
  emft_cmd->add_option("--steps", emft_cfg.steps, "training steps");
  emft_cmd->add_option("--batch", emft_cfg.batch_prompts, "prompts per step (0 = all)");
  emft_cmd->add_option("--kl-beta", emft_cfg.kl_beta, "KL weight toward the starting policy");

  // train-emrl
  auto* emrl_cmd = app.add_subcommand("train-emrl", "EM-RL on a tabular policy");
  PolicySource emrl_src;
  EmRlConfig emrl_cfg;
  std::string reward = "sequence";
  int separator = -1;
  bool no_baseline = false;
  add_policy_flags(emrl_cmd, emrl_src);
  emrl_cmd->add_option("--reward", reward, "sequence | token | self_consistency")
      ->check(CLI::IsMember({"sequence", "token", "self_consistency"}));
  emrl_cmd->add_option("--lr", emrl_cfg.learning_rate, "learning rate");
  emrl_cmd->add_option("--rollouts", emrl_cfg.n_rollouts, "rollouts per prompt (>= 2)");
  emrl_cmd->add_option("--steps", emrl_cfg.steps, "training steps");
  emrl_cmd->add_option("--batch", emrl_cfg.batch_prompts, "prompts per step (0 = all)");
  emrl_cmd->add_option("--kl-beta", emrl_cfg.kl_beta, "KL penalty weight");
  emrl_cmd->add_option("--separator", separator,
                       "answer separator symbol for self_consistency (default vocab-2)");
  emrl_cmd->add_flag("--maximize", emrl_cfg.maximize_entropy, "flip the reward sign");
  emrl_cmd->add_flag("--no-baseline", no_baseline, "disable the RLOO baseline");

  // decode
  auto* decode_cmd = app.add_subcommand("decode", "decode from a policy with logit adjustment");
  std::string decode_policy;
  int decode_prompt = 0;
  AdjustFlags decode_adj;
  decode_adj.adjust = "none";
  std::string sampling = "multinomial";
  double temperature = 1.0;
  int decode_max_len = 0;
  int samples = 1;
  decode_cmd->add_option("--policy", decode_policy, "policy file")->required();
  decode_cmd->add_option("--prompt", decode_prompt, "prompt id");
  add_adjust_flags(decode_cmd, decode_adj);
  decode_cmd->add_option("--sampling", sampling, "greedy | multinomial")
      ->check(CLI::IsMember({"greedy", "multinomial"}));
  decode_cmd->add_option("--temperature", temperature, "sampling temperature");
  decode_cmd->add_option("--max-len", decode_max_len, "maximum tokens (default: policy max_len)");
  decode_cmd->add_option("--samples", samples, "number of trajectories");

  // process-trace
  auto* trace_cmd = app.add_subcommand("process-trace", "adjust every record of a logit trace");
  std::string trace_in, trace_out;
  AdjustFlags trace_adj;
  trace_cmd->add_option("--input", trace_in, "input trace")->required();
  trace_cmd->add_option("--output", trace_out, "output trace ('-' for stdout)")->required();
  add_adjust_flags(trace_cmd, trace_adj);

  // flops
  auto* flops_cmd = app.add_subcommand("flops", "analytic FLOPs");
  std::string flops_method = "emft";
  double flops_params = 0.0, flops_tokens = 0.0;
  int flops_steps = 1;
  flops_cmd->add_option("--method", flops_method, "emft | emrl_like | inference")
      ->check(CLI::IsMember({"emft", "emrl_like", "emrl", "inference"}));
  flops_cmd->add_option("--params", flops_params, "parameter count P")->required();
  flops_cmd->add_option("--tokens", flops_tokens, "realized tokens per step")->required();
  flops_cmd->add_option("--steps", flops_steps, "number of equal steps");

  // make-task
  auto* task_cmd = app.add_subcommand("make-task", "build the synthetic answer task");
  TaskSpec task_spec;
  auto add_task_flags = [](CLI::App* sub, TaskSpec& t) {
    sub->add_option("--vocab", t.vocab_size, "vocabulary size (>= 4)");
    sub->add_option("--max-len", t.max_len, "maximum trajectory length (>= 3)");
    sub->add_option("--prompts", t.n_prompts, "number of prompts");
    sub->add_option("--q", t.q, "fraction of prompts whose greedy answer is gold");
    sub->add_option("--margin", t.margin, "target logit margin");
    sub->add_option("--noise", t.noise_sigma, "logit noise standard deviation");
  };
  add_task_flags(task_cmd, task_spec);

  // run-exp
  auto* exp_cmd = app.add_subcommand("run-exp", "run one method on the synthetic task");
  ExperimentConfig exp;
  std::string exp_method = "emft";
  double exp_lr = 0.5, exp_kl = -1.0;
  int exp_rollouts = 0, exp_steps = 100, exp_batch = 0;
  AdjustFlags exp_adj;
  add_task_flags(exp_cmd, exp.task);
  exp_cmd->add_option("--method", exp_method,
                      "emft | emrl_seq | emrl_tok | scrl | em_inf | adaptive_temp")
      ->check(CLI::IsMember({"emft", "emrl_seq", "emrl_tok", "scrl", "em_inf", "adaptive_temp"}));
  exp_cmd->add_option("--lr", exp_lr, "learning rate");
  exp_cmd->add_option("--rollouts", exp_rollouts, "rollouts per prompt (default 1 for emft, 4 for RL)");
  exp_cmd->add_option("--train-steps", exp_steps, "training steps");
  exp_cmd->add_option("--batch", exp_batch, "prompts per step (0 = all)");
  exp_cmd->add_option("--kl-beta", exp_kl, "KL weight (default 0 for emft, 0.001 for RL)");
  exp_cmd->add_option("--decode-samples", exp.decode_samples, "decodes per prompt (inference methods)");
  exp_cmd->add_option("--temperature", exp.sampling_temperature, "sampling temperature");
  add_adjust_flags(exp_cmd, exp_adj);

  try {
    parse_args(app, args);
    CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
    if (!g.config.empty()) {
      const auto rebuilt = apply_config(app, sub, args, g.config);
      app.clear();
      parse_args(app, rebuilt);
    }
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const OutputFormat format = parse_output_format(g.format);

    if (emft_cmd->parsed()) {
      emft_cfg.seed = g.seed;
      emft_cfg.workers = g.workers;
      const TabularPolicy policy = load_or_make(emft_src, g.seed);
      const auto prompts = all_prompts(policy);
      const EmFtResult res = emft_train(policy, prompts, emft_cfg);
      const fs::path dir = out_dir_or(g, "emdk-out");
      fs::create_directories(dir);
      std::ofstream hist(dir / ("history." + std::string(extension(format))));
      write_history(hist, format, res.history);
      save_policy_file(res.policy, dir / "policy.emdk");
      std::vector<double> tokens;
      for (const auto& h : res.history) tokens.push_back(static_cast<double>(h.tokens));
      const FlopsReport flops = flops_run(FlopsMethod::emft, parameter_count(policy), tokens);
      write_json_file(dir / "summary.json",
                      ordered_json{{"method", "emft"},
                                   {"token_entropy_initial", res.initial_token_entropy},
                                   {"token_entropy_final", res.history.back().token_entropy_exact},
                                   {"argmax_changes", res.history.back().argmax_changes},
                                   {"total_flops", flops.total}});
      out << "token_entropy " << format_real(res.initial_token_entropy) << " -> "
          << format_real(res.history.back().token_entropy_exact) << "\n";
      return 0;
    }

    if (emrl_cmd->parsed()) {
      emrl_cfg.seed = g.seed;
      emrl_cfg.workers = g.workers;
      emrl_cfg.use_baseline = !no_baseline;
      const TabularPolicy policy = load_or_make(emrl_src, g.seed);
      emrl_cfg.reward_kind = reward == "sequence" ? RewardKind::sequence
                             : reward == "token"  ? RewardKind::token
                                                  : RewardKind::self_consistency;
      if (emrl_cfg.reward_kind == RewardKind::self_consistency) {
        const Symbol sep = separator >= 0 ? separator : policy.vocab_size() - 2;
        emrl_cfg.answer_extractor = separator_extractor(sep, policy.eos());
      }
      const auto prompts = all_prompts(policy);
      const EmRlResult res = emrl_train(policy, prompts, emrl_cfg);
      const fs::path dir = out_dir_or(g, "emdk-out");
      fs::create_directories(dir);
      std::ofstream hist(dir / ("history." + std::string(extension(format))));
      write_history(hist, format, res.history);
      save_policy_file(res.policy, dir / "policy.emdk");
      std::vector<double> tokens;
      for (const auto& h : res.history) tokens.push_back(static_cast<double>(h.tokens));
      const FlopsReport flops = flops_run(FlopsMethod::emrl_like, parameter_count(policy), tokens);
      write_json_file(dir / "summary.json",
                      ordered_json{{"method", "emrl"},
                                   {"reward", reward},
                                   {"traj_entropy_initial", res.initial_traj_entropy},
                                   {"traj_entropy_final", res.history.back().traj_entropy_exact},
                                   {"token_entropy_initial", res.initial_token_entropy},
                                   {"token_entropy_final", res.history.back().token_entropy_exact},
                                   {"total_flops", flops.total}});
      out << "traj_entropy " << format_real(res.initial_traj_entropy) << " -> "
          << format_real(res.history.back().traj_entropy_exact) << "\n";
      return 0;
    }

    if (decode_cmd->parsed()) {
      const TabularPolicy policy = load_policy_file(decode_policy);
      DecodeOptions opts;
      opts.method = parse_adjust(decode_adj.adjust);
      opts.em_inf = em_inf_config(decode_adj);
      opts.adaptive = adaptive_config(decode_adj);
      opts.sampling.mode = sampling == "greedy" ? SamplingConfig::Mode::greedy
                                                : SamplingConfig::Mode::multinomial;
      opts.sampling.temperature = temperature;
      opts.max_len = decode_max_len > 0 ? decode_max_len : policy.max_len();
      if (samples < 1) throw ConfigError("samples must be at least 1");

      std::vector<std::vector<std::string>> rows;
      for (int s = 0; s < samples; ++s) {
        PolicyLogitProvider provider(policy, decode_prompt);
        Rng rng(StreamKey{g.seed, 0, static_cast<std::uint64_t>(decode_prompt),
                          static_cast<std::uint64_t>(s)});
        const DecodeResult res = decode(provider, opts, rng);
        for (std::size_t t = 0; t < res.trajectory.size(); ++t) {
          rows.push_back({std::to_string(s), std::to_string(t),
                          std::to_string(res.trajectory.tokens[t]),
                          format_real(res.trajectory.step_logprobs[t]),
                          format_real(res.entropy_before[t]), format_real(res.entropy_after[t]),
                          res.target_reached[t] ? "1" : "0"});
        }
      }
      const std::vector<std::string> columns{"sample",         "step",          "token",
                                             "logprob",        "entropy_before", "entropy_after",
                                             "target_reached"};
      if (g.out_dir.empty()) {
        write_table(out, format, columns, rows);
      } else {
        fs::create_directories(g.out_dir);
        std::ofstream file(fs::path(g.out_dir) / ("decode." + std::string(extension(format))));
        write_table(file, format, columns, rows);
      }
      return 0;
    }

    if (trace_cmd->parsed()) {
      ProcessOptions opts;
      opts.method = parse_adjust(trace_adj.adjust);
      opts.em_inf = em_inf_config(trace_adj);
      opts.adaptive = adaptive_config(trace_adj);
      opts.workers = g.workers;
      std::ifstream in(trace_in);
      if (!in) throw LookupError("trace not found: " + trace_in);
      ProcessSummary summary;
      std::ostringstream buffer;
      summary = process_trace(in, opts, buffer);
      if (trace_out == "-") {
        out << buffer.str();
      } else {
        std::ofstream file(trace_out);
        if (!file) throw Error("cannot write " + trace_out);
        file << buffer.str();
      }
      const ordered_json j{{"records", summary.records},
                           {"mean_entropy_before", summary.mean_entropy_before},
                           {"mean_entropy_after", summary.mean_entropy_after},
                           {"mean_entropy_reduction", summary.mean_entropy_reduction},
                           {"fraction_target_reached", summary.fraction_target_reached}};
      (trace_out == "-" ? err : out) << j.dump() << "\n";
      return 0;
    }

    if (flops_cmd->parsed()) {
      const FlopsMethod method = parse_flops_method(flops_method);
      if (flops_steps < 0) throw ConfigError("steps must be non-negative");
      const std::vector<double> per_step(static_cast<std::size_t>(flops_steps), flops_tokens);
      const FlopsReport report = flops_run(method, flops_params, per_step);
      const double one = method == FlopsMethod::inference
                             ? flops_inference(flops_params, flops_tokens)
                             : flops_train_step(method, flops_params, flops_tokens);
      out << "method " << to_string(method) << "\n";
      out << "per_step_flops " << format_real(one) << "\n";
      out << "total_flops " << format_real(report.total) << "\n";
      return 0;
    }

    if (task_cmd->parsed()) {
      task_spec.seed = g.seed;
      const BiasedTask task = make_biased_task(task_spec);
      const fs::path dir = out_dir_or(g, "emdk-out");
      fs::create_directories(dir);
      save_policy_file(task.policy, dir / "task_policy.emdk");
      write_json_file(dir / "task.json", ordered_json{{"q", task_spec.q},
                                                      {"n_correct", task.n_correct},
                                                      {"separator", task.separator},
                                                      {"eos", task.policy.eos()},
                                                      {"gold", task.gold}});
      out << "greedy_accuracy "
          << format_real(greedy_accuracy(task.policy, task.gold, task.extractor())) << "\n";
      return 0;
    }

    if (exp_cmd->parsed()) {
      exp.method = parse_experiment_method(exp_method);
      exp.seed = g.seed;
      exp.workers = g.workers;
      exp.format = format;
      exp.out_dir = out_dir_or(g, "emdk-out");
      exp.emft.learning_rate = exp_lr;
      exp.emft.steps = exp_steps;
      exp.emft.batch_prompts = exp_batch;
      exp.emft.n_rollouts = exp_rollouts > 0 ? exp_rollouts : 1;
      exp.emft.kl_beta = exp_kl >= 0.0 ? exp_kl : 0.0;
      exp.emrl.learning_rate = exp_lr;
      exp.emrl.steps = exp_steps;
      exp.emrl.batch_prompts = exp_batch;
      exp.emrl.n_rollouts = exp_rollouts > 0 ? exp_rollouts : 4;
      exp.emrl.kl_beta = exp_kl >= 0.0 ? exp_kl : 0.001;
      exp.em_inf = em_inf_config(exp_adj);
      exp.adaptive = adaptive_config(exp_adj);
      const ExperimentReport report = run_experiment(exp);
      out << "greedy_accuracy " << format_real(report.initial.greedy_accuracy) << " -> "
          << format_real(report.final_metrics.greedy_accuracy) << "\n";
      out << "sampled_accuracy " << format_real(report.initial.sampled_accuracy) << " -> "
          << format_real(report.final_metrics.sampled_accuracy) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace emdk
