#include "emdk/experiment.hpp"

#include <fstream>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "emdk/error.hpp"
#include "emdk/estimators.hpp"
#include "emdk/format.hpp"

namespace emdk {
namespace {

using nlohmann::ordered_json;

PolicyMetrics measure(const BiasedTask& task, const TabularPolicy& policy) {
  const auto extractor = task.extractor();
  PolicyMetrics m;
  m.greedy_accuracy = greedy_accuracy(policy, task.gold, extractor);
  m.sampled_accuracy = expected_accuracy(policy, task.gold, extractor);
  m.traj_entropy = mean_exact_traj_entropy(policy);
  m.token_entropy = mean_exact_token_entropy(policy);
  return m;
}

ordered_json to_json(const PolicyMetrics& m) {
  return ordered_json{{"greedy_accuracy", m.greedy_accuracy},
                      {"sampled_accuracy", m.sampled_accuracy},
                      {"traj_entropy_exact", m.traj_entropy},
                      {"token_entropy_exact", m.token_entropy}};
}

struct DecodeStats {
  double accuracy = 0.0;
  double mean_entropy_after = 0.0;
  std::size_t tokens = 0;
  std::vector<std::vector<std::string>> rows;
};

DecodeStats decode_all(const BiasedTask& task, const ExperimentConfig& config,
                       AdjustMethod method) {
  DecodeOptions opts;
  opts.method = method;
  opts.em_inf = config.em_inf;
  opts.adaptive = config.adaptive;
  opts.sampling.mode = SamplingConfig::Mode::multinomial;
  opts.sampling.temperature = config.sampling_temperature;
  opts.max_len = task.policy.max_len();
  const auto extractor = task.extractor();

  DecodeStats stats;
  std::size_t correct = 0;
  std::size_t steps = 0;
  for (PromptId p = 0; p < task.policy.n_prompts(); ++p) {
    for (int s = 0; s < config.decode_samples; ++s) {
      PolicyLogitProvider provider(task.policy, p);
      Rng rng(StreamKey{config.seed, static_cast<std::uint64_t>(method), static_cast<std::uint64_t>(p),
                        static_cast<std::uint64_t>(s)});
      const DecodeResult res = decode(provider, opts, rng);
      const auto answer = extractor(res.trajectory);
      if (answer && *answer == answer_text(task.gold[static_cast<std::size_t>(p)])) ++correct;
      stats.tokens += res.trajectory.size();
      for (std::size_t t = 0; t < res.trajectory.size(); ++t) {
        stats.mean_entropy_after += res.entropy_after[t];
        ++steps;
        stats.rows.push_back({std::to_string(p), std::to_string(s), std::to_string(t),
                              std::to_string(res.trajectory.tokens[t]),
                              format_real(res.entropy_before[t]),
                              format_real(res.entropy_after[t])});
      }
    }
  }
  const double n = static_cast<double>(task.policy.n_prompts()) * config.decode_samples;
  stats.accuracy = static_cast<double>(correct) / n;
  if (steps) stats.mean_entropy_after /= static_cast<double>(steps);
  return stats;
}

void write_json(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

std::string_view to_string(ExperimentMethod method) {
  switch (method) {
    case ExperimentMethod::emft:
      return "emft";
    case ExperimentMethod::emrl_seq:
      return "emrl_seq";
    case ExperimentMethod::emrl_tok:
      return "emrl_tok";
    case ExperimentMethod::scrl:
      return "scrl";
    case ExperimentMethod::em_inf:
      return "em_inf";
    case ExperimentMethod::adaptive_temp:
      return "adaptive_temp";
  }
  return "unknown";
}

ExperimentMethod parse_experiment_method(std::string_view name) {
  for (auto m : {ExperimentMethod::emft, ExperimentMethod::emrl_seq, ExperimentMethod::emrl_tok,
                 ExperimentMethod::scrl, ExperimentMethod::em_inf,
                 ExperimentMethod::adaptive_temp}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  task.validate();
  if (decode_samples < 1) throw ConfigError("decode_samples must be at least 1");
  if (!(sampling_temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  switch (method) {
    case ExperimentMethod::emft:
      emft.validate();
      break;
    case ExperimentMethod::em_inf:
      em_inf.validate();
      break;
    case ExperimentMethod::adaptive_temp:
      adaptive.validate();
      break;
    default: {
      EmRlConfig c = emrl;
      c.answer_extractor = [](const Trajectory&) -> Answer { return std::nullopt; };
      c.validate();
    }
  }
}

double parameter_count(const TabularPolicy& policy) {
  return static_cast<double>(policy.params().values().size());
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  TaskSpec spec = config.task;
  spec.seed = config.seed;
  const BiasedTask task = make_biased_task(spec);
  std::vector<PromptId> prompts(static_cast<std::size_t>(task.policy.n_prompts()));
  std::iota(prompts.begin(), prompts.end(), 0);

  std::filesystem::create_directories(config.out_dir);
  ExperimentReport report;
  report.history_path = config.out_dir / ("history." + std::string(extension(config.format)));
  report.metrics_path = config.out_dir / "metrics.json";
  report.summary_path = config.out_dir / "summary.json";
  report.initial = measure(task, task.policy);

  const double params = parameter_count(task.policy);
  std::ofstream history(report.history_path);
  if (!history) throw Error("cannot write " + report.history_path.string());

  switch (config.method) {
    case ExperimentMethod::emft: {
      EmFtConfig c = config.emft;
      c.seed = config.seed;
      c.workers = config.workers;
      const EmFtResult res = emft_train(task.policy, prompts, c);
      write_history(history, config.format, res.history);
      std::vector<double> tokens;
      for (const auto& h : res.history) tokens.push_back(static_cast<double>(h.tokens));
      report.flops = flops_run(FlopsMethod::emft, params, tokens);
      report.final_metrics = measure(task, res.policy);
      break;
    }
    case ExperimentMethod::emrl_seq:
    case ExperimentMethod::emrl_tok:
    case ExperimentMethod::scrl: {
      EmRlConfig c = config.emrl;
      c.seed = config.seed;
      c.workers = config.workers;
      c.reward_kind = config.method == ExperimentMethod::emrl_seq   ? RewardKind::sequence
                      : config.method == ExperimentMethod::emrl_tok ? RewardKind::token
                                                                    : RewardKind::self_consistency;
      c.answer_extractor = task.extractor();
      const EmRlResult res = emrl_train(task.policy, prompts, c);
      write_history(history, config.format, res.history);
      std::vector<double> tokens;
      for (const auto& h : res.history) tokens.push_back(static_cast<double>(h.tokens));
      report.flops = flops_run(FlopsMethod::emrl_like, params, tokens);
      report.final_metrics = measure(task, res.policy);
      break;
    }
    case ExperimentMethod::em_inf:
    case ExperimentMethod::adaptive_temp: {
      const auto adjust = config.method == ExperimentMethod::em_inf ? AdjustMethod::em_inf
                                                                    : AdjustMethod::adaptive_temp;
      const DecodeStats plain = decode_all(task, config, AdjustMethod::none);
      const DecodeStats adjusted = decode_all(task, config, adjust);
      const std::vector<std::string> columns{"prompt", "sample", "step", "token",
                                             "entropy_before", "entropy_after"};
      write_table(history, config.format, columns, adjusted.rows);
      const double tokens[] = {static_cast<double>(adjusted.tokens)};
      report.flops = flops_run(FlopsMethod::inference, params, tokens);
      report.initial.sampled_accuracy = plain.accuracy;
      // Inference methods leave the parameters untouched.
      report.final_metrics = report.initial;
      report.final_metrics.sampled_accuracy = adjusted.accuracy;
      break;
    }
  }
  history.close();

  ordered_json flops{{"method", std::string(to_string(report.flops.method))},
                     {"params", report.flops.params},
                     {"tokens", report.flops.tokens},
                     {"total", report.flops.total}};
  write_json(report.metrics_path, ordered_json{{"initial", to_json(report.initial)},
                                               {"final", to_json(report.final_metrics)},
                                               {"flops", flops}});
  write_json(report.summary_path,
             ordered_json{{"status", "ok"},
                          {"method", std::string(to_string(config.method))},
                          {"seed", config.seed},
                          {"q", config.task.q},
                          {"n_prompts", config.task.n_prompts},
                          {"greedy_accuracy_initial", report.initial.greedy_accuracy},
                          {"greedy_accuracy_final", report.final_metrics.greedy_accuracy},
                          {"sampled_accuracy_initial", report.initial.sampled_accuracy},
                          {"sampled_accuracy_final", report.final_metrics.sampled_accuracy},
                          {"total_flops", report.flops.total}});
  return report;
}

}  // namespace emdk
