#pragma once

// End-to-end runs on the synthetic answer task: build the task, apply one
// method, and write history, metrics, and a summary to an output directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "emdk/em_ft.hpp"
#include "emdk/em_inf.hpp"
#include "emdk/em_rl.hpp"
#include "emdk/flops.hpp"
#include "emdk/history.hpp"
#include "emdk/task.hpp"

namespace emdk {

enum class ExperimentMethod { emft, emrl_seq, emrl_tok, scrl, em_inf, adaptive_temp };

std::string_view to_string(ExperimentMethod method);
ExperimentMethod parse_experiment_method(std::string_view name);

struct ExperimentConfig {
  TaskSpec task;
  ExperimentMethod method = ExperimentMethod::emft;
  EmFtConfig emft;
  EmRlConfig emrl;  // reward_kind and extractor are set from `method`
  EmInfConfig em_inf;
  AdaptiveTempConfig adaptive;
  /// Sampled decodes per prompt for the inference-time methods.
  int decode_samples = 32;
  double sampling_temperature = 1.0;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "emdk-out";
  OutputFormat format = OutputFormat::csv;
  int workers = 1;

  void validate() const;
};

struct PolicyMetrics {
  double greedy_accuracy = 0.0;
  /// Training methods: exact probability of the gold answer. Inference
  /// methods: fraction of sampled decodes with the gold answer.
  double sampled_accuracy = 0.0;
  double traj_entropy = 0.0;
  double token_entropy = 0.0;
};

struct ExperimentReport {
  PolicyMetrics initial;
  PolicyMetrics final_metrics;
  FlopsReport flops;
  std::filesystem::path history_path;
  std::filesystem::path metrics_path;
  std::filesystem::path summary_path;
};

/// Runs the configured method; writes history.<csv|jsonl>, metrics.json and
/// summary.json under out_dir (created if missing).
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Number of logits in the policy table; the P of the FLOPs formulas.
double parameter_count(const TabularPolicy& policy);

}  // namespace emdk
