#pragma once

// EM-FT: gradient descent on the empirical token-level entropy of
// self-sampled trajectories, optionally with a KL pull toward the starting
// policy.

#include <cstdint>
#include <span>
#include <vector>

#include "emdk/toy_policy.hpp"

namespace emdk {

struct EmFtConfig {
  double learning_rate = 0.5;
  int n_rollouts = 1;
  int steps = 100;
  /// Prompts per step; 0 uses every prompt.
  int batch_prompts = 0;
  /// Weight of KL(pi_theta || pi_ref) per visited prefix; 0 disables it.
  double kl_beta = 0.0;
  std::uint64_t seed = 0;
  int workers = 1;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

struct EmFtStep {
  int step = 0;
  /// Mean exact token entropy over the training prompts after this update.
  double token_entropy_exact = 0.0;
  /// Sampled objective before the update, summed over the batch prompts.
  double objective = 0.0;
  double grad_norm = 0.0;
  /// Rows whose argmax differs from the starting policy.
  std::size_t argmax_changes = 0;
  /// Realized generated tokens sampled in this step.
  std::size_t tokens = 0;
};

struct EmFtResult {
  TabularPolicy policy;
  double initial_token_entropy = 0.0;
  std::vector<EmFtStep> history;
};

/// (1/N) sum_i sum_t [H(row_t) + beta * KL(row_t || ref_t)] over the visited
/// rows of the given trajectories.
double emft_objective(const TabularPolicy& policy, std::span<const Trajectory> trajectories,
                      const TabularPolicy* reference = nullptr, double kl_beta = 0.0);

/// Gradient of emft_objective with respect to the parameters. Trainers
/// subtract learning_rate times this.
ParamGradient emft_gradient(const TabularPolicy& policy,
                            std::span<const Trajectory> trajectories,
                            const TabularPolicy* reference = nullptr, double kl_beta = 0.0);

EmFtResult emft_train(TabularPolicy policy, std::span<const PromptId> prompts,
                      const EmFtConfig& config);

}  // namespace emdk
