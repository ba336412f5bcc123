#pragma once

// EM-RL: REINFORCE with negative entropy as the only reward, a leave-one-out
// (RLOO) baseline, and a KL penalty toward the starting policy. The
// self-consistency (majority vote) reward is provided as a baseline method.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emdk/toy_policy.hpp"

namespace emdk {

enum class RewardKind { sequence, token, self_consistency };

/// Extracted answer, or nullopt when the trajectory has none.
using Answer = std::optional<std::string>;
using AnswerExtractor = std::function<Answer(const Trajectory&)>;

/// Answer = the symbols after the first `separator`, up to end-of-sequence,
/// rendered as comma-separated ids. No separator or an empty suffix means no
/// answer.
AnswerExtractor separator_extractor(Symbol separator, Symbol eos);

struct EmRlConfig {
  RewardKind reward_kind = RewardKind::sequence;
  int n_rollouts = 4;
  double learning_rate = 0.5;
  double kl_beta = 0.001;
  int steps = 100;
  int batch_prompts = 0;
  std::uint64_t seed = 0;
  /// Required iff reward_kind == self_consistency.
  AnswerExtractor answer_extractor;
  /// Subtract the leave-one-out mean. Disabling it is for analysis only.
  bool use_baseline = true;
  /// Negate the entropy reward, turning the trainer into an entropy
  /// maximizer (contrast runs).
  bool maximize_entropy = false;
  int workers = 1;

  void validate() const;
};

struct RewardAssignment {
  std::size_t index = 0;
  double reward = 0.0;      // reward of the configured kind, before KL
  double kl_penalty = 0.0;  // beta * sum_t KL, subtracted before baselining
  double advantage = 0.0;
};

/// ln pi(y) from the recorded step log-probabilities.
double reward_traj(const Trajectory& trajectory);

/// -sum_t H(pi(. | y_<t)) from the recorded step entropies.
double reward_token(const Trajectory& trajectory);

/// r_i = #{j : a_j == a_i} / N; trajectories without an answer get 0 and
/// match nothing. Throws ConfigError when the extractor is empty.
std::vector<double> reward_self_consistency(std::span<const Trajectory> group,
                                            const AnswerExtractor& extractor);

/// A_i = r_i - mean of the other N-1 rewards. Throws InvalidArgument for N < 2.
std::vector<double> rloo_advantages(std::span<const double> rewards);

/// beta * sum_t KL(pi_theta(. | y_<t) || pi_ref(. | y_<t)).
double kl_penalty(const TabularPolicy& policy, const TabularPolicy& reference,
                  const Trajectory& trajectory, double beta);

/// Rewards, KL penalties, and advantages for one rollout group.
std::vector<RewardAssignment> assign_rewards(const TabularPolicy& policy,
                                             const TabularPolicy& reference,
                                             std::span<const Trajectory> group,
                                             const EmRlConfig& config);

/// out += (1/N) sum_i weights_i * grad ln pi(y_i).
void accumulate_score_gradient(const TabularPolicy& policy, std::span<const Trajectory> group,
                               std::span<const double> weights, ParamGradient& out);

/// Ascent direction of expected reward, accumulated over rollout groups. Each
/// group must hold exactly config.n_rollouts trajectories of one prompt.
ParamGradient policy_gradient(const TabularPolicy& policy, const TabularPolicy& reference,
                              std::span<const std::vector<Trajectory>> groups,
                              const EmRlConfig& config);

struct EmRlStep {
  int step = 0;
  double traj_entropy_exact = 0.0;
  double token_entropy_exact = 0.0;
  double mean_reward = 0.0;
  double grad_norm = 0.0;
  std::size_t argmax_changes = 0;
  std::size_t tokens = 0;
};

struct EmRlResult {
  TabularPolicy policy;
  double initial_traj_entropy = 0.0;
  double initial_token_entropy = 0.0;
  std::vector<EmRlStep> history;
};

EmRlResult emrl_train(TabularPolicy policy, std::span<const PromptId> prompts,
                      const EmRlConfig& config);

}  // namespace emdk
