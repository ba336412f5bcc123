#include "emdk/em_rl.hpp"

#include <algorithm>
#include <cmath>

#include "emdk/error.hpp"
#include "emdk/estimators.hpp"
#include "emdk/training.hpp"

namespace emdk {

AnswerExtractor separator_extractor(Symbol separator, Symbol eos) {
  return [separator, eos](const Trajectory& traj) -> Answer {
    const auto it = std::find(traj.tokens.begin(), traj.tokens.end(), separator);
    if (it == traj.tokens.end()) return std::nullopt;
    std::string answer;
    for (auto s = std::next(it); s != traj.tokens.end() && *s != eos; ++s) {
      if (!answer.empty()) answer += ',';
      answer += std::to_string(*s);
    }
    if (answer.empty()) return std::nullopt;
    return answer;
  };
}

void EmRlConfig::validate() const {
  if (n_rollouts < 2) throw ConfigError("EM-RL needs n_rollouts >= 2 for the RLOO baseline");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) throw ConfigError("kl_beta must be non-negative");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (batch_prompts < 0) throw ConfigError("batch_prompts must be non-negative");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (reward_kind == RewardKind::self_consistency && !answer_extractor) {
    throw ConfigError("self-consistency reward requires an answer extractor");
  }
}

double reward_traj(const Trajectory& trajectory) { return trajectory.total_logprob(); }

double reward_token(const Trajectory& trajectory) { return -trajectory.total_entropy(); }

std::vector<double> reward_self_consistency(std::span<const Trajectory> group,
                                            const AnswerExtractor& extractor) {
  if (!extractor) throw ConfigError("self-consistency reward requires an answer extractor");
  std::vector<Answer> answers;
  answers.reserve(group.size());
  for (const auto& t : group) answers.push_back(extractor(t));
  const double n = static_cast<double>(group.size());
  std::vector<double> rewards(group.size(), 0.0);
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (!answers[i]) continue;
    const auto matches = std::count(answers.begin(), answers.end(), answers[i]);
    rewards[i] = static_cast<double>(matches) / n;
  }
  return rewards;
}

std::vector<double> rloo_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InvalidArgument("RLOO baseline needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  double total = 0.0;
  for (double r : rewards) total += r;
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    adv[i] = rewards[i] - (total - rewards[i]) / (n - 1.0);
  }
  return adv;
}

double kl_penalty(const TabularPolicy& policy, const TabularPolicy& reference,
                  const Trajectory& trajectory, double beta) {
  if (!(beta >= 0.0)) throw InvalidArgument("beta must be non-negative");
  validate_trajectory(policy, trajectory);
  if (beta == 0.0) return 0.0;
  return beta * trajectory_kl(policy, reference, trajectory);
}

std::vector<RewardAssignment> assign_rewards(const TabularPolicy& policy,
                                             const TabularPolicy& reference,
                                             std::span<const Trajectory> group,
                                             const EmRlConfig& config) {
  std::vector<double> raw;
  raw.reserve(group.size());
  switch (config.reward_kind) {
    case RewardKind::sequence:
      for (const auto& t : group) raw.push_back(reward_traj(t));
      break;
    case RewardKind::token:
      for (const auto& t : group) raw.push_back(reward_token(t));
      break;
    case RewardKind::self_consistency:
      raw = reward_self_consistency(group, config.answer_extractor);
      break;
  }
  if (config.maximize_entropy) {
    for (double& r : raw) r = -r;
  }

  std::vector<RewardAssignment> out(group.size());
  std::vector<double> shaped(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    out[i].index = i;
    out[i].reward = raw[i];
    out[i].kl_penalty = kl_penalty(policy, reference, group[i], config.kl_beta);
    shaped[i] = raw[i] - out[i].kl_penalty;
  }
  const std::vector<double> adv =
      config.use_baseline ? rloo_advantages(shaped) : shaped;
  for (std::size_t i = 0; i < group.size(); ++i) out[i].advantage = adv[i];
  return out;
}

void accumulate_score_gradient(const TabularPolicy& policy, std::span<const Trajectory> group,
                               std::span<const double> weights, ParamGradient& out) {
  if (group.size() != weights.size()) throw ValidationError("one weight per trajectory required");
  if (group.empty()) return;
  const double scale = 1.0 / static_cast<double>(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (weights[i] != 0.0) accumulate_logprob_grad(policy, group[i], scale * weights[i], out);
  }
}

ParamGradient policy_gradient(const TabularPolicy& policy, const TabularPolicy& reference,
                              std::span<const std::vector<Trajectory>> groups,
                              const EmRlConfig& config) {
  require_same_shape(policy, reference);
  ParamGradient grad(policy.shape());
  for (const auto& group : groups) {
    if (group.size() != static_cast<std::size_t>(config.n_rollouts)) {
      throw ValidationError("rollout group has " + std::to_string(group.size()) +
                            " trajectories, expected " + std::to_string(config.n_rollouts));
    }
    for (const auto& t : group) {
      if (t.prompt != group.front().prompt) {
        throw ValidationError("rollout group mixes prompts");
      }
      validate_trajectory(policy, t);
    }
    const auto assignments = assign_rewards(policy, reference, group, config);
    std::vector<double> adv;
    adv.reserve(assignments.size());
    for (const auto& a : assignments) adv.push_back(a.advantage);
    accumulate_score_gradient(policy, group, adv, grad);
  }
  return grad;
}

EmRlResult emrl_train(TabularPolicy policy, std::span<const PromptId> prompts,
                      const EmRlConfig& config) {
  config.validate();
  require_prompts(policy, prompts);
  policy.check_finite();
  const TabularPolicy reference = policy;

  auto mean_exact = [&](auto&& fn) {
    double s = 0.0;
    for (PromptId p : prompts) s += fn(policy, p);
    return s / static_cast<double>(prompts.size());
  };

  EmRlResult result{policy, mean_exact(exact_traj_entropy), mean_exact(exact_token_entropy), {}};
  result.history.reserve(static_cast<std::size_t>(config.steps));

  for (int step = 0; step < config.steps; ++step) {
    std::vector<std::vector<Trajectory>> groups;
    double reward_sum = 0.0;
    std::size_t reward_count = 0;
    std::size_t tokens = 0;
    for (PromptId p : batch_for_step(prompts, config.batch_prompts, step)) {
      const StreamKey key{config.seed, static_cast<std::uint64_t>(step), 0, 0};
      groups.push_back(sample_rollouts(policy, p, config.n_rollouts, key, config.workers));
      for (const auto& t : groups.back()) tokens += t.size();
      for (const auto& a : assign_rewards(policy, reference, groups.back(), config)) {
        reward_sum += a.reward;
        ++reward_count;
      }
    }
    const ParamGradient grad = policy_gradient(policy, reference, groups, config);
    policy.params().axpy(config.learning_rate, grad);
    policy.check_finite();

    EmRlStep rec;
    rec.step = step + 1;
    rec.traj_entropy_exact = mean_exact(exact_traj_entropy);
    rec.token_entropy_exact = mean_exact(exact_token_entropy);
    rec.mean_reward = reward_sum / static_cast<double>(reward_count);
    rec.grad_norm = grad.norm();
    rec.argmax_changes = count_argmax_changes(policy, reference);
    rec.tokens = tokens;
    result.history.push_back(rec);
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace emdk
