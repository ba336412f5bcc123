#include "emdk/em_ft.hpp"

#include <cmath>

#include "emdk/error.hpp"
#include "emdk/estimators.hpp"
#include "emdk/prob_core.hpp"
#include "emdk/training.hpp"

namespace emdk {
namespace {

void require_group(const TabularPolicy& policy, std::span<const Trajectory> trajectories,
                   const TabularPolicy* reference) {
  if (trajectories.empty()) throw InvalidArgument("EM-FT needs at least one trajectory");
  for (const auto& t : trajectories) validate_trajectory(policy, t);
  if (reference) require_same_shape(policy, *reference);
}

}  // namespace

void EmFtConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be at least 1");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (batch_prompts < 0) throw ConfigError("batch_prompts must be non-negative");
  if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) throw ConfigError("kl_beta must be non-negative");
  if (workers < 1) throw ConfigError("workers must be at least 1");
}

double emft_objective(const TabularPolicy& policy, std::span<const Trajectory> trajectories,
                      const TabularPolicy* reference, double kl_beta) {
  require_group(policy, trajectories, reference);
  double total = 0.0;
  for (const auto& traj : trajectories) {
    std::span<const Symbol> tokens(traj.tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto row = policy.row(traj.prompt, tokens.first(t));
      total += entropy_of_logits(row);
      if (reference && kl_beta > 0.0) {
        total += kl_beta * kl_divergence_logits(row, reference->row(traj.prompt, tokens.first(t)));
      }
    }
  }
  return total / static_cast<double>(trajectories.size());
}

ParamGradient emft_gradient(const TabularPolicy& policy,
                            std::span<const Trajectory> trajectories,
                            const TabularPolicy* reference, double kl_beta) {
  require_group(policy, trajectories, reference);
  ParamGradient grad(policy.shape());
  const double scale = 1.0 / static_cast<double>(trajectories.size());
  for (const auto& traj : trajectories) {
    std::span<const Symbol> tokens(traj.tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto prefix = tokens.first(t);
      auto g = grad.row(traj.prompt, prefix);
      const auto row = policy.row(traj.prompt, prefix);
      const auto dh = entropy_grad_logits(row);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += scale * dh[j];
      if (reference && kl_beta > 0.0) {
        const auto dkl = kl_grad_logits(row, reference->row(traj.prompt, prefix));
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += scale * kl_beta * dkl[j];
      }
    }
  }
  return grad;
}

EmFtResult emft_train(TabularPolicy policy, std::span<const PromptId> prompts,
                      const EmFtConfig& config) {
  config.validate();
  require_prompts(policy, prompts);
  policy.check_finite();
  const TabularPolicy reference = policy;
  const TabularPolicy* ref = config.kl_beta > 0.0 ? &reference : nullptr;

  auto mean_token_entropy = [&] {
    double s = 0.0;
    for (PromptId p : prompts) s += exact_token_entropy(policy, p);
    return s / static_cast<double>(prompts.size());
  };

  EmFtResult result{policy, mean_token_entropy(), {}};
  result.history.reserve(static_cast<std::size_t>(config.steps));

  for (int step = 0; step < config.steps; ++step) {
    ParamGradient grad(policy.shape());
    double objective = 0.0;
    std::size_t tokens = 0;
    for (PromptId p : batch_for_step(prompts, config.batch_prompts, step)) {
      const StreamKey key{config.seed, static_cast<std::uint64_t>(step), 0, 0};
      const auto rollouts = sample_rollouts(policy, p, config.n_rollouts, key, config.workers);
      for (const auto& t : rollouts) tokens += t.size();
      objective += emft_objective(policy, rollouts, ref, config.kl_beta);
      grad.axpy(1.0, emft_gradient(policy, rollouts, ref, config.kl_beta));
    }
    policy.params().axpy(-config.learning_rate, grad);
    policy.check_finite();

    EmFtStep rec;
    rec.step = step + 1;
    rec.token_entropy_exact = mean_token_entropy();
    rec.objective = objective;
    rec.grad_norm = grad.norm();
    rec.argmax_changes = count_argmax_changes(policy, reference);
    rec.tokens = tokens;
    result.history.push_back(rec);
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace emdk
