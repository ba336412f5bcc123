#include "emdk/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "emdk/error.hpp"
#include "emdk/prob_core.hpp"

namespace emdk {
namespace {

template <typename Stat>
EntropyEstimate mean_estimate(std::span<const Trajectory> trajectories,
                              EstimatorKind kind, Stat&& stat) {
  if (trajectories.empty()) throw InvalidArgument("entropy estimate needs at least one trajectory");
  const double n = static_cast<double>(trajectories.size());
  double sum = 0.0;
  for (const auto& t : trajectories) sum += stat(t);
  const double mean = sum / n;
  double sq = 0.0;
  for (const auto& t : trajectories) {
    const double d = stat(t) - mean;
    sq += d * d;
  }
  EntropyEstimate est;
  est.nats = mean;
  est.kind = kind;
  est.n_samples = trajectories.size();
  est.std_error = trajectories.size() > 1 ? std::sqrt(sq / (n - 1.0) / n) : 0.0;
  return est;
}

void require_enumerable(const TabularPolicy& policy) {
  if (!policy.enumerable()) {
    throw ConfigError("vocab_size^max_len exceeds the enumeration cap");
  }
}

}  // namespace

EntropyEstimate traj_entropy_estimate(std::span<const Trajectory> trajectories) {
  return mean_estimate(trajectories, EstimatorKind::trajectory,
                       [](const Trajectory& t) { return -t.total_logprob(); });
}

EntropyEstimate token_entropy_estimate(std::span<const Trajectory> trajectories) {
  return mean_estimate(trajectories, EstimatorKind::token,
                       [](const Trajectory& t) { return t.total_entropy(); });
}

double token_entropy_per_token_mean(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw InvalidArgument("entropy estimate needs at least one trajectory");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& t : trajectories) {
    total += t.total_entropy();
    tokens += t.size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

double exact_traj_entropy(const TabularPolicy& policy, PromptId prompt) {
  require_enumerable(policy);
  double h = 0.0;
  for (const auto& leaf : enumerate_trajectories(policy, prompt)) {
    if (leaf.probability > 0.0) h -= leaf.probability * leaf.trajectory.total_logprob();
  }
  return std::max(h, 0.0);
}

double exact_token_entropy(const TabularPolicy& policy, PromptId prompt) {
  require_enumerable(policy);
  double h = 0.0;
  for_each_prefix(policy, prompt, [&](std::span<const Symbol> prefix, double reach) {
    h += reach * entropy_of_logits(policy.row(prompt, prefix));
  });
  return h;
}

double expected_length(const TabularPolicy& policy, PromptId prompt) {
  require_enumerable(policy);
  double len = 0.0;
  for_each_prefix(policy, prompt, [&](std::span<const Symbol>, double reach) { len += reach; });
  return len;
}

std::size_t trajectory_count(const PolicyShape& shape) {
  // Each prefix of length < L emits EOS (a leaf); prefixes of length L-1 also
  // end on every non-EOS symbol.
  const std::size_t branch = static_cast<std::size_t>(shape.vocab_size - 1);
  std::size_t level = 1;
  std::size_t prefixes = 0;
  for (int len = 0; len < shape.max_len; ++len) {
    prefixes += level;
    if (len + 1 == shape.max_len) return prefixes + level * branch;
    level *= branch;
  }
  return prefixes;
}

double mean_exact_traj_entropy(const TabularPolicy& policy) {
  double s = 0.0;
  for (PromptId p = 0; p < policy.n_prompts(); ++p) s += exact_traj_entropy(policy, p);
  return s / policy.n_prompts();
}

double mean_exact_token_entropy(const TabularPolicy& policy) {
  double s = 0.0;
  for (PromptId p = 0; p < policy.n_prompts(); ++p) s += exact_token_entropy(policy, p);
  return s / policy.n_prompts();
}

}  // namespace emdk
