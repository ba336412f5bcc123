#pragma once

// Entropy estimators over sampled trajectories and their exact counterparts
// computed by enumerating the policy's trajectory tree.

#include <cstddef>
#include <span>

#include "emdk/toy_policy.hpp"

namespace emdk {

enum class EstimatorKind { trajectory, token };

struct EntropyEstimate {
  double nats = 0.0;
  EstimatorKind kind = EstimatorKind::trajectory;
  std::size_t n_samples = 0;
  /// Sample standard deviation of the per-trajectory statistic over sqrt(N);
  /// zero when N == 1.
  double std_error = 0.0;
};

/// -(1/N) sum_i ln pi(y_i), using the log-probabilities recorded at sampling.
EntropyEstimate traj_entropy_estimate(std::span<const Trajectory> trajectories);

/// (1/N) sum_i sum_t H(pi(. | y_<t)): divided by the number of trajectories,
/// not by the number of tokens.
EntropyEstimate token_entropy_estimate(std::span<const Trajectory> trajectories);

/// Diagnostic only: total step entropy over total token count.
double token_entropy_per_token_mean(std::span<const Trajectory> trajectories);

/// -sum_y pi(y) ln pi(y) over the enumerated trajectory set.
double exact_traj_entropy(const TabularPolicy& policy, PromptId prompt);

/// sum over reachable prefixes of P(reach prefix) * H(row).
double exact_token_entropy(const TabularPolicy& policy, PromptId prompt);

/// Expected trajectory length, sum over prefixes of their reach probability.
double expected_length(const TabularPolicy& policy, PromptId prompt);

/// Number of terminal trajectories; ln of this bounds both exact entropies.
std::size_t trajectory_count(const PolicyShape& shape);

/// Means of the exact entropies across every prompt of the policy.
double mean_exact_traj_entropy(const TabularPolicy& policy);
double mean_exact_token_entropy(const TabularPolicy& policy);

}  // namespace emdk
