#pragma once

// Pieces shared by the EM-FT and EM-RL trainers.

#include <cstddef>
#include <span>
#include <vector>

#include "emdk/toy_policy.hpp"

namespace emdk {

/// Prompts used at `step`: a window of `batch` prompts that advances through
/// `prompts` cyclically. batch <= 0 or batch >= prompts.size() means all.
std::vector<PromptId> batch_for_step(std::span<const PromptId> prompts, int batch, int step);

/// Number of table rows (over all prompts) whose argmax differs.
std::size_t count_argmax_changes(const TabularPolicy& a, const TabularPolicy& b);

/// Sum over the rows of `prompts` of KL(policy row || reference row).
double total_row_kl(const TabularPolicy& policy, const TabularPolicy& reference,
                    std::span<const PromptId> prompts);

/// Sum over the visited rows of KL(pi_theta || pi_ref) along one trajectory.
double trajectory_kl(const TabularPolicy& policy, const TabularPolicy& reference,
                     const Trajectory& trajectory);

/// Throws ValidationError unless the policies share a shape.
void require_same_shape(const TabularPolicy& a, const TabularPolicy& b);

/// Checks every prompt id against the policy; throws ConfigError when empty.
void require_prompts(const TabularPolicy& policy, std::span<const PromptId> prompts);

}  // namespace emdk
