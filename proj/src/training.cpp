#include "emdk/training.hpp"

#include "emdk/error.hpp"
#include "emdk/prob_core.hpp"

namespace emdk {

std::vector<PromptId> batch_for_step(std::span<const PromptId> prompts, int batch, int step) {
  const std::size_t n = prompts.size();
  if (batch <= 0 || static_cast<std::size_t>(batch) >= n) {
    return {prompts.begin(), prompts.end()};
  }
  std::vector<PromptId> out;
  const auto b = static_cast<std::size_t>(batch);
  const std::size_t start = (static_cast<std::size_t>(step) * b) % n;
  for (std::size_t k = 0; k < b; ++k) out.push_back(prompts[(start + k) % n]);
  return out;
}

std::size_t count_argmax_changes(const TabularPolicy& a, const TabularPolicy& b) {
  require_same_shape(a, b);
  std::size_t changes = 0;
  for (std::size_t r = 0; r < a.params().row_count(); ++r) {
    if (argmax(a.params().row(r)) != argmax(b.params().row(r))) ++changes;
  }
  return changes;
}

double total_row_kl(const TabularPolicy& policy, const TabularPolicy& reference,
                    std::span<const PromptId> prompts) {
  require_same_shape(policy, reference);
  const auto& table = policy.params();
  double total = 0.0;
  for (PromptId p : prompts) {
    for (std::size_t r = 0; r < table.rows_per_prompt(); ++r) {
      const std::size_t flat = table.flat_row(p, r);
      total += kl_divergence_logits(table.row(flat), reference.params().row(flat));
    }
  }
  return total;
}

double trajectory_kl(const TabularPolicy& policy, const TabularPolicy& reference,
                     const Trajectory& trajectory) {
  require_same_shape(policy, reference);
  std::span<const Symbol> tokens(trajectory.tokens);
  double kl = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    kl += kl_divergence_logits(policy.row(trajectory.prompt, tokens.first(t)),
                               reference.row(trajectory.prompt, tokens.first(t)));
  }
  return kl;
}

void require_same_shape(const TabularPolicy& a, const TabularPolicy& b) {
  if (a.shape() != b.shape()) {
    throw ValidationError("policies differ in vocabulary, length, or prompt count");
  }
}

void require_prompts(const TabularPolicy& policy, std::span<const PromptId> prompts) {
  if (prompts.empty()) throw ConfigError("no training prompts");
  for (PromptId p : prompts) policy.require_prompt(p);
}

}  // namespace emdk
