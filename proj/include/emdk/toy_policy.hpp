#pragma once

// Exactly-enumerable tabular autoregressive policy. Each (prompt, prefix)
// pair owns one row of logits; the last vocabulary symbol is end-of-sequence
// and sequences are cut at max_len.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

#include "emdk/rng.hpp"

namespace emdk {

using Symbol = int;
using PromptId = int;

/// Upper bound on vocab_size^max_len for anything that enumerates trajectories.
inline constexpr std::uint64_t kEnumerationCap = 1'000'000;

struct PolicyShape {
  int vocab_size = 0;
  int max_len = 0;
  int n_prompts = 0;

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

/// vocab_size^max_len, saturating at kEnumerationCap + 1.
std::uint64_t enumeration_size(const PolicyShape& shape);

/// Dense table with one row of vocab_size reals per (prompt, prefix). Also used
/// for gradients, which share the keying.
class ParamTable {
 public:
  ParamTable() = default;
  explicit ParamTable(const PolicyShape& shape);

  const PolicyShape& shape() const noexcept { return shape_; }
  std::size_t rows_per_prompt() const noexcept { return rows_per_prompt_; }
  std::size_t row_count() const noexcept {
    return rows_per_prompt_ * static_cast<std::size_t>(shape_.n_prompts);
  }

  /// Row position of a prefix within one prompt's block. Throws LookupError
  /// for prefixes that contain end-of-sequence or reach max_len.
  std::size_t prefix_row(std::span<const Symbol> prefix) const;
  std::vector<Symbol> prefix_of(std::size_t prefix_row) const;
  std::size_t flat_row(PromptId prompt, std::size_t prefix_row) const;

  std::span<double> row(std::size_t flat) noexcept;
  std::span<const double> row(std::size_t flat) const noexcept;
  std::span<double> row(PromptId prompt, std::span<const Symbol> prefix);
  std::span<const double> row(PromptId prompt, std::span<const Symbol> prefix) const;

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double norm() const;
  /// this += a * other.
  void axpy(double a, const ParamTable& other);
  void set_zero();

  friend bool operator==(const ParamTable&, const ParamTable&) = default;

 private:
  PolicyShape shape_;
  std::vector<std::size_t> offsets_;  // first row index of each prefix length
  std::size_t rows_per_prompt_ = 0;
  std::vector<double> data_;
};

using ParamGradient = ParamTable;

struct UniformInit {};

struct RandomNormalInit {
  double sigma = 1.0;
};

/// Every row puts `margin` on its target symbol above the largest other entry.
/// Other entries are N(0, noise_sigma^2).
struct BiasedInit {
  std::function<Symbol(PromptId, std::span<const Symbol>)> target;
  double margin = 5.0;
  double noise_sigma = 0.0;
};

using InitSpec = std::variant<UniformInit, RandomNormalInit, BiasedInit>;

class TabularPolicy {
 public:
  explicit TabularPolicy(ParamTable params);

  const PolicyShape& shape() const noexcept { return params_.shape(); }
  int vocab_size() const noexcept { return shape().vocab_size; }
  int max_len() const noexcept { return shape().max_len; }
  int n_prompts() const noexcept { return shape().n_prompts; }
  Symbol eos() const noexcept { return vocab_size() - 1; }
  bool enumerable() const noexcept { return enumeration_size(shape()) <= kEnumerationCap; }

  void require_prompt(PromptId prompt) const;

  std::span<const double> row(PromptId prompt, std::span<const Symbol> prefix) const;
  std::span<double> row(PromptId prompt, std::span<const Symbol> prefix);

  const ParamTable& params() const noexcept { return params_; }
  ParamTable& params() noexcept { return params_; }

  /// Throws NumericError naming the first non-finite entry.
  void check_finite() const;

  friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;

 private:
  ParamTable params_;
};

/// Builds a policy. With exact_oracles, shapes whose trajectory space exceeds
/// kEnumerationCap are rejected with ConfigError.
TabularPolicy new_policy(const PolicyShape& shape, const InitSpec& init,
                         std::uint64_t seed, bool exact_oracles = true);

struct Trajectory {
  PromptId prompt = 0;
  std::vector<Symbol> tokens;
  std::vector<double> step_logprobs;   // ln pi(y_t | y_<t)
  std::vector<double> step_entropies;  // H(pi(. | y_<t)), nats
  bool ended_with_eos = false;

  double total_logprob() const;
  double total_entropy() const;
  std::size_t size() const noexcept { return tokens.size(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Draws one symbol from the distribution given by log-probabilities.
Symbol sample_symbol(std::span<const double> logp, Rng& rng);

Trajectory sample_trajectory(const TabularPolicy& policy, PromptId prompt, Rng& rng);
Trajectory sample_trajectory(const TabularPolicy& policy, PromptId prompt,
                             const StreamKey& key);

/// n rollouts for one prompt; rollout i uses `key` with rollout = i. The
/// result does not depend on `workers`.
std::vector<Trajectory> sample_rollouts(const TabularPolicy& policy, PromptId prompt,
                                        int n, StreamKey key, int workers = 1);

/// Follows the argmax (lowest index on ties) at every step.
Trajectory greedy_trajectory(const TabularPolicy& policy, PromptId prompt);

struct WeightedTrajectory {
  Trajectory trajectory;
  double probability = 0.0;
};

/// Every terminal trajectory with its probability. Throws ConfigError above
/// kEnumerationCap.
std::vector<WeightedTrajectory> enumerate_trajectories(const TabularPolicy& policy,
                                                       PromptId prompt);

/// Visits every reachable prefix with its reach probability, depth first.
void for_each_prefix(const TabularPolicy& policy, PromptId prompt,
                     const std::function<void(std::span<const Symbol> prefix,
                                              double reach)>& visit);

/// Throws ValidationError if the trajectory could not have come from this
/// policy's vocabulary, prompt set, and length limits.
void validate_trajectory(const TabularPolicy& policy, const Trajectory& trajectory);

/// ln pi(y) recomputed from the current parameters.
double log_prob(const TabularPolicy& policy, const Trajectory& trajectory);

/// Gradient of ln pi(y): onehot(chosen) - softmax(row) on visited rows.
ParamGradient logprob_grad(const TabularPolicy& policy, const Trajectory& trajectory);
void accumulate_logprob_grad(const TabularPolicy& policy, const Trajectory& trajectory,
                             double scale, ParamGradient& out);

/// Gradient of the entropy of one row with respect to that row's logits.
std::vector<double> step_entropy_grad(const TabularPolicy& policy, PromptId prompt,
                                      std::span<const Symbol> prefix);

// Text format: "emdk-policy 1" header, shape lines, then one line per row
// "row <prompt> <prefix> <v_0> ... <v_{V-1}>" with prefix "-" for the empty
// prefix and "/"-separated symbols otherwise. Reals use the shortest decimal
// form that round-trips.
void save_policy(const TabularPolicy& policy, std::ostream& out);
TabularPolicy load_policy(std::istream& in);
void save_policy_file(const TabularPolicy& policy, const std::filesystem::path& path);
TabularPolicy load_policy_file(const std::filesystem::path& path);

}  // namespace emdk
