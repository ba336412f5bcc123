#pragma once

// Inference-time entropy reduction on a single step's logits: gradient
// descent on the entropy down to a floor (EM-INF) and the adaptive
// temperature bisection baseline. Both keep the top token.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "emdk/prob_core.hpp"
#include "emdk/rng.hpp"
#include "emdk/toy_policy.hpp"

namespace emdk {

struct EmInfConfig {
  double delta = 0.3;  // entropy floor, nats
  double eta = 0.1;    // logit step size
  int max_steps = 15;

  void validate() const;
};

struct AdaptiveTempConfig {
  double alpha = 0.5;
  double delta = 0.3;
  double tau_min_init = 1e-3;
  double tau_max_init = 10.0;
  int max_iterations = 60;
  double tolerance = 1e-4;

  void validate() const;
};

struct AdjustResult {
  std::vector<double> adjusted;
  int steps_used = 0;       // descent steps or bisection iterations
  double tau_final = 1.0;   // adaptive temperature only
  double entropy_before = 0.0;
  double entropy_after = 0.0;
  /// EM-INF: entropy <= delta at exit. Adaptive temperature: the bisection
  /// stopped within tolerance of its target.
  bool target_reached = false;
  /// Input already at or below the floor; returned unchanged.
  bool skipped = false;
};

/// Entropy-descent steps of size eta until H <= delta or max_steps. Throws
/// NumericError if an iterate becomes non-finite.
AdjustResult em_inf_adjust(const LogitVector& z, const EmInfConfig& config);

/// Largest-temperature bisection for H(softmax(z / tau)) = max(delta,
/// alpha * H(softmax(z))). Inputs with H <= delta are returned as is with
/// tau_final = 1.
AdjustResult adaptive_temperature(const LogitVector& z, const AdaptiveTempConfig& config);

enum class AdjustMethod { none, em_inf, adaptive_temp };

/// Identity for `none`; otherwise dispatches to the matching adjuster.
AdjustResult apply_adjustment(const LogitVector& z, AdjustMethod method,
                              const EmInfConfig& em_inf, const AdaptiveTempConfig& adaptive);

/// Supplies one logit vector per decoding step.
class LogitProvider {
 public:
  virtual ~LogitProvider() = default;
  /// Logits for the next token after `prefix`; nullopt when exhausted.
  virtual std::optional<std::vector<double>> next_logits(std::span<const Symbol> prefix) = 0;
  virtual Symbol eos() const = 0;
};

/// Serves rows of a tabular policy for one prompt and counts calls.
class PolicyLogitProvider : public LogitProvider {
 public:
  PolicyLogitProvider(const TabularPolicy& policy, PromptId prompt);

  std::optional<std::vector<double>> next_logits(std::span<const Symbol> prefix) override;
  Symbol eos() const override { return policy_.eos(); }
  std::size_t calls() const noexcept { return calls_; }

 private:
  const TabularPolicy& policy_;
  PromptId prompt_;
  std::size_t calls_ = 0;
};

struct SamplingConfig {
  enum class Mode { greedy, multinomial };
  Mode mode = Mode::multinomial;
  double temperature = 1.0;
};

struct DecodeOptions {
  AdjustMethod method = AdjustMethod::none;
  EmInfConfig em_inf;
  AdaptiveTempConfig adaptive;
  SamplingConfig sampling;
  int max_len = 16;
};

struct DecodeResult {
  /// step_logprobs/step_entropies describe the distribution actually sampled
  /// from (after adjustment and sampling temperature).
  Trajectory trajectory;
  std::vector<double> entropy_before;  // raw logits
  std::vector<double> entropy_after;   // adjusted logits at temperature 1
  std::vector<char> target_reached;
  /// Ended without end-of-sequence: max_len reached or provider exhausted.
  bool truncated = false;
  std::size_t provider_calls = 0;
};

/// One provider call per emitted token: fetch logits, adjust, sample.
DecodeResult decode(LogitProvider& provider, const DecodeOptions& options, Rng& rng);

}  // namespace emdk
