#pragma once

// Synthetic answer task with a knob for how often the policy's confident
// (greedy) answer is the gold one.
//
// Layout: symbols 0..V-3 are answers, V-2 is the separator, V-1 is
// end-of-sequence. The intended trajectory is [separator, answer, EOS].

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "emdk/em_rl.hpp"
#include "emdk/toy_policy.hpp"

namespace emdk {

struct TaskSpec {
  int vocab_size = 6;
  int max_len = 3;
  int n_prompts = 100;
  /// Fraction of prompts whose greedy answer is the gold answer.
  double q = 0.9;
  /// Logit gap of every row's target symbol over the rest.
  double margin = 1.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BiasedTask {
  TabularPolicy policy;
  std::vector<Symbol> gold;
  Symbol separator = 0;
  /// Number of prompts built greedy-correct: round(q * n_prompts).
  int n_correct = 0;

  AnswerExtractor extractor() const;
};

/// Throws ConfigError for shapes that cannot host the task or when 0 < q < 1
/// rounds to all-or-nothing at this prompt count.
BiasedTask make_biased_task(const TaskSpec& spec);

std::string answer_text(Symbol answer);

/// Fraction of prompts whose greedy trajectory yields the gold answer.
double greedy_accuracy(const TabularPolicy& policy, std::span<const Symbol> gold,
                       const AnswerExtractor& extractor);

/// Probability of producing the gold answer, averaged over prompts; exact by
/// enumeration.
double expected_accuracy(const TabularPolicy& policy, std::span<const Symbol> gold,
                         const AnswerExtractor& extractor);

}  // namespace emdk
