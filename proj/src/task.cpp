#include "emdk/task.hpp"

#include <cmath>
#include <numeric>

#include "emdk/error.hpp"

namespace emdk {

void TaskSpec::validate() const {
  if (vocab_size < 4) throw ConfigError("task needs vocab_size >= 4 (two answers, separator, EOS)");
  if (max_len < 3) throw ConfigError("task needs max_len >= 3");
  if (n_prompts < 1) throw ConfigError("task needs at least one prompt");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("q must lie in [0, 1]");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  const long correct = std::lround(q * n_prompts);
  if (q > 0.0 && q < 1.0 && (correct == 0 || correct == n_prompts)) {
    throw ConfigError("q = " + std::to_string(q) + " cannot be honored with " +
                      std::to_string(n_prompts) + " prompts");
  }
}

AnswerExtractor BiasedTask::extractor() const {
  return separator_extractor(separator, policy.eos());
}

BiasedTask make_biased_task(const TaskSpec& spec) {
  spec.validate();
  const int n_answers = spec.vocab_size - 2;
  const Symbol separator = spec.vocab_size - 2;
  const Symbol eos = spec.vocab_size - 1;
  const int n_correct = static_cast<int>(std::lround(spec.q * spec.n_prompts));

  Rng rng(StreamKey{spec.seed, 0xB1A5ED, 0, 0}.derive());
  std::vector<Symbol> gold(static_cast<std::size_t>(spec.n_prompts));
  for (auto& g : gold) g = static_cast<Symbol>(rng.below(static_cast<std::uint64_t>(n_answers)));

  std::vector<int> order(gold.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<Symbol> greedy_answer = gold;
  for (std::size_t k = static_cast<std::size_t>(n_correct); k < order.size(); ++k) {
    const auto p = static_cast<std::size_t>(order[k]);
    const auto shift = 1 + rng.below(static_cast<std::uint64_t>(n_answers - 1));
    greedy_answer[p] = static_cast<Symbol>((gold[p] + static_cast<Symbol>(shift)) % n_answers);
  }

  BiasedInit init;
  init.margin = spec.margin;
  init.noise_sigma = spec.noise_sigma;
  init.target = [&](PromptId p, std::span<const Symbol> prefix) -> Symbol {
    if (prefix.empty()) return separator;
    if (prefix.size() == 1 && prefix[0] == separator) {
      return greedy_answer[static_cast<std::size_t>(p)];
    }
    return eos;
  };
  const PolicyShape shape{spec.vocab_size, spec.max_len, spec.n_prompts};
  TabularPolicy policy = new_policy(shape, init, rng.below(~0ULL));
  return BiasedTask{std::move(policy), std::move(gold), separator, n_correct};
}

std::string answer_text(Symbol answer) { return std::to_string(answer); }

double greedy_accuracy(const TabularPolicy& policy, std::span<const Symbol> gold,
                       const AnswerExtractor& extractor) {
  if (gold.size() != static_cast<std::size_t>(policy.n_prompts())) {
    throw ValidationError("one gold answer per prompt required");
  }
  std::size_t correct = 0;
  for (PromptId p = 0; p < policy.n_prompts(); ++p) {
    const auto answer = extractor(greedy_trajectory(policy, p));
    if (answer && *answer == answer_text(gold[static_cast<std::size_t>(p)])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

double expected_accuracy(const TabularPolicy& policy, std::span<const Symbol> gold,
                         const AnswerExtractor& extractor) {
  if (gold.size() != static_cast<std::size_t>(policy.n_prompts())) {
    throw ValidationError("one gold answer per prompt required");
  }
  double total = 0.0;
  for (PromptId p = 0; p < policy.n_prompts(); ++p) {
    const std::string want = answer_text(gold[static_cast<std::size_t>(p)]);
    for (const auto& leaf : enumerate_trajectories(policy, p)) {
      const auto answer = extractor(leaf.trajectory);
      if (answer && *answer == want) total += leaf.probability;
    }
  }
  return total / static_cast<double>(gold.size());
}

}  // namespace emdk
