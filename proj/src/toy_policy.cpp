#include "emdk/toy_policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>

#include "emdk/error.hpp"
#include "emdk/format.hpp"
#include "emdk/parallel.hpp"
#include "emdk/prob_core.hpp"

namespace emdk {
namespace {

// Memory guard on the table itself, independent of the enumeration cap.
constexpr std::uint64_t kMaxTableEntries = 50'000'000;

void require_shape(const PolicyShape& shape) {
  if (shape.vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (shape.max_len < 1) throw ConfigError("max_len must be at least 1");
  if (shape.n_prompts < 1) throw ConfigError("n_prompts must be at least 1");
}

std::string prefix_text(std::span<const Symbol> prefix) {
  if (prefix.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (i) s += '/';
    s += std::to_string(prefix[i]);
  }
  return s;
}

}  // namespace

std::uint64_t enumeration_size(const PolicyShape& shape) {
  std::uint64_t total = 1;
  for (int i = 0; i < shape.max_len; ++i) {
    total *= static_cast<std::uint64_t>(shape.vocab_size);
    if (total > kEnumerationCap) return kEnumerationCap + 1;
  }
  return total;
}

// ---------------------------------------------------------------------------
// ParamTable
// ---------------------------------------------------------------------------

ParamTable::ParamTable(const PolicyShape& shape) : shape_(shape) {
  require_shape(shape);
  // Reachable prefixes are strings over the V-1 non-EOS symbols of length < L.
  const std::uint64_t branch = static_cast<std::uint64_t>(shape.vocab_size - 1);
  std::uint64_t level = 1;
  std::uint64_t total = 0;
  offsets_.reserve(static_cast<std::size_t>(shape.max_len) + 1);
  for (int len = 0; len < shape.max_len; ++len) {
    offsets_.push_back(static_cast<std::size_t>(total));
    total += level;
    if (total * static_cast<std::uint64_t>(shape.vocab_size) *
            static_cast<std::uint64_t>(shape.n_prompts) >
        kMaxTableEntries) {
      throw ConfigError("policy table too large for a tabular policy");
    }
    level *= branch;
  }
  offsets_.push_back(static_cast<std::size_t>(total));
  rows_per_prompt_ = static_cast<std::size_t>(total);
  data_.assign(row_count() * static_cast<std::size_t>(shape.vocab_size), 0.0);
}

std::size_t ParamTable::prefix_row(std::span<const Symbol> prefix) const {
  if (prefix.size() >= static_cast<std::size_t>(shape_.max_len)) {
    throw LookupError("prefix of length " + std::to_string(prefix.size()) +
                      " has no row (max_len " + std::to_string(shape_.max_len) + ")");
  }
  const std::size_t branch = static_cast<std::size_t>(shape_.vocab_size - 1);
  std::size_t index = 0;
  for (Symbol s : prefix) {
    if (s < 0 || s >= shape_.vocab_size - 1) {
      throw LookupError("prefix symbol " + std::to_string(s) + " is not a continuation symbol");
    }
    index = index * branch + static_cast<std::size_t>(s);
  }
  return offsets_[prefix.size()] + index;
}

std::vector<Symbol> ParamTable::prefix_of(std::size_t prefix_row) const {
  if (prefix_row >= rows_per_prompt_) throw LookupError("row index out of range");
  std::size_t len = 0;
  while (offsets_[len + 1] <= prefix_row) ++len;
  std::size_t index = prefix_row - offsets_[len];
  const std::size_t branch = static_cast<std::size_t>(shape_.vocab_size - 1);
  std::vector<Symbol> prefix(len);
  for (std::size_t i = len; i-- > 0;) {
    prefix[i] = static_cast<Symbol>(index % branch);
    index /= branch;
  }
  return prefix;
}

std::size_t ParamTable::flat_row(PromptId prompt, std::size_t prefix_row) const {
  if (prompt < 0 || prompt >= shape_.n_prompts) {
    throw LookupError("unknown prompt id " + std::to_string(prompt));
  }
  return static_cast<std::size_t>(prompt) * rows_per_prompt_ + prefix_row;
}

std::span<double> ParamTable::row(std::size_t flat) noexcept {
  const auto v = static_cast<std::size_t>(shape_.vocab_size);
  return std::span<double>(data_).subspan(flat * v, v);
}

std::span<const double> ParamTable::row(std::size_t flat) const noexcept {
  const auto v = static_cast<std::size_t>(shape_.vocab_size);
  return std::span<const double>(data_).subspan(flat * v, v);
}

std::span<double> ParamTable::row(PromptId prompt, std::span<const Symbol> prefix) {
  return row(flat_row(prompt, prefix_row(prefix)));
}

std::span<const double> ParamTable::row(PromptId prompt,
                                        std::span<const Symbol> prefix) const {
  return row(flat_row(prompt, prefix_row(prefix)));
}

double ParamTable::norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

void ParamTable::axpy(double a, const ParamTable& other) {
  if (other.shape_ != shape_) throw ValidationError("parameter tables of different shapes");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * other.data_[i];
}

void ParamTable::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

// ---------------------------------------------------------------------------
// TabularPolicy
// ---------------------------------------------------------------------------

TabularPolicy::TabularPolicy(ParamTable params) : params_(std::move(params)) {
  require_shape(params_.shape());
  check_finite();
}

void TabularPolicy::require_prompt(PromptId prompt) const {
  if (prompt < 0 || prompt >= n_prompts()) {
    throw LookupError("unknown prompt id " + std::to_string(prompt));
  }
}

std::span<const double> TabularPolicy::row(PromptId prompt,
                                           std::span<const Symbol> prefix) const {
  return params_.row(prompt, prefix);
}

std::span<double> TabularPolicy::row(PromptId prompt, std::span<const Symbol> prefix) {
  return params_.row(prompt, prefix);
}

void TabularPolicy::check_finite() const {
  const auto values = params_.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      const auto v = static_cast<std::size_t>(vocab_size());
      const std::size_t flat = i / v;
      const std::size_t prompt = flat / params_.rows_per_prompt();
      const auto prefix = params_.prefix_of(flat % params_.rows_per_prompt());
      throw NumericError("non-finite parameter at prompt " + std::to_string(prompt) +
                         ", prefix " + prefix_text(prefix) + ", symbol " +
                         std::to_string(i % v));
    }
  }
}

TabularPolicy new_policy(const PolicyShape& shape, const InitSpec& init,
                         std::uint64_t seed, bool exact_oracles) {
  require_shape(shape);
  if (exact_oracles && enumeration_size(shape) > kEnumerationCap) {
    throw ConfigError("vocab_size^max_len exceeds the enumeration cap of " +
                      std::to_string(kEnumerationCap));
  }
  ParamTable table(shape);
  Rng rng(seed);
  const auto v = static_cast<std::size_t>(shape.vocab_size);

  std::visit(
      [&](const auto& spec) {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, RandomNormalInit>) {
          if (!(spec.sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
          for (double& x : table.values()) x = spec.sigma * rng.normal();
        } else if constexpr (std::is_same_v<T, BiasedInit>) {
          if (!spec.target) throw ConfigError("biased init needs a target map");
          if (!(spec.margin > 0.0)) throw ConfigError("margin must be positive");
          for (PromptId p = 0; p < shape.n_prompts; ++p) {
            for (std::size_t r = 0; r < table.rows_per_prompt(); ++r) {
              const auto prefix = table.prefix_of(r);
              auto row = table.row(table.flat_row(p, r));
              const Symbol target = spec.target(p, prefix);
              if (target < 0 || static_cast<std::size_t>(target) >= v) {
                throw ConfigError("biased init target out of vocabulary");
              }
              double others = -std::numeric_limits<double>::infinity();
              for (std::size_t j = 0; j < v; ++j) {
                row[j] = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
                if (j != static_cast<std::size_t>(target)) others = std::max(others, row[j]);
              }
              row[static_cast<std::size_t>(target)] = others + spec.margin;
            }
          }
        }
      },
      init);
  return TabularPolicy(std::move(table));
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

double Trajectory::total_logprob() const {
  double s = 0.0;
  for (double lp : step_logprobs) s += lp;
  return s;
}

double Trajectory::total_entropy() const {
  double s = 0.0;
  for (double h : step_entropies) s += h;
  return s;
}

Symbol sample_symbol(std::span<const double> logp, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const double p = std::exp(logp[i]);
    if (p > 0.0) last_positive = i;
    cum += p;
    if (u < cum) return static_cast<Symbol>(i);
  }
  return static_cast<Symbol>(last_positive);
}

namespace {

template <typename Choose>
Trajectory roll_out(const TabularPolicy& policy, PromptId prompt, Choose&& choose) {
  policy.require_prompt(prompt);
  Trajectory traj;
  traj.prompt = prompt;
  const auto max_len = static_cast<std::size_t>(policy.max_len());
  while (traj.tokens.size() < max_len) {
    const auto logp = log_softmax(policy.row(prompt, traj.tokens));
    double h = 0.0;
    for (double lp : logp) h -= std::exp(lp) * lp;
    const Symbol s = choose(std::span<const double>(logp));
    traj.tokens.push_back(s);
    traj.step_logprobs.push_back(logp[static_cast<std::size_t>(s)]);
    traj.step_entropies.push_back(std::max(h, 0.0));
    if (s == policy.eos()) {
      traj.ended_with_eos = true;
      break;
    }
  }
  return traj;
}

}  // namespace

Trajectory sample_trajectory(const TabularPolicy& policy, PromptId prompt, Rng& rng) {
  return roll_out(policy, prompt,
                  [&](std::span<const double> logp) { return sample_symbol(logp, rng); });
}

Trajectory sample_trajectory(const TabularPolicy& policy, PromptId prompt,
                             const StreamKey& key) {
  Rng rng(key);
  return sample_trajectory(policy, prompt, rng);
}

std::vector<Trajectory> sample_rollouts(const TabularPolicy& policy, PromptId prompt,
                                        int n, StreamKey key, int workers) {
  if (n < 1) throw InvalidArgument("need at least one rollout");
  key.prompt = static_cast<std::uint64_t>(prompt);
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), workers, [&](std::size_t i) {
    StreamKey k = key;
    k.rollout = i;
    out[i] = sample_trajectory(policy, prompt, k);
  });
  return out;
}

Trajectory greedy_trajectory(const TabularPolicy& policy, PromptId prompt) {
  return roll_out(policy, prompt, [](std::span<const double> logp) {
    return static_cast<Symbol>(argmax(logp));
  });
}

void for_each_prefix(const TabularPolicy& policy, PromptId prompt,
                     const std::function<void(std::span<const Symbol>, double)>& visit) {
  policy.require_prompt(prompt);
  std::vector<Symbol> prefix;
  const auto max_len = static_cast<std::size_t>(policy.max_len());
  std::function<void(double)> walk = [&](double reach) {
    visit(prefix, reach);
    if (prefix.size() + 1 >= max_len) return;
    const auto logp = log_softmax(policy.row(prompt, prefix));
    for (Symbol s = 0; s < policy.eos(); ++s) {
      prefix.push_back(s);
      walk(reach * std::exp(logp[static_cast<std::size_t>(s)]));
      prefix.pop_back();
    }
  };
  walk(1.0);
}

std::vector<WeightedTrajectory> enumerate_trajectories(const TabularPolicy& policy,
                                                       PromptId prompt) {
  policy.require_prompt(prompt);
  if (!policy.enumerable()) {
    throw ConfigError("vocab_size^max_len exceeds the enumeration cap of " +
                      std::to_string(kEnumerationCap));
  }
  std::vector<WeightedTrajectory> leaves;
  Trajectory current;
  current.prompt = prompt;
  const auto max_len = static_cast<std::size_t>(policy.max_len());
  std::function<void(double)> walk = [&](double prob) {
    const auto logp = log_softmax(policy.row(prompt, current.tokens));
    double h = 0.0;
    for (double lp : logp) h -= std::exp(lp) * lp;
    h = std::max(h, 0.0);
    for (Symbol s = 0; s < policy.vocab_size(); ++s) {
      const double lp = logp[static_cast<std::size_t>(s)];
      current.tokens.push_back(s);
      current.step_logprobs.push_back(lp);
      current.step_entropies.push_back(h);
      const double p = prob * std::exp(lp);
      if (s == policy.eos() || current.tokens.size() == max_len) {
        Trajectory leaf = current;
        leaf.ended_with_eos = (s == policy.eos());
        leaves.push_back({std::move(leaf), p});
      } else {
        walk(p);
      }
      current.tokens.pop_back();
      current.step_logprobs.pop_back();
      current.step_entropies.pop_back();
    }
  };
  walk(1.0);
  return leaves;
}

void validate_trajectory(const TabularPolicy& policy, const Trajectory& traj) {
  if (traj.prompt < 0 || traj.prompt >= policy.n_prompts()) {
    throw ValidationError("trajectory prompt " + std::to_string(traj.prompt) +
                          " unknown to policy");
  }
  if (traj.tokens.empty()) throw ValidationError("empty trajectory");
  if (traj.tokens.size() > static_cast<std::size_t>(policy.max_len())) {
    throw ValidationError("trajectory longer than max_len");
  }
  if (traj.step_logprobs.size() != traj.tokens.size() ||
      traj.step_entropies.size() != traj.tokens.size()) {
    throw ValidationError("trajectory step records do not match its length");
  }
  for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
    const Symbol s = traj.tokens[t];
    if (s < 0 || s >= policy.vocab_size()) {
      throw ValidationError("trajectory symbol " + std::to_string(s) + " outside vocabulary");
    }
    if (s == policy.eos() && t + 1 != traj.tokens.size()) {
      throw ValidationError("end-of-sequence before the end of the trajectory");
    }
  }
}

double log_prob(const TabularPolicy& policy, const Trajectory& traj) {
  validate_trajectory(policy, traj);
  double total = 0.0;
  std::span<const Symbol> tokens(traj.tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto logp = log_softmax(policy.row(traj.prompt, tokens.first(t)));
    total += logp[static_cast<std::size_t>(tokens[t])];
  }
  return total;
}

void accumulate_logprob_grad(const TabularPolicy& policy, const Trajectory& traj,
                             double scale, ParamGradient& out) {
  validate_trajectory(policy, traj);
  if (out.shape() != policy.shape()) throw ValidationError("gradient shape mismatch");
  std::span<const Symbol> tokens(traj.tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto prefix = tokens.first(t);
    const auto probs = softmax_probs(policy.row(traj.prompt, prefix));
    auto g = out.row(traj.prompt, prefix);
    for (std::size_t j = 0; j < probs.size(); ++j) g[j] -= scale * probs[j];
    g[static_cast<std::size_t>(tokens[t])] += scale;
  }
}

ParamGradient logprob_grad(const TabularPolicy& policy, const Trajectory& traj) {
  ParamGradient grad(policy.shape());
  accumulate_logprob_grad(policy, traj, 1.0, grad);
  return grad;
}

std::vector<double> step_entropy_grad(const TabularPolicy& policy, PromptId prompt,
                                      std::span<const Symbol> prefix) {
  return entropy_grad_logits(policy.row(prompt, prefix));
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_policy(const TabularPolicy& policy, std::ostream& out) {
  const auto& table = policy.params();
  out << "emdk-policy 1\n";
  out << "vocab_size " << policy.vocab_size() << '\n';
  out << "max_len " << policy.max_len() << '\n';
  out << "n_prompts " << policy.n_prompts() << '\n';
  for (PromptId p = 0; p < policy.n_prompts(); ++p) {
    for (std::size_t r = 0; r < table.rows_per_prompt(); ++r) {
      out << "row " << p << ' ' << prefix_text(table.prefix_of(r));
      for (double v : table.row(table.flat_row(p, r))) out << ' ' << format_real(v);
      out << '\n';
    }
  }
  if (!out) throw Error("failed to write policy");
}

TabularPolicy load_policy(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line.front() != '#') return true;
    }
    return false;
  };
  auto header_int = [&](const std::string& key) {
    if (!next_line()) throw ParseError("missing '" + key + "'", line_no + 1);
    std::istringstream ls(line);
    std::string k, v, extra;
    ls >> k >> v;
    const auto parsed = parse_int<int>(v);
    if (k != key || !parsed || (ls >> extra)) {
      throw ParseError("expected '" + key + " <integer>'", line_no);
    }
    return *parsed;
  };

  if (!next_line()) throw ParseError("empty policy file", 1);
  if (line != "emdk-policy 1") {
    throw ParseError("unsupported policy header '" + line + "'", line_no);
  }
  PolicyShape shape;
  shape.vocab_size = header_int("vocab_size");
  shape.max_len = header_int("max_len");
  shape.n_prompts = header_int("n_prompts");
  ParamTable table(shape);
  std::vector<char> seen(table.row_count(), 0);
  const auto v = static_cast<std::size_t>(shape.vocab_size);

  while (next_line()) {
    std::istringstream ls(line);
    std::string tag, prompt_text, prefix_field;
    ls >> tag >> prompt_text >> prefix_field;
    const auto prompt = parse_int<int>(prompt_text);
    if (tag != "row" || !prompt) throw ParseError("expected 'row <prompt> <prefix> ...'", line_no);
    std::vector<Symbol> prefix;
    if (prefix_field != "-") {
      std::size_t start = 0;
      while (start <= prefix_field.size()) {
        const auto end = std::min(prefix_field.find('/', start), prefix_field.size());
        const auto s = parse_int<int>(std::string_view(prefix_field).substr(start, end - start));
        if (!s) throw ParseError("bad prefix '" + prefix_field + "'", line_no);
        prefix.push_back(*s);
        start = end + 1;
      }
    }
    std::size_t flat = 0;
    try {
      flat = table.flat_row(*prompt, table.prefix_row(prefix));
    } catch (const LookupError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (seen[flat]) throw ParseError("duplicate row", line_no);
    seen[flat] = 1;
    auto row = table.row(flat);
    std::string tok;
    std::size_t j = 0;
    while (ls >> tok) {
      const auto value = parse_real(tok);
      if (!value || j >= v) throw ParseError("bad row values", line_no);
      if (!std::isfinite(*value)) throw ParseError("non-finite logit", line_no);
      row[j++] = *value;
    }
    if (j != v) throw ParseError("row has " + std::to_string(j) + " values, expected " +
                                     std::to_string(v),
                                 line_no);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ParseError("policy file is missing rows", line_no);
  }
  return TabularPolicy(std::move(table));
}

void save_policy_file(const TabularPolicy& policy, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  save_policy(policy, out);
}

TabularPolicy load_policy_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("policy file not found: " + path.string());
  return load_policy(in);
}

}  // namespace emdk
