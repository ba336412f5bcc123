#include "emdk/em_inf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "emdk/error.hpp"

namespace emdk {

void EmInfConfig::validate() const {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be positive");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be positive");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
}

void AdaptiveTempConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be positive");
  if (!(tau_min_init > 0.0)) throw ConfigError("tau_min_init must be positive");
  if (!(tau_max_init > tau_min_init) || !std::isfinite(tau_max_init)) {
    throw ConfigError("tau_max_init must exceed tau_min_init");
  }
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
}

AdjustResult em_inf_adjust(const LogitVector& z, const EmInfConfig& config) {
  config.validate();
  AdjustResult res;
  res.adjusted.assign(z.values().begin(), z.values().end());
  res.entropy_before = entropy_of_logits(res.adjusted);
  double h = res.entropy_before;
  if (h <= config.delta) {
    res.entropy_after = h;
    res.target_reached = true;
    res.skipped = true;
    return res;
  }
  while (res.steps_used < config.max_steps && h > config.delta) {
    entropy_descent_step_inplace(res.adjusted, config.eta);
    ++res.steps_used;
    for (double v : res.adjusted) {
      if (!std::isfinite(v)) {
        throw NumericError("EM-INF iterate became non-finite at step " +
                           std::to_string(res.steps_used) + " (eta " +
                           std::to_string(config.eta) + ")");
      }
    }
    h = entropy_of_logits(res.adjusted);
  }
  res.entropy_after = h;
  res.target_reached = h <= config.delta;
  return res;
}

AdjustResult adaptive_temperature(const LogitVector& z, const AdaptiveTempConfig& config) {
  config.validate();
  AdjustResult res;
  res.entropy_before = entropy_of_logits(z.values());
  const double target = std::max(config.delta, config.alpha * res.entropy_before);

  double tau_final = 1.0;
  if (res.entropy_before > config.delta) {
    double lo = config.tau_min_init;
    double hi = config.tau_max_init;
    for (int it = 1; it <= config.max_iterations; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double h = entropy_of_logits(z.values(), mid);
      res.steps_used = it;
      tau_final = mid;
      if (std::abs(h - target) < config.tolerance) {
        res.target_reached = true;
        break;
      }
      if (h < target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
  } else {
    res.skipped = true;
  }

  res.tau_final = tau_final;
  res.adjusted.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) res.adjusted[i] = z[i] / tau_final;
  res.entropy_after = entropy_of_logits(res.adjusted);
  return res;
}

AdjustResult apply_adjustment(const LogitVector& z, AdjustMethod method,
                              const EmInfConfig& em_inf, const AdaptiveTempConfig& adaptive) {
  switch (method) {
    case AdjustMethod::em_inf:
      return em_inf_adjust(z, em_inf);
    case AdjustMethod::adaptive_temp:
      return adaptive_temperature(z, adaptive);
    case AdjustMethod::none:
      break;
  }
  AdjustResult res;
  res.adjusted.assign(z.values().begin(), z.values().end());
  res.entropy_before = res.entropy_after = entropy_of_logits(res.adjusted);
  return res;
}

PolicyLogitProvider::PolicyLogitProvider(const TabularPolicy& policy, PromptId prompt)
    : policy_(policy), prompt_(prompt) {
  policy_.require_prompt(prompt);
}

std::optional<std::vector<double>> PolicyLogitProvider::next_logits(
    std::span<const Symbol> prefix) {
  ++calls_;
  if (prefix.size() >= static_cast<std::size_t>(policy_.max_len())) return std::nullopt;
  const auto row = policy_.row(prompt_, prefix);
  return std::vector<double>(row.begin(), row.end());
}

DecodeResult decode(LogitProvider& provider, const DecodeOptions& options, Rng& rng) {
  if (options.max_len < 1) throw ConfigError("max_len must be at least 1");
  if (options.sampling.mode == SamplingConfig::Mode::multinomial &&
      !(options.sampling.temperature > 0.0)) {
    throw ConfigError("sampling temperature must be positive");
  }
  if (options.method == AdjustMethod::em_inf) options.em_inf.validate();
  if (options.method == AdjustMethod::adaptive_temp) options.adaptive.validate();

  DecodeResult out;
  const Symbol eos = provider.eos();
  auto& traj = out.trajectory;
  while (traj.tokens.size() < static_cast<std::size_t>(options.max_len)) {
    auto logits = provider.next_logits(traj.tokens);
    ++out.provider_calls;
    if (!logits) {
      out.truncated = true;
      return out;
    }
    const LogitVector z(std::move(*logits));
    const AdjustResult adj = apply_adjustment(z, options.method, options.em_inf, options.adaptive);
    out.entropy_before.push_back(adj.entropy_before);
    out.entropy_after.push_back(adj.entropy_after);
    out.target_reached.push_back(adj.target_reached ? 1 : 0);

    const bool greedy = options.sampling.mode == SamplingConfig::Mode::greedy;
    const auto logp = log_softmax(adj.adjusted, greedy ? 1.0 : options.sampling.temperature);
    const Symbol s =
        greedy ? static_cast<Symbol>(argmax(adj.adjusted)) : sample_symbol(logp, rng);
    double h = 0.0;
    for (double lp : logp) h -= std::exp(lp) * lp;
    traj.tokens.push_back(s);
    traj.step_logprobs.push_back(logp[static_cast<std::size_t>(s)]);
    traj.step_entropies.push_back(std::max(h, 0.0));
    if (s == eos) {
      traj.ended_with_eos = true;
      return out;
    }
  }
  out.truncated = true;
  return out;
}

}  // namespace emdk
