#include "emdk/prob_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "emdk/error.hpp"

namespace emdk {
namespace {

void require_finite(std::span<const double> z, const char* what) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(z[i])) {
      throw InvalidArgument(std::string(what) + ": non-finite entry at index " +
                            std::to_string(i));
    }
  }
}

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw InvalidArgument("temperature must be a positive finite number");
  }
}

void require_nonempty(std::span<const double> z) {
  if (z.empty()) throw InvalidArgument("empty logit vector");
}

}  // namespace

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) {
    throw InvalidArgument("logit vector needs at least two entries");
  }
  require_finite(values_, "logit vector");
}

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InvalidArgument("empty distribution");
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidArgument("distribution entries must be finite and non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw InvalidArgument("distribution does not sum to 1 (sum = " +
                          std::to_string(sum) + ")");
  }
}

std::vector<double> log_softmax(std::span<const double> z, double tau) {
  require_nonempty(z);
  require_finite(z, "logits");
  require_tau(tau);
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = (z[i] - zmax) / tau;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (double& v : out) v -= lse;
  return out;
}

std::vector<double> softmax_probs(std::span<const double> z, double tau) {
  std::vector<double> out = log_softmax(z, tau);
  for (double& v : out) v = std::exp(v);
  return out;
}

double entropy_of_logits(std::span<const double> z, double tau) {
  const std::vector<double> logp = log_softmax(z, tau);
  double h = 0.0;
  for (double lp : logp) h -= std::exp(lp) * lp;
  return std::max(h, 0.0);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax of empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double kl_divergence_logits(std::span<const double> p_logits,
                            std::span<const double> q_logits) {
  if (p_logits.size() != q_logits.size()) {
    throw ValidationError("KL between distributions of different vocabulary sizes");
  }
  const std::vector<double> logp = log_softmax(p_logits);
  const std::vector<double> logq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    kl += std::exp(logp[i]) * (logp[i] - logq[i]);
  }
  return std::max(kl, 0.0);
}

std::vector<double> kl_grad_logits(std::span<const double> z,
                                   std::span<const double> q_logits) {
  if (z.size() != q_logits.size()) {
    throw ValidationError("KL between distributions of different vocabulary sizes");
  }
  const std::vector<double> logp = log_softmax(z);
  const std::vector<double> logq = log_softmax(q_logits);
  std::vector<double> grad(z.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    grad[i] = logp[i] - logq[i];
    kl += std::exp(logp[i]) * grad[i];
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    grad[i] = std::exp(logp[i]) * (grad[i] - kl);
  }
  return grad;
}

Distribution softmax(const LogitVector& z, double tau) {
  return Distribution(Distribution::Unchecked{}, softmax_probs(z.values(), tau));
}

double entropy(const Distribution& p) {
  double h = 0.0;
  for (double pi : p.probs()) {
    if (pi > 0.0) h -= pi * std::log(pi);
  }
  return std::max(h, 0.0);
}

std::vector<double> entropy_grad_logits(std::span<const double> z) {
  const std::vector<double> logp = log_softmax(z);
  double h = 0.0;
  for (double lp : logp) h -= std::exp(lp) * lp;
  std::vector<double> grad(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    grad[i] = -std::exp(logp[i]) * (logp[i] + h);
  }
  return grad;
}

double entropy_descent_step_inplace(std::span<double> z, double eta) {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw InvalidArgument("step size must be a positive finite number");
  }
  const std::vector<double> logp = log_softmax(z);
  double h = 0.0;
  for (double lp : logp) h -= std::exp(lp) * lp;
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] += eta * std::exp(logp[i]) * (logp[i] + h);
  }
  return std::max(h, 0.0);
}

LogitVector entropy_descent_step(const LogitVector& z, double eta) {
  std::vector<double> y(z.values().begin(), z.values().end());
  entropy_descent_step_inplace(y, eta);
  return LogitVector(std::move(y));
}

}  // namespace emdk
