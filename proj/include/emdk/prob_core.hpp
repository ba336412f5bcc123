#pragma once

// Probability kernels over a single logit vector: softmax, Shannon entropy,
// the entropy gradient with respect to the logits, and one entropy-descent
// step. Everything is in nats and 64-bit floating point.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace emdk {

/// Unnormalized scores over a vocabulary of at least two symbols. All entries
/// are finite; construction throws InvalidArgument otherwise.
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> values);
  LogitVector(std::initializer_list<double> values)
      : LogitVector(std::vector<double>(values)) {}

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  std::vector<double> release() && noexcept { return std::move(values_); }

  friend bool operator==(const LogitVector&, const LogitVector&) = default;

 private:
  std::vector<double> values_;
};

/// Probability vector summing to one (within 1e-9).
class Distribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Validates non-negativity and normalization.
  explicit Distribution(std::vector<double> probs);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const noexcept { return probs_[i]; }

 private:
  struct Unchecked {};
  Distribution(Unchecked, std::vector<double> probs) : probs_(std::move(probs)) {}
  friend Distribution softmax(const LogitVector&, double);

  std::vector<double> probs_;
};

// ---------------------------------------------------------------------------
// Span kernels. These validate finiteness and tau but not vocabulary size, so
// they can be used on raw table rows.
// ---------------------------------------------------------------------------

/// log softmax(z / tau), computed after subtracting the max logit.
std::vector<double> log_softmax(std::span<const double> z, double tau = 1.0);

/// softmax(z / tau).
std::vector<double> softmax_probs(std::span<const double> z, double tau = 1.0);

/// Entropy of softmax(z / tau) in nats, computed from log-probabilities.
double entropy_of_logits(std::span<const double> z, double tau = 1.0);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);

/// KL(softmax(p_logits) || softmax(q_logits)), exact over the vocabulary.
double kl_divergence_logits(std::span<const double> p_logits,
                            std::span<const double> q_logits);

/// Gradient of KL(softmax(z) || softmax(q_logits)) with respect to z:
/// p_i * ((ln p_i - ln q_i) - KL).
std::vector<double> kl_grad_logits(std::span<const double> z,
                                   std::span<const double> q_logits);

// ---------------------------------------------------------------------------
// Typed operations.
// ---------------------------------------------------------------------------

/// softmax(z / tau). Throws InvalidArgument when tau <= 0 or not finite.
Distribution softmax(const LogitVector& z, double tau = 1.0);

/// -sum p ln p with 0 ln 0 = 0.
double entropy(const Distribution& p);

/// dH(softmax(z))/dz_i = -p_i (ln p_i + H). Entries sum to zero.
std::vector<double> entropy_grad_logits(std::span<const double> z);
inline std::vector<double> entropy_grad_logits(const LogitVector& z) {
  return entropy_grad_logits(z.values());
}

/// One gradient-descent step on entropy: y_i = z_i + eta * p_i (ln p_i + H).
/// Preserves the argmax for every eta > 0.
LogitVector entropy_descent_step(const LogitVector& z, double eta);

/// In-place variant used by the adjusters; returns the entropy of the input.
double entropy_descent_step_inplace(std::span<double> z, double eta);

}  // namespace emdk
