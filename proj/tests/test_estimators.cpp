#include <doctest.h>

#include <cmath>

#include "emdk/error.hpp"
#include "emdk/estimators.hpp"
#include "oracles.hpp"

using namespace emdk;
using doctest::Approx;

namespace {

TabularPolicy deterministic(int vocab, int max_len) {
  BiasedInit init;
  init.margin = 60.0;
  init.target = [](PromptId p, std::span<const Symbol> prefix) -> Symbol {
    return static_cast<Symbol>((p + prefix.size()) % 3);
  };
  return new_policy(PolicyShape{vocab, max_len, 2}, init, 0);
}

}  // namespace

TEST_SUITE("estimators") {
  TEST_CASE("deterministic policy has zero entropy everywhere") {
    const auto policy = deterministic(4, 3);
    const auto samples = sample_rollouts(policy, 1, 16, StreamKey{1}, 1);
    CHECK(traj_entropy_estimate(samples).nats == Approx(0.0).epsilon(1e-12));
    CHECK(token_entropy_estimate(samples).nats == Approx(0.0).epsilon(1e-12));
    CHECK(exact_traj_entropy(policy, 1) < 1e-12);
    CHECK(exact_token_entropy(policy, 0) < 1e-12);
  }

  TEST_CASE("uniform V=4 length-3 trajectories") {
    const auto policy = new_policy(PolicyShape{4, 3, 1}, UniformInit{}, 0);
    std::vector<Trajectory> len3;
    for (const auto& w : enumerate_trajectories(policy, 0))
      if (w.trajectory.size() == 3) len3.push_back(w.trajectory);
    REQUIRE(len3.size() == 36u);
    const auto traj = traj_entropy_estimate(len3);
    const auto tok = token_entropy_estimate(len3);
    CHECK(traj.nats == Approx(4.158883).epsilon(1e-6));
    CHECK(tok.nats == Approx(3.0 * std::log(4.0)).epsilon(1e-14));
    CHECK(traj.kind == EstimatorKind::trajectory);
    CHECK(tok.kind == EstimatorKind::token);
    CHECK(tok.n_samples == 36u);
    CHECK(traj.std_error == Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("empty input is rejected") {
    const std::vector<Trajectory> none;
    CHECK_THROWS_AS(traj_entropy_estimate(none), InvalidArgument);
    CHECK_THROWS_AS(token_entropy_estimate(none), InvalidArgument);
  }

  TEST_CASE("exact entropy of uniform V=2, L=1") {
    const auto policy = new_policy(PolicyShape{2, 1, 1}, UniformInit{}, 0);
    CHECK(exact_traj_entropy(policy, 0) == Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(exact_traj_entropy(policy, 0) == Approx(0.693147).epsilon(1e-6));
  }

  TEST_CASE("exact entropies match the independent enumeration") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto policy = oracle::random_policy(2 + static_cast<int>(seed % 3),
                                                1 + static_cast<int>(seed % 4), 2, seed, 1.5);
      CHECK(exact_traj_entropy(policy, 1) == Approx(oracle::traj_entropy(policy, 1)).epsilon(1e-12));
      CHECK(exact_token_entropy(policy, 1) == Approx(oracle::token_entropy(policy, 1)).epsilon(1e-12));
    }
  }

  TEST_CASE("uniform token entropy is expected length times ln V") {
    for (int v = 2; v <= 5; ++v)
      for (int l = 1; l <= 4; ++l) {
        const auto policy = new_policy(PolicyShape{v, l, 1}, UniformInit{}, 0);
        double len = 0.0;
        for (const auto& leaf : oracle::leaves(policy, 0)) len += leaf.prob * leaf.tokens.size();
        CHECK(expected_length(policy, 0) == Approx(len).epsilon(1e-12));
        CHECK(exact_token_entropy(policy, 0) == Approx(len * std::log(v)).epsilon(1e-12));
      }
  }

  TEST_CASE("trajectory entropy never exceeds token entropy") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto policy = oracle::random_policy(2 + static_cast<int>(seed % 3), 1 + static_cast<int>(seed % 4),
                                                1, 1000 + seed, 2.0);
      CHECK(exact_traj_entropy(policy, 0) <= exact_token_entropy(policy, 0) + 1e-9);
    }
  }

  TEST_CASE("trajectory count bounds both entropies") {
    CHECK(trajectory_count(PolicyShape{4, 3, 1}) == 40u);
    CHECK(trajectory_count(PolicyShape{2, 2, 1}) == 3u);
    CHECK(trajectory_count(PolicyShape{2, 1, 1}) == 2u);
    const auto policy = new_policy(PolicyShape{4, 3, 1}, UniformInit{}, 0);
    CHECK(exact_token_entropy(policy, 0) <= std::log(40.0) + 1e-12);
  }

  TEST_CASE("property: probability-weighted per-trajectory statistics are unbiased") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto policy = oracle::random_policy(2 + static_cast<int>(seed % 3), 1 + static_cast<int>(seed % 4),
                                                1, 500 + seed);
      double traj = 0.0, tok = 0.0;
      for (const auto& w : enumerate_trajectories(policy, 0)) {
        traj += w.probability * traj_entropy_estimate(std::span(&w.trajectory, 1)).nats;
        tok += w.probability * token_entropy_estimate(std::span(&w.trajectory, 1)).nats;
      }
      CHECK(std::abs(traj - exact_traj_entropy(policy, 0)) < 1e-9);
      CHECK(std::abs(tok - exact_token_entropy(policy, 0)) < 1e-9);
    }
  }

  TEST_CASE("property: sampled estimates are within 3 standard errors") {
    const auto policy = oracle::random_policy(4, 3, 1, 77);
    const auto samples = sample_rollouts(policy, 0, 100000, StreamKey{5}, 4);
    const auto traj = traj_entropy_estimate(samples);
    const auto tok = token_entropy_estimate(samples);
    CHECK(std::abs(traj.nats - exact_traj_entropy(policy, 0)) < 3.0 * traj.std_error);
    CHECK(std::abs(tok.nats - exact_token_entropy(policy, 0)) < 3.0 * tok.std_error);
  }

  TEST_CASE("property: standard error shrinks as 1/sqrt(N)") {
    const auto policy = oracle::random_policy(4, 3, 1, 78);
    double scaled[3];
    int k = 0;
    for (int n : {100, 1000, 10000}) {
      const auto samples = sample_rollouts(policy, 0, n, StreamKey{6, static_cast<std::uint64_t>(n)}, 2);
      scaled[k++] = traj_entropy_estimate(samples).std_error * std::sqrt(static_cast<double>(n));
    }
    CHECK(scaled[1] / scaled[0] == Approx(1.0).epsilon(0.25));
    CHECK(scaled[2] / scaled[1] == Approx(1.0).epsilon(0.25));
  }

  TEST_CASE("both entropies vanish only for deterministic trees") {
    const auto policy = oracle::random_policy(3, 2, 1, 9);
    CHECK(exact_traj_entropy(policy, 0) > 1e-3);
    CHECK(exact_token_entropy(policy, 0) > 1e-3);
  }

  TEST_CASE("per-token mean diagnostic") {
    const auto policy = new_policy(PolicyShape{3, 3, 1}, UniformInit{}, 0);
    const auto samples = sample_rollouts(policy, 0, 50, StreamKey{8}, 1);
    CHECK(token_entropy_per_token_mean(samples) == Approx(std::log(3.0)).epsilon(1e-14));
  }

  TEST_CASE("means over prompts") {
    const auto policy = oracle::random_policy(3, 3, 4, 10);
    double traj = 0.0, tok = 0.0;
    for (PromptId p = 0; p < 4; ++p) {
      traj += exact_traj_entropy(policy, p) / 4.0;
      tok += exact_token_entropy(policy, p) / 4.0;
    }
    CHECK(mean_exact_traj_entropy(policy) == Approx(traj).epsilon(1e-14));
    CHECK(mean_exact_token_entropy(policy) == Approx(tok).epsilon(1e-14));
  }
}
