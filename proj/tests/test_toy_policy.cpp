#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "emdk/error.hpp"
#include "emdk/prob_core.hpp"
#include "emdk/toy_policy.hpp"
#include "oracles.hpp"

using namespace emdk;
using doctest::Approx;

namespace {

// root -> 0, [0] -> 1, anything else -> EOS
TabularPolicy chain_policy(int vocab, int max_len, double margin) {
  BiasedInit init;
  init.margin = margin;
  init.target = [vocab](PromptId, std::span<const Symbol> prefix) -> Symbol {
    if (prefix.empty()) return 0;
    if (prefix.size() == 1) return 1;
    return vocab - 1;
  };
  return new_policy(PolicyShape{vocab, max_len, 2}, init, 1);
}

}  // namespace

TEST_SUITE("toy_policy") {
  TEST_CASE("uniform init gives uniform rows") {
    const auto policy = new_policy(PolicyShape{4, 3, 2}, UniformInit{}, 0);
    for_each_prefix(policy, 1, [&](std::span<const Symbol> prefix, double) {
      CHECK(entropy_of_logits(policy.row(1, prefix)) == Approx(std::log(4.0)).epsilon(1e-15));
    });
  }

  TEST_CASE("biased init puts the argmax on the target") {
    const auto policy = chain_policy(5, 3, 2.0);
    const auto& table = policy.params();
    for (std::size_t r = 0; r < table.rows_per_prompt(); ++r) {
      const auto prefix = table.prefix_of(r);
      const std::size_t want = prefix.empty() ? 0 : prefix.size() == 1 ? 1 : 4;
      const auto row = policy.row(0, prefix);
      CHECK(argmax(row) == want);
      double runner_up = -1e300;
      for (std::size_t i = 0; i < row.size(); ++i)
        if (i != want) runner_up = std::max(runner_up, row[i]);
      CHECK(row[want] - runner_up == Approx(2.0).epsilon(1e-12));
    }
  }

  TEST_CASE("random init is deterministic per seed") {
    const auto a = oracle::random_policy(4, 3, 3, 42);
    const auto b = oracle::random_policy(4, 3, 3, 42);
    const auto c = oracle::random_policy(4, 3, 3, 43);
    CHECK(a == b);
    CHECK_FALSE(a == c);
  }

  TEST_CASE("shape validation and enumeration cap") {
    CHECK_THROWS_AS(new_policy(PolicyShape{1, 3, 1}, UniformInit{}, 0), ConfigError);
    CHECK_THROWS_AS(new_policy(PolicyShape{3, 0, 1}, UniformInit{}, 0), ConfigError);
    CHECK_THROWS_AS(new_policy(PolicyShape{3, 2, 0}, UniformInit{}, 0), ConfigError);
    CHECK_THROWS_AS(new_policy(PolicyShape{20, 5, 1}, UniformInit{}, 0), ConfigError);
    const auto big = new_policy(PolicyShape{20, 5, 1}, UniformInit{}, 0, false);
    CHECK_FALSE(big.enumerable());
    CHECK_THROWS_AS(enumerate_trajectories(big, 0), ConfigError);
    Rng rng(1);
    CHECK(sample_trajectory(big, 0, rng).size() <= 5);
  }

  TEST_CASE("deterministic policy samples its greedy trajectory") {
    const auto policy = chain_policy(4, 3, 40.0);
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
      const auto t = sample_trajectory(policy, 0, rng);
      CHECK(t.tokens == std::vector<Symbol>{0, 1, 3});
      CHECK(t.total_logprob() == Approx(0.0).epsilon(1e-12));
      CHECK(t.ended_with_eos);
    }
    CHECK(greedy_trajectory(policy, 1).tokens == std::vector<Symbol>{0, 1, 3});
    const auto all = enumerate_trajectories(policy, 0);
    double top = 0.0;
    for (const auto& w : all) top = std::max(top, w.probability);
    CHECK(top == Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("uniform policy log probability of a length-3 trajectory") {
    const auto policy = new_policy(PolicyShape{4, 3, 1}, UniformInit{}, 0);
    const Trajectory t = oracle::to_trajectory(policy, 0, {0, 1, 2});
    CHECK(log_prob(policy, t) == Approx(-4.158883).epsilon(1e-6));
    CHECK(log_prob(policy, t) == Approx(3.0 * std::log(0.25)).epsilon(1e-15));
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      const auto s = sample_trajectory(policy, 0, rng);
      if (s.size() == 3 && !s.ended_with_eos) CHECK(s.total_logprob() == Approx(3 * std::log(0.25)));
    }
  }

  TEST_CASE("trajectory invariants and step records") {
    const auto policy = oracle::random_policy(5, 4, 2, 3);
    for (std::uint64_t i = 0; i < 200; ++i) {
      const auto t = sample_trajectory(policy, 1, StreamKey{5, 0, 1, i});
      CHECK(t.step_logprobs.size() == t.size());
      CHECK(t.step_entropies.size() == t.size());
      CHECK(t.total_logprob() <= 0.0);
      CHECK(t.total_logprob() == Approx(log_prob(policy, t)).epsilon(1e-12));
      const auto ref = oracle::to_trajectory(policy, 1, t.tokens);
      for (std::size_t k = 0; k < t.size(); ++k) {
        CHECK(t.step_logprobs[k] == Approx(ref.step_logprobs[k]).epsilon(1e-12));
        CHECK(t.step_entropies[k] == Approx(ref.step_entropies[k]).epsilon(1e-12));
      }
      CHECK((t.ended_with_eos || t.size() == 4u));
    }
  }

  TEST_CASE("sampling is reproducible per stream and across workers") {
    const auto policy = oracle::random_policy(4, 3, 3, 8);
    const StreamKey key{77, 3, 2, 5};
    CHECK(sample_trajectory(policy, 2, key) == sample_trajectory(policy, 2, key));
    const auto serial = sample_rollouts(policy, 2, 64, StreamKey{77, 3, 0, 0}, 1);
    const auto parallel = sample_rollouts(policy, 2, 64, StreamKey{77, 3, 0, 0}, 4);
    CHECK(serial == parallel);
    CHECK(serial[5] == sample_trajectory(policy, 2, StreamKey{77, 3, 2, 5}));
  }

  TEST_CASE("unknown prompt is a lookup error") {
    const auto policy = oracle::random_policy(3, 2, 2, 1);
    Rng rng(1);
    CHECK_THROWS_AS(sample_trajectory(policy, 2, rng), LookupError);
    CHECK_THROWS_AS(sample_trajectory(policy, -1, rng), LookupError);
    CHECK_THROWS_AS(enumerate_trajectories(policy, 5), LookupError);
  }

  TEST_CASE("enumeration of V=2, L=2") {
    const auto policy = oracle::random_policy(2, 2, 1, 4);
    const auto all = enumerate_trajectories(policy, 0);
    CHECK(all.size() <= 4u);
    CHECK(all.size() == 3u);
    double total = 0.0;
    for (const auto& w : all) total += w.probability;
    CHECK(total == Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("enumeration matches the independent tree walk and is prefix free") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto policy = oracle::random_policy(2 + static_cast<int>(seed % 3), 1 + static_cast<int>(seed % 4), 1, seed);
      const auto all = enumerate_trajectories(policy, 0);
      const auto ref = oracle::leaves(policy, 0);
      REQUIRE(all.size() == ref.size());
      std::map<std::vector<Symbol>, double> want;
      for (const auto& l : ref) want[l.tokens] = l.prob;
      double total = 0.0;
      for (const auto& w : all) {
        REQUIRE(want.count(w.trajectory.tokens) == 1);
        CHECK(w.probability == Approx(want[w.trajectory.tokens]).epsilon(1e-12));
        total += w.probability;
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
      for (const auto& a : all)
        for (const auto& b : all) {
          const auto& x = a.trajectory.tokens;
          const auto& y = b.trajectory.tokens;
          if (x.size() < y.size()) CHECK_FALSE(std::equal(x.begin(), x.end(), y.begin()));
        }
    }
  }

  TEST_CASE("property: sampled frequencies pass a chi-square test") {
    const auto policy = oracle::random_policy(3, 3, 1, 2024);
    const auto all = enumerate_trajectories(policy, 0);
    std::map<std::vector<Symbol>, std::size_t> index;
    for (std::size_t i = 0; i < all.size(); ++i) index[all[i].trajectory.tokens] = i;
    const int n = 100000;
    std::vector<double> counts(all.size(), 0.0);
    const auto samples = sample_rollouts(policy, 0, n, StreamKey{99, 0, 0, 0}, 4);
    for (const auto& t : samples) counts[index.at(t.tokens)] += 1.0;
    double stat = 0.0;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const double expected = n * all[i].probability;
      stat += (counts[i] - expected) * (counts[i] - expected) / expected;
    }
    const boost::math::chi_squared dist(static_cast<double>(all.size() - 1));
    const double p_value = boost::math::cdf(boost::math::complement(dist, stat));
    CHECK(p_value > 0.001);
  }

  TEST_CASE("logprob gradient closed form") {
    const auto policy = new_policy(PolicyShape{4, 2, 1}, UniformInit{}, 0);
    const Trajectory t = oracle::to_trajectory(policy, 0, {0, 3});
    const auto g = logprob_grad(policy, t);
    const auto root = g.row(0, std::span<const Symbol>{});
    CHECK(root[0] == Approx(0.75));
    for (int i = 1; i < 4; ++i) CHECK(root[i] == Approx(-0.25));
    const std::vector<Symbol> visited{0};
    const auto second = g.row(0, visited);
    CHECK(second[3] == Approx(0.75));
    const std::vector<Symbol> unvisited{1};
    for (double v : g.row(0, unvisited)) CHECK(v == 0.0);
  }

  TEST_CASE("logprob gradient matches finite differences") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto policy = oracle::random_policy(2 + static_cast<int>(seed % 9), 3, 2, seed);
      const auto t = sample_trajectory(policy, static_cast<PromptId>(seed % 2), StreamKey{seed});
      const auto g = logprob_grad(policy, t);
      auto params = policy.params().values();
      const auto fd = oracle::fd_gradient(params, [&] { return log_prob(policy, t); });
      worst = std::max(worst, oracle::max_abs_diff(g.values(), fd));
      for (std::size_t r = 0; r < g.row_count(); ++r) {
        double s = 0.0;
        for (double v : g.row(r)) s += v;
        CHECK(std::abs(s) < 1e-9);
      }
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("step entropy gradient") {
    const auto uniform = new_policy(PolicyShape{5, 2, 1}, UniformInit{}, 0);
    for (double v : step_entropy_grad(uniform, 0, {})) CHECK(std::abs(v) < 1e-15);

    auto policy = oracle::random_policy(6, 3, 1, 12);
    const std::vector<Symbol> prefix{2, 1};
    const auto g = step_entropy_grad(policy, 0, prefix);
    auto row = policy.row(0, prefix);
    std::vector<double> z(row.begin(), row.end());
    const auto fd = oracle::fd_gradient(z, [&] { return oracle::row_entropy(z); });
    CHECK(oracle::max_abs_diff(g, fd) < 1e-6);

    const auto det = chain_policy(4, 3, 30.0);
    double norm = 0.0;
    for (double v : step_entropy_grad(det, 0, {})) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-6);
  }

  TEST_CASE("trajectory validation") {
    const auto policy = oracle::random_policy(4, 3, 2, 1);
    CHECK_NOTHROW(validate_trajectory(policy, oracle::to_trajectory(policy, 0, {0, 1, 2})));
    Trajectory bad = oracle::to_trajectory(policy, 0, {0, 1});
    bad.tokens[1] = 7;
    CHECK_THROWS_AS(validate_trajectory(policy, bad), ValidationError);
    Trajectory after_eos = oracle::to_trajectory(policy, 0, {3});
    after_eos.tokens.push_back(0);
    after_eos.step_logprobs.push_back(0.0);
    after_eos.step_entropies.push_back(0.0);
    CHECK_THROWS_AS(validate_trajectory(policy, after_eos), ValidationError);
    Trajectory mismatched = oracle::to_trajectory(policy, 0, {0, 1});
    mismatched.step_entropies.pop_back();
    CHECK_THROWS_AS(validate_trajectory(policy, mismatched), ValidationError);
    CHECK_THROWS_AS(logprob_grad(policy, bad), ValidationError);
  }

  TEST_CASE("non-finite parameters are reported") {
    auto policy = oracle::random_policy(3, 2, 2, 1);
    policy.params().values()[7] = std::nan("");
    CHECK_THROWS_AS(policy.check_finite(), NumericError);
  }

  TEST_CASE("policy save and load round trip") {
    const auto policy = oracle::random_policy(5, 3, 3, 6, 2.5);
    std::stringstream buf;
    save_policy(policy, buf);
    const auto loaded = load_policy(buf);
    CHECK(loaded == policy);
    std::stringstream again;
    save_policy(loaded, again);
    std::stringstream first;
    save_policy(policy, first);
    CHECK(again.str() == first.str());

    const auto path = std::filesystem::temp_directory_path() / "emdk_policy_roundtrip.txt";
    save_policy_file(policy, path);
    CHECK(load_policy_file(path) == policy);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_policy_file(path), LookupError);

    std::stringstream garbage("emdk-policy 2\n");
    CHECK_THROWS_AS(load_policy(garbage), Error);
    std::stringstream truncated(first.str().substr(0, first.str().size() / 2));
    CHECK_THROWS_AS(load_policy(truncated), Error);
  }
}
