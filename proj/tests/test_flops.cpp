#include <doctest.h>

#include <numeric>

#include "emdk/em_rl.hpp"
#include "emdk/error.hpp"
#include "emdk/experiment.hpp"
#include "emdk/flops.hpp"
#include "oracles.hpp"

using namespace emdk;
using doctest::Approx;

TEST_SUITE("flops") {
  TEST_CASE("inference cost") {
    CHECK(flops_inference(1, 1) == 2.0);
    CHECK(flops_inference(7e9, 4096) == Approx(5.7344e13).epsilon(1e-12));
    CHECK(flops_inference(7e9, 0) == 0.0);
    CHECK(flops_training(3, 5) == 90.0);
  }

  TEST_CASE("per-step training cost") {
    CHECK(flops_train_step(FlopsMethod::emft, 1, 1) == 8.0);
    CHECK(flops_train_step(FlopsMethod::emrl_like, 1, 1) == 40.0);
    CHECK(flops_train_step(FlopsMethod::emft, 7e9, 4096.0 * 512.0) == Approx(1.1744e17).epsilon(1e-4));
    CHECK(flops_train_step(FlopsMethod::emft, 7e9, 4096.0 * 512.0) == 8.0 * 7e9 * 4096.0 * 512.0);
    CHECK_THROWS_AS(flops_train_step(FlopsMethod::inference, 1, 1), InvalidArgument);
  }

  TEST_CASE("invalid counts and names") {
    CHECK_THROWS_AS(flops_inference(-1, 1), InvalidArgument);
    CHECK_THROWS_AS(flops_train_step(FlopsMethod::emft, 1, -5), InvalidArgument);
    CHECK_THROWS_AS(parse_flops_method("grpo"), InvalidArgument);
    for (FlopsMethod m : {FlopsMethod::emft, FlopsMethod::emrl_like, FlopsMethod::inference})
      CHECK(parse_flops_method(to_string(m)) == m);
  }

  TEST_CASE("run aggregation") {
    CHECK(flops_run(FlopsMethod::emft, 1e9, std::vector<double>{}).total == 0.0);
    const std::vector<double> equal(40, 4096.0);
    const auto r = flops_run(FlopsMethod::emft, 7e9, equal);
    CHECK(r.total == 40.0 * flops_train_step(FlopsMethod::emft, 7e9, 4096.0));
    CHECK(r.per_step.size() == 40u);
    CHECK(r.tokens == 40.0 * 4096.0);
    const auto inf = flops_run(FlopsMethod::inference, 10, std::vector<double>{1, 2, 3});
    CHECK(inf.total == 2.0 * 10 * 6);
  }

  TEST_CASE("toy EM-RL run total equals the recomputed sum") {
    const auto policy = oracle::random_policy(4, 3, 4, 3);
    EmRlConfig cfg;
    cfg.steps = 15;
    const std::vector<PromptId> prompts{0, 1, 2, 3};
    const auto res = emrl_train(policy, prompts, cfg);
    std::vector<double> tokens;
    double want = 0.0;
    const double p = parameter_count(policy);
    CHECK(p == 4.0 * 13.0 * 4.0);
    for (const auto& h : res.history) {
      tokens.push_back(static_cast<double>(h.tokens));
      want += 40.0 * p * static_cast<double>(h.tokens);
    }
    CHECK(flops_run(FlopsMethod::emrl_like, p, tokens).total == want);
  }

  TEST_CASE("property: linearity and the 5x ratio on integer inputs") {
    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
      const double p = static_cast<double>(1 + rng.below(1000000));
      const double n = static_cast<double>(rng.below(100000));
      const double k = static_cast<double>(1 + rng.below(9));
      const double ft = flops_train_step(FlopsMethod::emft, p, n);
      CHECK(flops_train_step(FlopsMethod::emrl_like, p, n) == 5.0 * ft);
      CHECK(flops_train_step(FlopsMethod::emft, k * p, n) == k * ft);
      CHECK(flops_train_step(FlopsMethod::emft, p, k * n) == k * ft);
      CHECK(flops_inference(p, n) + flops_inference(p, k) == flops_inference(p, n + k));
      CHECK(flops_training(p, n) == 3.0 * flops_inference(p, n));
    }
  }
}
