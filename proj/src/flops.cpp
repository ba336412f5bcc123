#include "emdk/flops.hpp"

#include <cmath>

#include "emdk/error.hpp"

namespace emdk {
namespace {

void require_counts(double params, double tokens) {
  if (!(params >= 0.0) || !(tokens >= 0.0) || !std::isfinite(params) || !std::isfinite(tokens)) {
    throw InvalidArgument("parameter and token counts must be finite and non-negative");
  }
}

}  // namespace

std::string_view to_string(FlopsMethod method) {
  switch (method) {
    case FlopsMethod::emft:
      return "emft";
    case FlopsMethod::emrl_like:
      return "emrl_like";
    case FlopsMethod::inference:
      return "inference";
  }
  return "unknown";
}

FlopsMethod parse_flops_method(std::string_view name) {
  if (name == "emft") return FlopsMethod::emft;
  if (name == "emrl_like" || name == "emrl") return FlopsMethod::emrl_like;
  if (name == "inference") return FlopsMethod::inference;
  throw InvalidArgument("unknown FLOPs method '" + std::string(name) + "'");
}

double flops_inference(double params, double tokens) {
  require_counts(params, tokens);
  return 2.0 * params * tokens;
}

double flops_training(double params, double tokens) {
  require_counts(params, tokens);
  return 6.0 * params * tokens;
}

double flops_train_step(FlopsMethod method, double params, double tokens_this_step) {
  require_counts(params, tokens_this_step);
  switch (method) {
    case FlopsMethod::emft:
      // 2Pn sampling + 6Pn training
      return 8.0 * params * tokens_this_step;
    case FlopsMethod::emrl_like:
      // 8Pn rollouts + 8Pn reference pass + 24Pn training
      return 40.0 * params * tokens_this_step;
    case FlopsMethod::inference:
      break;
  }
  throw InvalidArgument("'" + std::string(to_string(method)) + "' is not a training method");
}

FlopsReport flops_run(FlopsMethod method, double params,
                      std::span<const double> per_step_token_counts) {
  FlopsReport report;
  report.params = params;
  report.method = method;
  for (double n : per_step_token_counts) {
    const double cost = method == FlopsMethod::inference ? flops_inference(params, n)
                                                         : flops_train_step(method, params, n);
    report.per_step.push_back(cost);
    report.tokens += n;
    report.total += cost;
  }
  return report;
}

}  // namespace emdk
