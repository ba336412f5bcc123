#pragma once

// Analytic FLOPs accounting: 2PD for inference, 6PD for training, 8Pn per
// EM-FT step (one sampled trajectory plus training) and 40Pn per RL-style
// step (four rollouts, a reference-model pass, and training). P is the
// parameter count; D and n are realized generated tokens.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace emdk {

enum class FlopsMethod { emft, emrl_like, inference };

std::string_view to_string(FlopsMethod method);
/// Throws InvalidArgument for unknown names.
FlopsMethod parse_flops_method(std::string_view name);

struct FlopsReport {
  double params = 0.0;
  double tokens = 0.0;  // total over the run
  std::vector<double> per_step;
  double total = 0.0;
  FlopsMethod method = FlopsMethod::emft;
};

/// 2 * P * D.
double flops_inference(double params, double tokens);

/// 6 * P * D.
double flops_training(double params, double tokens);

/// 8 * P * n for emft, 40 * P * n for emrl_like; InvalidArgument otherwise.
double flops_train_step(FlopsMethod method, double params, double tokens_this_step);

/// Per-step costs and their sum; inference runs use 2PD per step.
FlopsReport flops_run(FlopsMethod method, double params,
                      std::span<const double> per_step_token_counts);

}  // namespace emdk
