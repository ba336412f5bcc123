#pragma once

// Training histories as plot-ready CSV or JSONL.
//
//   EM-FT: step,token_entropy_exact,objective,grad_norm,argmax_changes,tokens
//   EM-RL: step,traj_entropy_exact,token_entropy_exact,mean_reward,grad_norm,argmax_changes,tokens

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emdk/em_ft.hpp"
#include "emdk/em_rl.hpp"

namespace emdk {

enum class OutputFormat { csv, jsonl };

OutputFormat parse_output_format(std::string_view name);
std::string_view extension(OutputFormat format);

/// Cells must already be formatted numbers.
void write_table(std::ostream& out, OutputFormat format, std::span<const std::string> columns,
                 std::span<const std::vector<std::string>> rows);

void write_history(std::ostream& out, OutputFormat format, std::span<const EmFtStep> history);
void write_history(std::ostream& out, OutputFormat format, std::span<const EmRlStep> history);

}  // namespace emdk
