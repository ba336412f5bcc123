#include "emdk/history.hpp"

#include <ostream>

#include "emdk/error.hpp"
#include "emdk/format.hpp"

namespace emdk {

OutputFormat parse_output_format(std::string_view name) {
  if (name == "csv") return OutputFormat::csv;
  if (name == "jsonl") return OutputFormat::jsonl;
  throw InvalidArgument("unknown output format '" + std::string(name) + "'");
}

std::string_view extension(OutputFormat format) {
  return format == OutputFormat::csv ? "csv" : "jsonl";
}

void write_table(std::ostream& out, OutputFormat format, std::span<const std::string> columns,
                 std::span<const std::vector<std::string>> rows) {
  if (format == OutputFormat::csv) {
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
      out << '\n';
    }
  } else {
    for (const auto& row : rows) {
      out << '{';
      for (std::size_t c = 0; c < row.size(); ++c) {
        out << (c ? "," : "") << '"' << columns[c] << "\":" << row[c];
      }
      out << "}\n";
    }
  }
  if (!out) throw Error("failed to write history");
}

void write_history(std::ostream& out, OutputFormat format, std::span<const EmFtStep> history) {
  const std::vector<std::string> columns{"step", "token_entropy_exact", "objective", "grad_norm",
                                         "argmax_changes", "tokens"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& h : history) {
    rows.push_back({std::to_string(h.step), format_real(h.token_entropy_exact),
                    format_real(h.objective), format_real(h.grad_norm),
                    std::to_string(h.argmax_changes), std::to_string(h.tokens)});
  }
  write_table(out, format, columns, rows);
}

void write_history(std::ostream& out, OutputFormat format, std::span<const EmRlStep> history) {
  const std::vector<std::string> columns{"step",        "traj_entropy_exact",
                                         "token_entropy_exact", "mean_reward",
                                         "grad_norm",   "argmax_changes", "tokens"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& h : history) {
    rows.push_back({std::to_string(h.step), format_real(h.traj_entropy_exact),
                    format_real(h.token_entropy_exact), format_real(h.mean_reward),
                    format_real(h.grad_norm), std::to_string(h.argmax_changes), std::to_string(h.tokens)});
  }
  write_table(out, format, columns, rows);
}

}  // namespace emdk
