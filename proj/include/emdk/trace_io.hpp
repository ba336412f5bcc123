#pragma once

// Line-delimited logit traces. The first line of a written trace is the
// header {"format":"emdk-trace","version":1}; each following line is one
// decode step:
//
//   {"stream_id":"s0","step":0,"logits":[...],"chosen_token":3,"vocab_size":5}
//
// chosen_token and vocab_size are optional. Processed traces additionally
// carry entropy_before, entropy_after, and target_reached. Keys are written
// in that fixed order and reals in their shortest round-trip form. Readers
// accept a missing header, ignore unknown keys, and widen every number to
// 64-bit.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emdk/em_inf.hpp"

namespace emdk {

inline constexpr const char* kTraceFormat = "emdk-trace";
inline constexpr int kTraceVersion = 1;

struct TraceRecord {
  std::string stream_id;
  std::int64_t step = 0;
  std::vector<double> logits;
  std::optional<std::int64_t> chosen_token;
  std::optional<std::int64_t> vocab_size;

  std::optional<double> entropy_before;
  std::optional<double> entropy_after;
  std::optional<bool> target_reached;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

/// Streaming reader; validates each record as it is read. Throws ParseError
/// for malformed lines, SequenceError for step gaps or regressions within a
/// stream, and DataError for invalid values.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in);

  std::optional<TraceRecord> next();
  std::size_t line() const noexcept { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
  bool seen_content_ = false;
  std::map<std::string, std::int64_t> next_step_;
};

std::vector<TraceRecord> read_trace(std::istream& in);

/// Writes the header before the first record, so an empty trace is an empty
/// file.
class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& out) : out_(out) {}
  void write(const TraceRecord& record);

 private:
  std::ostream& out_;
  bool header_written_ = false;
};

void write_trace(std::span<const TraceRecord> records, std::ostream& out);

/// One record as a single JSON line, without the trailing newline.
std::string format_trace_record(const TraceRecord& record);

struct ProcessSummary {
  std::size_t records = 0;
  double mean_entropy_before = 0.0;
  double mean_entropy_after = 0.0;
  double mean_entropy_reduction = 0.0;
  double fraction_target_reached = 0.0;
};

struct ProcessOptions {
  AdjustMethod method = AdjustMethod::em_inf;
  EmInfConfig em_inf;
  AdaptiveTempConfig adaptive;
  int workers = 1;
};

/// Adjusts every record's logits and writes them, annotated with the
/// entropies before and after, in input order.
ProcessSummary process_trace(std::istream& in, const ProcessOptions& options,
                             std::ostream& out);

}  // namespace emdk
