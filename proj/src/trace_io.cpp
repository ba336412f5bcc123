#include "emdk/trace_io.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "emdk/error.hpp"
#include "emdk/format.hpp"
#include "emdk/parallel.hpp"

namespace emdk {
namespace {

using nlohmann::json;

bool is_header(const json& j) { return j.is_object() && j.contains("format"); }

std::int64_t require_int(const json& j, const char* key, std::size_t line) {
  if (!j.is_number_integer()) {
    throw ParseError(std::string("'") + key + "' must be an integer", line);
  }
  return j.get<std::int64_t>();
}

double read_logit(const json& v, std::size_t index, std::size_t line) {
  if (v.is_number()) {
    const double d = v.get<double>();
    if (!std::isfinite(d)) {
      throw DataError("non-finite logit at index " + std::to_string(index), line);
    }
    return d;
  }
  if (v.is_null() || v.is_string()) {
    throw DataError("non-finite logit at index " + std::to_string(index), line);
  }
  throw ParseError("logits must be numbers", line);
}

}  // namespace

TraceReader::TraceReader(std::istream& in) : in_(in) {}

std::optional<TraceRecord> TraceReader::next() {
  std::string text;
  while (std::getline(in_, text)) {
    ++line_;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;

    json j;
    try {
      j = json::parse(text);
    } catch (const json::out_of_range& e) {
      throw DataError(std::string("non-finite number: ") + e.what(), line_);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_);
    }
    if (!j.is_object()) throw ParseError("record is not an object", line_);

    if (is_header(j)) {
      if (seen_content_) throw ParseError("header must be the first line", line_);
      if (j["format"] != kTraceFormat || !j.contains("version") ||
          j["version"] != kTraceVersion) {
        throw ParseError("unsupported trace header", line_);
      }
      seen_content_ = true;
      continue;
    }
    seen_content_ = true;

    TraceRecord rec;
    if (!j.contains("stream_id") || !j["stream_id"].is_string()) {
      throw ParseError("missing string 'stream_id'", line_);
    }
    rec.stream_id = j["stream_id"].get<std::string>();
    if (!j.contains("step")) throw ParseError("missing 'step'", line_);
    rec.step = require_int(j["step"], "step", line_);
    if (!j.contains("logits") || !j["logits"].is_array()) {
      throw ParseError("missing array 'logits'", line_);
    }
    const auto& logits = j["logits"];
    rec.logits.reserve(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      rec.logits.push_back(read_logit(logits[i], i, line_));
    }
    if (rec.logits.size() < 2) throw DataError("a record needs at least two logits", line_);

    if (j.contains("vocab_size")) {
      rec.vocab_size = require_int(j["vocab_size"], "vocab_size", line_);
      if (*rec.vocab_size != static_cast<std::int64_t>(rec.logits.size())) {
        throw DataError("vocab_size " + std::to_string(*rec.vocab_size) +
                            " does not match " + std::to_string(rec.logits.size()) + " logits",
                        line_);
      }
    }
    if (j.contains("chosen_token")) {
      rec.chosen_token = require_int(j["chosen_token"], "chosen_token", line_);
      if (*rec.chosen_token < 0 ||
          *rec.chosen_token >= static_cast<std::int64_t>(rec.logits.size())) {
        throw DataError("chosen_token outside the vocabulary", line_);
      }
    }
    if (j.contains("entropy_before") && j["entropy_before"].is_number()) {
      rec.entropy_before = j["entropy_before"].get<double>();
    }
    if (j.contains("entropy_after") && j["entropy_after"].is_number()) {
      rec.entropy_after = j["entropy_after"].get<double>();
    }
    if (j.contains("target_reached") && j["target_reached"].is_boolean()) {
      rec.target_reached = j["target_reached"].get<bool>();
    }

    auto [it, inserted] = next_step_.try_emplace(rec.stream_id, 0);
    if (rec.step != it->second) {
      throw SequenceError("stream '" + rec.stream_id + "' expected step " +
                              std::to_string(it->second) + ", got " + std::to_string(rec.step),
                          line_);
    }
    ++it->second;
    return rec;
  }
  return std::nullopt;
}

std::vector<TraceRecord> read_trace(std::istream& in) {
  TraceReader reader(in);
  std::vector<TraceRecord> out;
  while (auto rec = reader.next()) out.push_back(std::move(*rec));
  return out;
}

std::string format_trace_record(const TraceRecord& r) {
  std::string s = "{\"stream_id\":";
  s += json(r.stream_id).dump();
  s += ",\"step\":" + std::to_string(r.step);
  s += ",\"logits\":[";
  for (std::size_t i = 0; i < r.logits.size(); ++i) {
    if (i) s += ',';
    s += format_real(r.logits[i]);
  }
  s += ']';
  if (r.chosen_token) s += ",\"chosen_token\":" + std::to_string(*r.chosen_token);
  if (r.vocab_size) s += ",\"vocab_size\":" + std::to_string(*r.vocab_size);
  if (r.entropy_before) s += ",\"entropy_before\":" + format_real(*r.entropy_before);
  if (r.entropy_after) s += ",\"entropy_after\":" + format_real(*r.entropy_after);
  if (r.target_reached) s += std::string(",\"target_reached\":") + (*r.target_reached ? "true" : "false");
  s += '}';
  return s;
}

void TraceWriter::write(const TraceRecord& record) {
  if (!header_written_) {
    out_ << "{\"format\":\"" << kTraceFormat << "\",\"version\":" << kTraceVersion << "}\n";
    header_written_ = true;
  }
  out_ << format_trace_record(record) << '\n';
  if (!out_) throw Error("failed to write trace record");
}

void write_trace(std::span<const TraceRecord> records, std::ostream& out) {
  TraceWriter writer(out);
  for (const auto& r : records) writer.write(r);
}

ProcessSummary process_trace(std::istream& in, const ProcessOptions& options,
                             std::ostream& out) {
  if (options.method == AdjustMethod::em_inf) options.em_inf.validate();
  if (options.method == AdjustMethod::adaptive_temp) options.adaptive.validate();

  std::vector<TraceRecord> records = read_trace(in);
  std::vector<AdjustResult> results(records.size());
  parallel_for(records.size(), options.workers, [&](std::size_t i) {
    results[i] = apply_adjustment(LogitVector(records[i].logits), options.method,
                                  options.em_inf, options.adaptive);
  });

  ProcessSummary summary;
  summary.records = records.size();
  TraceWriter writer(out);
  std::size_t reached = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& rec = records[i];
    const auto& res = results[i];
    rec.logits = res.adjusted;
    rec.entropy_before = res.entropy_before;
    rec.entropy_after = res.entropy_after;
    rec.target_reached = res.target_reached;
    writer.write(rec);
    summary.mean_entropy_before += res.entropy_before;
    summary.mean_entropy_after += res.entropy_after;
    if (res.target_reached) ++reached;
  }
  if (!records.empty()) {
    const double n = static_cast<double>(records.size());
    summary.mean_entropy_before /= n;
    summary.mean_entropy_after /= n;
    summary.fraction_target_reached = static_cast<double>(reached) / n;
  }
  summary.mean_entropy_reduction = summary.mean_entropy_before - summary.mean_entropy_after;
  return summary;
}

}  // namespace emdk
