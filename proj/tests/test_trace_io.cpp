#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "emdk/error.hpp"
#include "emdk/trace_io.hpp"
#include "oracles.hpp"

using namespace emdk;
using doctest::Approx;

namespace {

std::string slurp(const std::string& name) {
  std::ifstream in(std::string(EMDK_FIXTURE_DIR) + "/" + name);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<TraceRecord> random_records(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TraceRecord> out;
  std::int64_t steps[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = rng.below(3);
    TraceRecord r;
    r.stream_id = "stream-" + std::to_string(s);
    r.step = steps[s]++;
    r.logits = oracle::random_logits(rng, 2 + rng.below(40), 0.1 + 4.0 * rng.uniform());
    if (i % 2) r.chosen_token = static_cast<std::int64_t>(rng.below(r.logits.size()));
    if (i % 3) r.vocab_size = static_cast<std::int64_t>(r.logits.size());
    out.push_back(std::move(r));
  }
  return out;
}

template <typename E>
std::size_t error_line(const std::string& text) {
  std::istringstream in(text);
  try {
    read_trace(in);
  } catch (const E& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_SUITE("trace_io") {
  TEST_CASE("round trip is value exact") {
    const auto records = random_records(200, 1);
    std::stringstream buf;
    write_trace(records, buf);
    CHECK(read_trace(buf) == records);
  }

  TEST_CASE("empty stream writes nothing") {
    std::stringstream buf;
    write_trace(std::vector<TraceRecord>{}, buf);
    CHECK(buf.str().empty());
    CHECK(read_trace(buf).empty());
  }

  TEST_CASE("interleaved streams keep input order") {
    std::vector<TraceRecord> records(4);
    const char* ids[] = {"x", "y", "x", "y"};
    const std::int64_t steps[] = {0, 0, 1, 1};
    for (int i = 0; i < 4; ++i) {
      records[i].stream_id = ids[i];
      records[i].step = steps[i];
      records[i].logits = {static_cast<double>(i), 0.5};
    }
    std::stringstream buf;
    write_trace(records, buf);
    const auto back = read_trace(buf);
    CHECK(back == records);
  }

  TEST_CASE("written format") {
    TraceRecord r;
    r.stream_id = "q\"1";
    r.step = 0;
    r.logits = {0.1, -2.0, 1e-300};
    r.chosen_token = 2;
    r.vocab_size = 3;
    CHECK(format_trace_record(r) ==
          R"({"stream_id":"q\"1","step":0,"logits":[0.1,-2,1e-300],"chosen_token":2,"vocab_size":3})");
    std::stringstream buf;
    write_trace(std::vector<TraceRecord>{r}, buf);
    CHECK(buf.str().rfind(R"({"format":"emdk-trace","version":1})" "\n", 0) == 0);
  }

  TEST_CASE("V=5 fixture") {
    std::istringstream in(slurp("trace_v5.jsonl"));
    const auto records = read_trace(in);
    REQUIRE(records.size() == 3u);
    for (const auto& r : records) CHECK(r.logits.size() == 5u);
    CHECK(records[0].chosen_token == 4);
    CHECK(records[1].logits[1] == 25.0);
    CHECK_FALSE(records[1].chosen_token.has_value());
    CHECK(records[2].stream_id == "b");
  }

  TEST_CASE("header is optional and unknown keys are ignored") {
    std::istringstream in(R"({"stream_id":"a","step":0,"logits":[1,2],"model":"m","extra":[1]})");
    const auto records = read_trace(in);
    REQUIRE(records.size() == 1u);
    CHECK(records[0].logits == std::vector<double>{1.0, 2.0});
  }

  TEST_CASE("32-bit values are widened") {
    std::istringstream in(R"({"stream_id":"a","step":0,"logits":[0.100000001490116,-1.5]})");
    const auto records = read_trace(in);
    CHECK(records[0].logits[0] == 0.100000001490116);
  }

  TEST_CASE("sequence errors") {
    CHECK(error_line<SequenceError>(
              "{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2]}\n"
              "{\"stream_id\":\"a\",\"step\":2,\"logits\":[1,2]}\n") == 2);
    CHECK(error_line<SequenceError>(
              "{\"format\":\"emdk-trace\",\"version\":1}\n"
              "{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2]}\n"
              "{\"stream_id\":\"b\",\"step\":0,\"logits\":[1,2]}\n"
              "{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2]}\n") == 4);
    CHECK(error_line<SequenceError>("{\"stream_id\":\"a\",\"step\":3,\"logits\":[1,2]}\n") == 1);
  }

  TEST_CASE("parse errors name the line") {
    CHECK(error_line<ParseError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2]}\n{oops\n") == 2);
    CHECK(error_line<ParseError>("\n\n[1,2]\n") == 3);
    CHECK(error_line<ParseError>("{\"step\":0,\"logits\":[1,2]}\n") == 1);
    CHECK(error_line<ParseError>("{\"stream_id\":\"a\",\"step\":0.5,\"logits\":[1,2]}\n") == 1);
    CHECK(error_line<ParseError>("{\"stream_id\":\"a\",\"step\":0}\n") == 1);
    CHECK(error_line<ParseError>("{\"format\":\"emdk-trace\",\"version\":2}\n") == 1);
    CHECK(error_line<ParseError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2]}\n"
                                 "{\"format\":\"emdk-trace\",\"version\":1}\n") == 2);
  }

  TEST_CASE("data errors") {
    CHECK(error_line<DataError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,null]}\n") == 1);
    CHECK(error_line<DataError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,\"NaN\"]}\n") == 1);
    CHECK(error_line<DataError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,1e999]}\n") == 1);
    CHECK(error_line<DataError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1]}\n") == 1);
    CHECK(error_line<DataError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2],\"vocab_size\":3}\n") == 1);
    CHECK(error_line<DataError>("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2],\"chosen_token\":2}\n") == 1);
  }

  TEST_CASE("process with none keeps logits") {
    const auto records = random_records(100, 3);
    std::stringstream in, out;
    write_trace(records, in);
    ProcessOptions opts;
    opts.method = AdjustMethod::none;
    const auto summary = process_trace(in, opts, out);
    CHECK(summary.records == 100u);
    const auto processed = read_trace(out);
    REQUIRE(processed.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(processed[i].logits == records[i].logits);
      CHECK(processed[i].chosen_token == records[i].chosen_token);
      CHECK(processed[i].entropy_before == processed[i].entropy_after);
    }
    CHECK(summary.mean_entropy_reduction == 0.0);
  }

  TEST_CASE("uniform records are left alone") {
    std::vector<TraceRecord> records(5);
    for (int i = 0; i < 5; ++i) {
      records[i].stream_id = "u";
      records[i].step = i;
      records[i].logits = std::vector<double>(4, 1.25);
    }
    for (AdjustMethod m : {AdjustMethod::em_inf, AdjustMethod::adaptive_temp}) {
      std::stringstream in, out;
      write_trace(records, in);
      ProcessOptions opts;
      opts.method = m;
      const auto summary = process_trace(in, opts, out);
      CHECK(summary.fraction_target_reached == 0.0);
      for (const auto& r : read_trace(out)) {
        CHECK(r.target_reached == false);
        for (std::size_t j = 0; j < 4; ++j) CHECK(r.logits[j] == Approx(r.logits[0]).epsilon(1e-15));
      }
    }
  }

  TEST_CASE("mixed-entropy fixture") {
    for (AdjustMethod m : {AdjustMethod::em_inf, AdjustMethod::adaptive_temp}) {
      std::istringstream in(slurp("mixed_entropy.jsonl"));
      std::stringstream out;
      ProcessOptions opts;
      opts.method = m;
      opts.em_inf.delta = opts.adaptive.delta = 0.3;
      const auto summary = process_trace(in, opts, out);
      CHECK(summary.records == 24u);
      CHECK(summary.mean_entropy_after <= summary.mean_entropy_before);
      CHECK(summary.mean_entropy_reduction > 0.0);
      std::istringstream original(slurp("mixed_entropy.jsonl"));
      const auto inputs = read_trace(original);
      const auto outputs = read_trace(out);
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto& r = outputs[i];
        CHECK(*r.entropy_before == Approx(oracle::row_entropy(inputs[i].logits)).epsilon(1e-12));
        CHECK(*r.entropy_after == Approx(oracle::row_entropy(r.logits)).epsilon(1e-12));
        const bool uniform = std::abs(*r.entropy_before - std::log(6.0)) < 1e-12;
        if (*r.entropy_before > 0.3 && !uniform) CHECK(*r.entropy_after < *r.entropy_before);
      }
    }
  }

  TEST_CASE("processing does not depend on workers") {
    const auto records = random_records(500, 9);
    std::stringstream src;
    write_trace(records, src);
    const std::string text = src.str();
    std::string first;
    for (int workers : {1, 2, 7}) {
      std::istringstream in(text);
      std::stringstream out;
      ProcessOptions opts;
      opts.workers = workers;
      process_trace(in, opts, out);
      if (first.empty()) first = out.str();
      CHECK(out.str() == first);
    }
  }

  TEST_CASE("processing reports line numbers for bad input") {
    std::istringstream in("{\"stream_id\":\"a\",\"step\":0,\"logits\":[1,2]}\n{\"stream_id\":\"a\",\"step\":2,\"logits\":[1,2]}\n");
    std::stringstream out;
    CHECK_THROWS_AS(process_trace(in, ProcessOptions{}, out), SequenceError);
  }
}
