#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "expert/errors.hpp"
#include "expert/harness.hpp"
#include "expert/pipeline.hpp"
#include "expert/reporting.hpp"
#include "expert/scoring.hpp"
#include "scenario.hpp"

using namespace expert;
using namespace expert::testing;
using nlohmann::json;

namespace {

const PromptKit& kit() {
  static const PromptKit k = PromptKit::load_default();
  return k;
}

ExplanationTrace run(const Scenario& s) {
  ScriptBuilder b(kit());
  b.add(s);
  Gateway gw({}, b.backend());
  Evaluator ev(gw, kit());
  return ev.evaluate(s.instance(), 0);
}

Scenario perfect_copy() {
  std::mt19937_64 rng(8);
  return twin(rng, 0);
}

Scenario empty_candidate() {
  auto s = s1();
  s.cand_aspects.clear();
  s.precision_choice.clear();
  s.recall_choice = {std::nullopt, std::nullopt};
  s.verdicts.clear();
  return s;
}

bool contains(const std::string& hay, std::string_view needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("trace JSON round trip and recompute") {
  const auto t = run(s1());
  const auto doc = render_trace_json(t);
  CHECK(doc.back() == '\n');
  const auto back = parse_trace_json(doc);
  CHECK(back == t);
  CHECK(render_trace_json(back) == doc);
  const auto r = recompute_report(back);
  CHECK(r.modes.at(AggregationMode::ContentStyleAverage).f_measure == 0.6);
  CHECK(r == t.report);

  const auto j = json::parse(doc);
  for (const auto* key : {"reference", "candidate", "recall_matches", "precision_matches", "judgments", "report",
                          "backend", "template_versions", "warnings"}) {
    CHECK_MESSAGE(j.contains(key), key);
  }

  const auto d = run(empty_candidate());
  const auto dj = json::parse(render_trace_json(d));
  CHECK(dj["report"]["degenerate_flag"] == "empty_candidate_aspects");
  CHECK(parse_trace_json(render_trace_json(d)) == d);

  CHECK_THROWS_AS(parse_trace_json("{oops"), ConfigError);
  CHECK_THROWS_AS(parse_trace_json(R"({"instance_id": 3})"), ConfigError);
}

TEST_CASE("markdown report content") {
  const auto t = run(s1());
  const auto md = render_trace_report(t, ReportFormat::Markdown);
  CHECK(contains(md, "Unmatched reference aspects (0): none"));
  CHECK(contains(md, "Unmatched generated aspects (1): [2] Price"));
  CHECK(contains(md, "Unmatched aspects in total: 1"));
  CHECK(contains(md, "Battery life is superb, two full days!"));
  CHECK(contains(md, "content 0/0 agrees"));
  CHECK(contains(md, "style 0/0 differs"));
  CHECK(contains(md, "0.6000"));
  CHECK_FALSE(contains(md, "Degenerate"));
  std::string lower = md;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  CHECK_FALSE(contains(lower, "winner"));
  CHECK_FALSE(contains(lower, "better"));
  CHECK(render_trace_report(t, ReportFormat::Markdown) == md);

  const auto copy = render_trace_report(run(perfect_copy()), ReportFormat::Markdown);
  CHECK(contains(copy, "Unmatched aspects in total: 0"));

  const auto deg = render_trace_report(run(empty_candidate()), ReportFormat::Markdown);
  CHECK(contains(deg, "Degenerate evaluation (empty_candidate_aspects)"));
  CHECK_FALSE(contains(deg, "Unmatched aspects in total"));
}

TEST_CASE("HTML report embeds the trace") {
  auto t = run(s1());
  t.warnings.push_back("contains </script> and <b>markup</b>");
  const auto html = render_trace_report(t, ReportFormat::Html);
  CHECK(contains(html, "<script type=\"application/json\" id=\"expert-trace\">"));
  CHECK(contains(html, "class=\"unmatched\""));
  CHECK_FALSE(contains(html, "<b>markup</b>"));
  CHECK(extract_embedded_trace(html) == t);
  CHECK(render_trace_report(t, ReportFormat::Html) == html);
  CHECK_THROWS_AS(extract_embedded_trace("<html></html>"), ConfigError);
}

TEST_CASE("summary table") {
  auto make = [](const std::string& id, double f) {
    BatchRecord r;
    r.instance_id = id;
    ScoreReport rep;
    rep.modes[AggregationMode::Content] = {f, f, f};
    rep.llm_calls = {2, 4, 4, 10, 1};
    r.report = rep;
    r.score = f;
    return r;
  };
  std::vector<BatchRecord> records{make("a", 0.6), make("b", 0.8)};
  BatchRecord failed;
  failed.instance_id = "c";
  failed.error = "boom";
  failed.error_kind = "backend_refused";
  records.push_back(failed);

  const auto s = summary_table(records);
  CHECK(s.successes == 2);
  CHECK(s.errors == 1);
  CHECK(contains(s.text, "records: 3  successes: 2  errors: 1"));
  CHECK(contains(s.csv, "content,0.700000,0.700000,0.700000,,2\n"));
  CHECK(contains(s.csv, "mean_llm_calls,,,,,10.000000\n"));
  CHECK(contains(s.csv, "errors,,,,,1\n"));
  CHECK(contains(s.text, "re-asks 1.00"));

  const auto one = summary_table(std::span(records).first(1));
  CHECK(contains(one.csv, "content,0.600000,0.600000,0.600000,,1\n"));

  BatchRecord baseline;
  baseline.instance_id = "d";
  baseline.score = 0.25;
  const auto b = summary_table(std::span(&baseline, 1));
  CHECK(contains(b.csv, "score,,,,0.250000,1\n"));
  CHECK(summary_table({}).errors == 0);

  const auto jsonl = render_records_jsonl(records);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 3);
  std::istringstream in(jsonl);
  std::string line;
  std::vector<json> rows;
  while (std::getline(in, line)) rows.push_back(json::parse(line));
  CHECK(rows[0]["instance_id"] == "a");
  CHECK(rows[1]["score"] == 0.8);
  CHECK(rows[2]["score"].is_null());
  CHECK(rows[2]["error_kind"] == "backend_refused");
  CHECK_FALSE(rows[0].contains("error"));
}
