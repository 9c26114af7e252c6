#pragma once

// Renders explanation traces and batch results. All rendering is
// deterministic: identical inputs give byte-identical documents.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "expert/model.hpp"

namespace expert {

struct BatchRecord;

/// Canonical JSON document (sorted keys, two-space indent, trailing newline).
std::string render_trace_json(const ExplanationTrace& trace);
ExplanationTrace parse_trace_json(std::string_view document);

enum class ReportFormat { Markdown, Html };

/// Human-readable report: aspects and evidences, matches per direction with
/// unmatched aspects marked, per-pair verdicts with rationales, and the
/// per-mode score table. Never names a winner. HTML reports embed the
/// canonical JSON trace in <script type="application/json" id="expert-trace">.
std::string render_trace_report(const ExplanationTrace& trace, ReportFormat format);

/// Reads the trace embedded in an HTML report.
ExplanationTrace extract_embedded_trace(std::string_view html);

struct SummaryTable {
  std::string text;
  std::string csv;
  std::size_t successes = 0;
  std::size_t errors = 0;
};

/// Per-mode mean P/R/F and mean call counts over successful records, plus
/// the error count. Baseline-only records contribute their score.
SummaryTable summary_table(std::span<const BatchRecord> records);

/// One JSON object per record, newline separated.
std::string render_records_jsonl(std::span<const BatchRecord> records);

}  // namespace expert
