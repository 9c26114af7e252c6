#include "expert/reporting.hpp"

#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "expert/errors.hpp"
#include "expert/harness.hpp"
#include "expert/scoring.hpp"

namespace expert {

using nlohmann::json;

namespace {

constexpr std::string_view kEmbedOpen = R"(<script type="application/json" id="expert-trace">)";
constexpr std::string_view kEmbedClose = "</script>";

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

// Keeps table cells on one line.
std::string md_cell(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\n') {
      out += ' ';
    } else if (c == '|') {
      out += "\\|";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string aspect_label(const AspectSet& set, AspectId id) {
  const Aspect* a = set.find(id);
  return "[" + std::to_string(id) + "] " + (a ? a->title : std::string("?"));
}

// The report is built once as a neutral outline and then printed in either
// format, so both carry the same information.
struct Row {
  std::vector<std::string> cells;
  bool highlight = false;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;
};

struct Block {
  enum Kind { Heading, Paragraph, Bullets, TableBlock, Notice } kind;
  int level = 2;
  std::string text;
  std::vector<std::string> items;
  Table table;
};

std::vector<Block> outline(const ExplanationTrace& t) {
  std::vector<Block> out;
  auto heading = [&](int level, std::string text) { out.push_back({Block::Heading, level, std::move(text), {}, {}}); };
  auto para = [&](std::string text) { out.push_back({Block::Paragraph, 0, std::move(text), {}, {}}); };

  heading(1, "Evaluation of " + t.instance_id + ", candidate " + std::to_string(t.candidate_index));
  para("Backend: " + t.backend.model_id + " (temperature " + fixed(t.backend.temperature, 2) + ")");

  heading(2, "Aspects and evidences");
  for (const auto* set : {&t.reference, &t.candidate}) {
    heading(3, set == &t.reference ? "Reference text" : "Generated text");
    if (set->aspects.empty()) {
      para("No aspects were extracted.");
      continue;
    }
    for (const auto& a : set->aspects) {
      Block b{Block::Bullets, 0, "[" + std::to_string(a.aspect_id) + "] " + a.title + ": " + a.description, {}, {}};
      for (const auto& e : a.evidences) b.items.push_back(e);
      out.push_back(std::move(b));
    }
  }

  if (t.report.degenerate_flag) {
    out.push_back({Block::Notice, 0,
                   "Degenerate evaluation (" + std::string(to_string(*t.report.degenerate_flag)) +
                       "): at least one text has no aspects, so no matching or alignment was performed. Every mode "
                       "scores " +
                       fixed(t.report.modes.begin()->second.f_measure) + ".",
                   {},
                   {}});
  } else {
    heading(2, "Aspect matches");
    std::size_t unmatched_total = 0;
    for (const auto dir : {MatchDirection::RecallDir, MatchDirection::PrecisionDir}) {
      const bool recall_dir = dir == MatchDirection::RecallDir;
      const auto& matches = recall_dir ? t.recall_matches : t.precision_matches;
      const auto& query = recall_dir ? t.reference : t.candidate;
      const auto& pool = recall_dir ? t.candidate : t.reference;
      heading(3, recall_dir ? "Reference aspects matched against the generated text (recall)"
                            : "Generated aspects matched against the reference text (precision)");
      Block b{Block::TableBlock, 0, {}, {}, {}};
      b.table.header = {recall_dir ? "Reference aspect" : "Generated aspect",
                        recall_dir ? "Matched generated aspect" : "Matched reference aspect", "Matcher output"};
      std::vector<std::string> unmatched;
      for (const auto& m : matches) {
        Row r;
        r.cells.push_back(aspect_label(query, m.query_aspect_id));
        if (m.matched_aspect_id) {
          r.cells.push_back(aspect_label(pool, *m.matched_aspect_id));
        } else {
          r.cells.push_back("unmatched");
          r.highlight = true;
          unmatched.push_back(aspect_label(query, m.query_aspect_id));
        }
        r.cells.push_back(m.rationale.value_or(""));
        b.table.rows.push_back(std::move(r));
      }
      out.push_back(std::move(b));
      std::string list;
      for (const auto& u : unmatched) list += (list.empty() ? "" : ", ") + u;
      para(std::string(recall_dir ? "Unmatched reference aspects" : "Unmatched generated aspects") + " (" +
           std::to_string(unmatched.size()) + "): " + (unmatched.empty() ? "none" : list));
      unmatched_total += unmatched.size();
    }
    para("Unmatched aspects in total: " + std::to_string(unmatched_total));

    heading(2, "Evidence alignment");
    for (const auto& j : t.judgments) {
      heading(3, aspect_label(t.reference, j.ref_aspect_id) + " / " + aspect_label(t.candidate, j.cand_aspect_id));
      Block b{Block::Bullets, 0, {}, {}, {}};
      b.items.push_back(std::string("Content: ") + (j.content_aligned ? "aligned" : "not aligned") + ". " +
                        j.content_rationale);
      b.items.push_back(std::string("Writing style: ") + (j.style_aligned ? "aligned" : "not aligned") + ". " +
                        j.style_rationale);
      out.push_back(std::move(b));
    }
  }

  heading(2, "Scores");
  Block scores{Block::TableBlock, 0, {}, {}, {}};
  scores.table.header = {"Mode", "Precision", "Recall", "F"};
  for (const auto& [mode, s] : t.report.modes) {
    scores.table.rows.push_back(
        {{std::string(to_string(mode)), fixed(s.precision), fixed(s.recall), fixed(s.f_measure)}, false});
  }
  out.push_back(std::move(scores));
  const auto& c = t.report.llm_calls;
  para("LLM calls: " + std::to_string(c.total) + " (extraction " + std::to_string(c.extraction) + ", matching " +
       std::to_string(c.matching) + ", alignment " + std::to_string(c.alignment) + ", re-asks " +
       std::to_string(c.reasks) + ")");

  if (!t.warnings.empty()) {
    heading(2, "Warnings");
    Block b{Block::Bullets, 0, {}, t.warnings, {}};
    out.push_back(std::move(b));
  }
  return out;
}

std::string to_markdown(const std::vector<Block>& blocks) {
  std::ostringstream md;
  for (const auto& b : blocks) {
    switch (b.kind) {
      case Block::Heading: md << std::string(static_cast<std::size_t>(b.level), '#') << ' ' << b.text << "\n\n"; break;
      case Block::Paragraph: md << b.text << "\n\n"; break;
      case Block::Notice: md << "> **" << b.text << "**\n\n"; break;
      case Block::Bullets:
        if (!b.text.empty()) {
          md << "- **" << b.text << "**\n";
          for (const auto& item : b.items) md << "  - " << md_cell(item) << "\n";
        } else {
          for (const auto& item : b.items) md << "- " << md_cell(item) << "\n";
        }
        md << "\n";
        break;
      case Block::TableBlock: {
        md << '|';
        for (const auto& h : b.table.header) md << ' ' << h << " |";
        md << "\n|";
        for (std::size_t i = 0; i < b.table.header.size(); ++i) md << " --- |";
        md << "\n";
        for (const auto& r : b.table.rows) {
          md << '|';
          for (const auto& cell : r.cells) {
            md << ' ' << (r.highlight && cell == "unmatched" ? "**unmatched**" : md_cell(cell)) << " |";
          }
          md << "\n";
        }
        md << "\n";
        break;
      }
    }
  }
  return md.str();
}

std::string to_html(const std::vector<Block>& blocks, const ExplanationTrace& trace) {
  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>" << html_escape(trace.instance_id)
    << "</title>\n<style>\n"
    << "body{font-family:sans-serif;max-width:960px;margin:2em auto}table{border-collapse:collapse}"
    << "td,th{border:1px solid #ccc;padding:4px 8px;vertical-align:top}.unmatched{background:#fde2e2}"
    << ".notice{border-left:4px solid #c00;padding-left:1em}\n</style>\n</head>\n<body>\n";
  for (const auto& b : blocks) {
    switch (b.kind) {
      case Block::Heading: h << "<h" << b.level << '>' << html_escape(b.text) << "</h" << b.level << ">\n"; break;
      case Block::Paragraph: h << "<p>" << html_escape(b.text) << "</p>\n"; break;
      case Block::Notice: h << "<p class=\"notice\"><strong>" << html_escape(b.text) << "</strong></p>\n"; break;
      case Block::Bullets:
        if (!b.text.empty()) h << "<p><strong>" << html_escape(b.text) << "</strong></p>\n";
        h << "<ul>\n";
        for (const auto& item : b.items) h << "<li>" << html_escape(item) << "</li>\n";
        h << "</ul>\n";
        break;
      case Block::TableBlock:
        h << "<table>\n<tr>";
        for (const auto& th : b.table.header) h << "<th>" << html_escape(th) << "</th>";
        h << "</tr>\n";
        for (const auto& r : b.table.rows) {
          h << (r.highlight ? "<tr class=\"unmatched\">" : "<tr>");
          for (const auto& cell : r.cells) h << "<td>" << html_escape(cell) << "</td>";
          h << "</tr>\n";
        }
        h << "</table>\n";
        break;
    }
  }
  // "</" cannot appear inside a script element; "<\/" is the same JSON string.
  auto embedded = json(trace).dump();
  std::string safe;
  for (std::size_t i = 0; i < embedded.size(); ++i) {
    if (embedded[i] == '<' && i + 1 < embedded.size() && embedded[i + 1] == '/') {
      safe += "<\\/";
      ++i;
    } else {
      safe.push_back(embedded[i]);
    }
  }
  h << kEmbedOpen << safe << kEmbedClose << "\n</body>\n</html>\n";
  return h.str();
}

}  // namespace

std::string render_trace_json(const ExplanationTrace& trace) { return json(trace).dump(2) + "\n"; }

ExplanationTrace parse_trace_json(std::string_view document) {
  auto j = json::parse(document, nullptr, false);
  if (j.is_discarded()) throw ConfigError("trace document is not valid JSON");
  try {
    return j.get<ExplanationTrace>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("trace document does not match the schema: ") + e.what());
  }
}

std::string render_trace_report(const ExplanationTrace& trace, ReportFormat format) {
  const auto blocks = outline(trace);
  return format == ReportFormat::Markdown ? to_markdown(blocks) : to_html(blocks, trace);
}

ExplanationTrace extract_embedded_trace(std::string_view html) {
  const auto open = html.find(kEmbedOpen);
  if (open == std::string_view::npos) throw ConfigError("report has no embedded trace");
  const auto start = open + kEmbedOpen.size();
  const auto close = html.find(kEmbedClose, start);
  if (close == std::string_view::npos) throw ConfigError("embedded trace is not terminated");
  return parse_trace_json(html.substr(start, close - start));
}

SummaryTable summary_table(std::span<const BatchRecord> records) {
  SummaryTable out;
  std::map<AggregationMode, ModeScore> sums;
  CallCounts calls;
  std::size_t with_report = 0;
  double score_sum = 0.0;
  std::size_t with_score = 0;
  for (const auto& r : records) {
    if (r.error) {
      ++out.errors;
      continue;
    }
    ++out.successes;
    if (r.score) {
      score_sum += *r.score;
      ++with_score;
    }
    if (!r.report) continue;
    ++with_report;
    for (const auto& [mode, s] : r.report->modes) {
      auto& acc = sums[mode];
      acc.precision += s.precision;
      acc.recall += s.recall;
      acc.f_measure += s.f_measure;
    }
    calls.extraction += r.report->llm_calls.extraction;
    calls.matching += r.report->llm_calls.matching;
    calls.alignment += r.report->llm_calls.alignment;
    calls.total += r.report->llm_calls.total;
    calls.reasks += r.report->llm_calls.reasks;
  }

  std::ostringstream text, csv;
  csv << "row,precision,recall,f_measure,mean_score,count\n";
  text << "records: " << records.size() << "  successes: " << out.successes << "  errors: " << out.errors << "\n";
  if (with_report > 0) {
    const double n = static_cast<double>(with_report);
    char line[160];
    std::snprintf(line, sizeof line, "%-24s %10s %10s %10s\n", "mode", "precision", "recall", "f");
    text << line;
    for (const auto& [mode, s] : sums) {
      std::snprintf(line, sizeof line, "%-24s %10.4f %10.4f %10.4f\n", std::string(to_string(mode)).c_str(),
                    s.precision / n, s.recall / n, s.f_measure / n);
      text << line;
      csv << to_string(mode) << ',' << fixed(s.precision / n, 6) << ',' << fixed(s.recall / n, 6) << ','
          << fixed(s.f_measure / n, 6) << ",," << with_report << "\n";
    }
    text << "mean llm calls: " << fixed(static_cast<double>(calls.total) / n, 2)
         << " (extraction " << fixed(static_cast<double>(calls.extraction) / n, 2) << ", matching "
         << fixed(static_cast<double>(calls.matching) / n, 2) << ", alignment "
         << fixed(static_cast<double>(calls.alignment) / n, 2) << ", re-asks "
         << fixed(static_cast<double>(calls.reasks) / n, 2) << ")\n";
    csv << "mean_llm_calls,,,,," << fixed(static_cast<double>(calls.total) / n, 6) << "\n";
  }
  if (with_score > 0) {
    const double mean = score_sum / static_cast<double>(with_score);
    text << "mean score: " << fixed(mean) << "\n";
    csv << "score,,,," << fixed(mean, 6) << ',' << with_score << "\n";
  }
  csv << "errors,,,,," << out.errors << "\n";
  out.text = text.str();
  out.csv = csv.str();
  return out;
}

std::string render_records_jsonl(std::span<const BatchRecord> records) {
  std::string out;
  for (const auto& r : records) {
    json j{{"instance_id", r.instance_id}, {"candidate_index", r.candidate_index}};
    j["score"] = r.score ? json(*r.score) : json(nullptr);
    if (r.report) j["report"] = *r.report;
    if (r.trace_path) j["trace_path"] = r.trace_path->string();
    if (r.error) {
      j["error"] = *r.error;
      j["error_kind"] = r.error_kind;
    }
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace expert
