#include "expert/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "expert/errors.hpp"

namespace expert {

int epsilon_halves(const AlignmentJudgment& j, AggregationMode mode) {
  const int c = j.content_aligned ? 1 : 0;
  const int s = j.style_aligned ? 1 : 0;
  switch (mode) {
    case AggregationMode::Content: return 2 * c;
    case AggregationMode::Style: return 2 * s;
    case AggregationMode::ContentAndStyle: return 2 * (c & s);
    case AggregationMode::ContentOrStyle: return 2 * (c | s);
    case AggregationMode::ContentStyleAverage: return c + s;
  }
  return 0;
}

double epsilon(const AlignmentJudgment& judgment, AggregationMode mode) {
  return epsilon_halves(judgment, mode) / 2.0;
}

double DirectionalSum::value() const {
  if (count == 0) return 0.0;
  return static_cast<double>(halves) / (2.0 * static_cast<double>(count));
}

const AlignmentJudgment* find_judgment(std::span<const AlignmentJudgment> judgments, AspectId ref, AspectId cand) {
  auto it = std::find_if(judgments.begin(), judgments.end(), [&](const AlignmentJudgment& j) {
    return j.ref_aspect_id == ref && j.cand_aspect_id == cand;
  });
  return it == judgments.end() ? nullptr : &*it;
}

DirectionalSum directional_sum(const AspectSet& query_set, std::span<const MatchResult> matches,
                               std::span<const AlignmentJudgment> judgments, AggregationMode mode) {
  if (matches.size() != query_set.aspects.size()) {
    throw ScoringContractError("expected one match per aspect: " + std::to_string(query_set.aspects.size()) +
                               " aspects, " + std::to_string(matches.size()) + " matches");
  }
  std::set<AspectId> seen;
  DirectionalSum sum;
  sum.count = static_cast<std::int64_t>(query_set.aspects.size());
  for (const auto& m : matches) {
    if (!query_set.find(m.query_aspect_id) || !seen.insert(m.query_aspect_id).second) {
      throw ScoringContractError("match list does not cover aspect " + std::to_string(m.query_aspect_id));
    }
    if (!m.matched_aspect_id) continue;
    const bool recall_dir = m.direction == MatchDirection::RecallDir;
    const AspectId ref = recall_dir ? m.query_aspect_id : *m.matched_aspect_id;
    const AspectId cand = recall_dir ? *m.matched_aspect_id : m.query_aspect_id;
    const auto* j = find_judgment(judgments, ref, cand);
    if (!j) {
      throw MissingJudgment("no judgment for matched pair (" + std::to_string(ref) + ", " + std::to_string(cand) + ")");
    }
    sum.halves += epsilon_halves(*j, mode);
  }
  return sum;
}

double recall(const AspectSet& ref_set, std::span<const MatchResult> matches,
              std::span<const AlignmentJudgment> judgments, AggregationMode mode) {
  return directional_sum(ref_set, matches, judgments, mode).value();
}

double precision(const AspectSet& cand_set, std::span<const MatchResult> matches,
                 std::span<const AlignmentJudgment> judgments, AggregationMode mode) {
  return directional_sum(cand_set, matches, judgments, mode).value();
}

double f_measure(double p, double r) {
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

double f_measure(const DirectionalSum& ps, const DirectionalSum& rs) {
  // P = hp/(2np), R = hr/(2nr)  =>  F = hp*hr / (hp*nr + hr*np).
  const auto denom = ps.halves * rs.count + rs.halves * ps.count;
  if (denom == 0 || ps.count == 0 || rs.count == 0) return 0.0;
  return static_cast<double>(ps.halves * rs.halves) / static_cast<double>(denom);
}

ScoreReport score_aspects(const AspectSet& reference, const AspectSet& candidate,
                          std::span<const MatchResult> recall_matches,
                          std::span<const MatchResult> precision_matches,
                          std::span<const AlignmentJudgment> judgments) {
  ScoreReport report;
  const bool ref_empty = reference.aspects.empty();
  const bool cand_empty = candidate.aspects.empty();
  if (ref_empty || cand_empty) {
    report.degenerate_flag = ref_empty && cand_empty ? DegenerateFlag::BothEmpty
                             : ref_empty             ? DegenerateFlag::EmptyReferenceAspects
                                                     : DegenerateFlag::EmptyCandidateAspects;
    const double v = ref_empty && cand_empty ? 1.0 : 0.0;
    for (auto mode : kAllModes) report.modes[mode] = ModeScore{v, v, v};
    return report;
  }
  for (auto mode : kAllModes) {
    const auto rs = directional_sum(reference, recall_matches, judgments, mode);
    const auto ps = directional_sum(candidate, precision_matches, judgments, mode);
    report.modes[mode] = ModeScore{ps.value(), rs.value(), f_measure(ps, rs)};
  }
  return report;
}

ScoreReport recompute_report(const ExplanationTrace& trace) {
  auto report = score_aspects(trace.reference, trace.candidate, trace.recall_matches, trace.precision_matches,
                              trace.judgments);
  report.llm_calls = trace.report.llm_calls;
  return report;
}

// ---------------------------------------------------------------------------
// ROUGE-L

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeL rouge_l_tokens(std::span<const std::string> candidate, std::span<const std::string> reference) {
  RougeL out;
  out.lcs = lcs_length(candidate, reference);
  const auto l = static_cast<double>(out.lcs);
  out.precision = candidate.empty() ? 0.0 : l / static_cast<double>(candidate.size());
  out.recall = reference.empty() ? 0.0 : l / static_cast<double>(reference.size());
  // 2PR/(P+R) reduces to 2L/(|c|+|r|).
  out.f_measure = out.lcs == 0 ? 0.0 : 2.0 * l / static_cast<double>(candidate.size() + reference.size());
  return out;
}

RougeL rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = rouge_tokens(candidate);
  const auto r = rouge_tokens(reference);
  return rouge_l_tokens(c, r);
}

}  // namespace expert
