#pragma once

// Score arithmetic for aspect matching plus the baseline scorers.
//
// Evidence similarity only takes the values 0, 1/2 and 1, so directional
// sums are kept as integer half-units and every reported real comes from a
// single correctly rounded division. Recomputing a score from a trace is
// therefore bit-exact, and comparisons between modes are exact.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "expert/model.hpp"

namespace expert {

class Gateway;
class PromptKit;

/// Evidence similarity of one judged pair: 0, 0.5 or 1.
double epsilon(const AlignmentJudgment& judgment, AggregationMode mode);
/// Same value in half-units (0, 1 or 2).
int epsilon_halves(const AlignmentJudgment& judgment, AggregationMode mode);

/// Sum of half-units over one direction, and the number of query aspects.
struct DirectionalSum {
  std::int64_t halves = 0;
  std::int64_t count = 0;

  double value() const;
};

/// Sums epsilon over query aspects via their match. Throws
/// ScoringContractError when `matches` does not cover exactly the aspects of
/// `query_set`, MissingJudgment when a matched pair has no judgment.
DirectionalSum directional_sum(const AspectSet& query_set, std::span<const MatchResult> matches,
                               std::span<const AlignmentJudgment> judgments, AggregationMode mode);

double recall(const AspectSet& ref_set, std::span<const MatchResult> matches,
              std::span<const AlignmentJudgment> judgments, AggregationMode mode);
double precision(const AspectSet& cand_set, std::span<const MatchResult> matches,
                 std::span<const AlignmentJudgment> judgments, AggregationMode mode);

/// Harmonic mean, 0 when p + r == 0.
double f_measure(double p, double r);

/// F from the exact directional sums (equal to f_measure of the two rounded
/// values up to the final rounding).
double f_measure(const DirectionalSum& precision_sum, const DirectionalSum& recall_sum);

const AlignmentJudgment* find_judgment(std::span<const AlignmentJudgment> judgments, AspectId ref, AspectId cand);

/// Per-mode scores for all five modes plus the degenerate flag. Both sets
/// empty scores 1; exactly one empty scores 0.
ScoreReport score_aspects(const AspectSet& reference, const AspectSet& candidate,
                          std::span<const MatchResult> recall_matches,
                          std::span<const MatchResult> precision_matches,
                          std::span<const AlignmentJudgment> judgments);

/// Recomputes the per-mode scores of a trace from its matches and judgments;
/// llm_calls is copied from the trace.
ScoreReport recompute_report(const ExplanationTrace& trace);

// ---------------------------------------------------------------------------
// Baselines

struct BaselineOptions {
  std::size_t token_cap = 512;
  int max_reasks = 3;
  int geval_samples = 20;
  double geval_temperature = 1.0;
  int max_output_tokens = 16;
};

/// One pointwise call at temperature 0; integer on 0..100 normalized to [0,1].
/// Malformed answers are re-asked; throws UnparseableScore after that.
double gemba_score(Gateway& gateway, const PromptKit& kit, std::string_view task_input,
                   std::string_view candidate, std::string_view reference, const BaselineOptions& options = {});

struct GEvalResult {
  double score = 0.0;
  std::vector<int> parsed;
  std::size_t dropped = 0;
};

/// Frequency-weighted mean of the parsed sample scores, normalized to [0,1].
/// Throws AllSamplesUnparseable when nothing parses.
GEvalResult geval_from_samples(std::span<const std::string> samples);

GEvalResult geval_score(Gateway& gateway, const PromptKit& kit, std::string_view task_input,
                        std::string_view candidate, std::string_view reference,
                        const BaselineOptions& options = {});

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  std::size_t lcs = 0;
};

/// Lowercased whitespace tokens.
std::vector<std::string> rouge_tokens(std::string_view text);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
RougeL rouge_l_tokens(std::span<const std::string> candidate, std::span<const std::string> reference);
RougeL rouge_l(std::string_view candidate, std::string_view reference);

}  // namespace expert
