#pragma once

// Domain types shared by the pipeline, scoring, harness and reporting code.
// Every type has a canonical JSON form (see to_json / from_json below); that
// form is the trace and report interchange format.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace expert {

using AspectId = int;

struct ProfileDocument {
  std::string doc_id;
  std::string text;

  bool operator==(const ProfileDocument&) const = default;
};

/// One benchmark example: prompt, user-written reference, generated candidates.
struct EvalInstance {
  std::string id;
  std::string task;
  std::string input;
  std::string reference;
  std::vector<std::string> candidates;
  std::optional<std::vector<ProfileDocument>> profile;
  std::map<std::string, std::string> metadata;

  bool operator==(const EvalInstance&) const = default;
};

/// An atomic concept of a text with the snippets that support it.
struct Aspect {
  AspectId aspect_id = 0;
  std::string title;
  std::string description;
  std::vector<std::string> evidences;

  bool operator==(const Aspect&) const = default;
};

enum class SourceRole { Reference, Candidate };

struct AspectSet {
  SourceRole source_role = SourceRole::Reference;
  std::string source_text;
  std::vector<Aspect> aspects;

  const Aspect* find(AspectId id) const;
  bool operator==(const AspectSet&) const = default;
};

/// RecallDir: reference aspects query the candidate pool.
/// PrecisionDir: candidate aspects query the reference pool.
enum class MatchDirection { RecallDir, PrecisionDir };

struct MatchResult {
  MatchDirection direction = MatchDirection::RecallDir;
  AspectId query_aspect_id = 0;
  std::optional<AspectId> matched_aspect_id;
  std::optional<std::string> rationale;

  bool operator==(const MatchResult&) const = default;
};

/// Content and style verdicts for a (reference aspect, candidate aspect) pair.
struct AlignmentJudgment {
  AspectId ref_aspect_id = 0;
  AspectId cand_aspect_id = 0;
  bool content_aligned = false;
  bool style_aligned = false;
  std::string content_rationale;
  std::string style_rationale;

  bool operator==(const AlignmentJudgment&) const = default;
};

enum class AggregationMode {
  Content,
  Style,
  ContentAndStyle,
  ContentOrStyle,
  ContentStyleAverage,
};

inline constexpr AggregationMode kAllModes[] = {
    AggregationMode::Content,         AggregationMode::Style,
    AggregationMode::ContentAndStyle, AggregationMode::ContentOrStyle,
    AggregationMode::ContentStyleAverage,
};

std::string_view to_string(AggregationMode mode);
/// Accepts canonical names and the short CLI aliases
/// (content, style, and, or, average).
std::optional<AggregationMode> parse_mode(std::string_view name);

std::string_view to_string(SourceRole role);
std::string_view to_string(MatchDirection direction);

enum class DegenerateFlag { EmptyReferenceAspects, EmptyCandidateAspects, BothEmpty };
std::string_view to_string(DegenerateFlag flag);

struct ModeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;

  bool operator==(const ModeScore&) const = default;
};

/// Logical LLM calls spent on one evaluation. total excludes re-asks, which
/// are tracked on their own.
struct CallCounts {
  std::uint64_t extraction = 0;
  std::uint64_t matching = 0;
  std::uint64_t alignment = 0;
  std::uint64_t total = 0;
  std::uint64_t reasks = 0;

  bool operator==(const CallCounts&) const = default;
};

struct ScoreReport {
  std::map<AggregationMode, ModeScore> modes;
  CallCounts llm_calls;
  std::optional<DegenerateFlag> degenerate_flag;

  bool operator==(const ScoreReport&) const = default;
};

struct BackendIdentity {
  std::string model_id;
  double temperature = 0.0;
  std::vector<double> retry_temperatures;

  bool operator==(const BackendIdentity&) const = default;
};

/// Complete decision record of one (reference, candidate) evaluation.
struct ExplanationTrace {
  std::string instance_id;
  std::size_t candidate_index = 0;
  AspectSet reference;
  AspectSet candidate;
  std::vector<MatchResult> recall_matches;
  std::vector<MatchResult> precision_matches;
  std::vector<AlignmentJudgment> judgments;  // sorted by (ref, cand)
  ScoreReport report;
  BackendIdentity backend;
  std::map<std::string, std::string> template_versions;
  std::vector<std::string> warnings;

  bool operator==(const ExplanationTrace&) const = default;
};

// Canonical JSON. Aspects are emitted in aspect_id order, judgments in
// canonical pair order; object keys are sorted.
void to_json(nlohmann::json& j, const ProfileDocument& v);
void from_json(const nlohmann::json& j, ProfileDocument& v);
void to_json(nlohmann::json& j, const EvalInstance& v);
void from_json(const nlohmann::json& j, EvalInstance& v);
void to_json(nlohmann::json& j, const Aspect& v);
void from_json(const nlohmann::json& j, Aspect& v);
void to_json(nlohmann::json& j, const AspectSet& v);
void from_json(const nlohmann::json& j, AspectSet& v);
void to_json(nlohmann::json& j, const MatchResult& v);
void from_json(const nlohmann::json& j, MatchResult& v);
void to_json(nlohmann::json& j, const AlignmentJudgment& v);
void from_json(const nlohmann::json& j, AlignmentJudgment& v);
void to_json(nlohmann::json& j, const ModeScore& v);
void from_json(const nlohmann::json& j, ModeScore& v);
void to_json(nlohmann::json& j, const CallCounts& v);
void from_json(const nlohmann::json& j, CallCounts& v);
void to_json(nlohmann::json& j, const ScoreReport& v);
void from_json(const nlohmann::json& j, ScoreReport& v);
void to_json(nlohmann::json& j, const BackendIdentity& v);
void from_json(const nlohmann::json& j, BackendIdentity& v);
void to_json(nlohmann::json& j, const ExplanationTrace& v);
void from_json(const nlohmann::json& j, ExplanationTrace& v);

/// Checks id/reference/candidate invariants; throws ConfigError with the reason.
void validate(const EvalInstance& instance);

}  // namespace expert
