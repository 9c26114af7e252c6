#pragma once

// Prompt rendering and strict parsing of model outputs.
//
// Templates are UTF-8 files with {{placeholder}} markers; a template's
// version is a hash of its content. Rendering is pure. Parsers never throw
// on bad model output: they return a ParseOutcome carrying either a value
// or a failure reason.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "expert/model.hpp"

namespace expert {

enum class TemplateId { AspectExtraction, AspectMatching, ContentMatching, StyleMatching, PointwiseBaseline };
std::string_view to_string(TemplateId id);

struct PromptTemplate {
  TemplateId template_id = TemplateId::AspectExtraction;
  std::string version;
  std::string body;

  /// Substitutes every {{name}} in one pass. Throws RenderError when the
  /// body references a name that is not bound.
  std::string render(const std::map<std::string, std::string>& bindings) const;
  std::vector<std::string> placeholders() const;
};

PromptTemplate make_template(TemplateId id, std::string body);

enum class ParseFailure { NotJson, SchemaViolation, OutOfRangeChoice, EmptyResult };
std::string_view to_string(ParseFailure failure);

template <typename T>
struct ParseOutcome {
  std::optional<T> value;
  std::optional<ParseFailure> failure_reason;
  std::vector<std::string> warnings;

  bool ok() const { return value.has_value(); }

  static ParseOutcome success(T v, std::vector<std::string> warnings = {}) {
    return ParseOutcome{std::move(v), std::nullopt, std::move(warnings)};
  }
  static ParseOutcome failure(ParseFailure f, std::vector<std::string> warnings = {}) {
    return ParseOutcome{std::nullopt, f, std::move(warnings)};
  }
};

/// A rendered matching prompt; option k refers to aspect option_ids[k].
struct MatchingPrompt {
  std::string text;
  std::vector<AspectId> option_ids;
};

struct Verdict {
  bool aligned = false;
  std::string rationale;

  bool operator==(const Verdict&) const = default;
};

inline constexpr std::size_t kBaselineTokenCap = 512;
inline constexpr std::string_view kNoTaskContext = "(no task context)";

class PromptKit {
 public:
  /// Loads the five templates from <dir>/{aspect_extraction,aspect_matching,
  /// content_matching,style_matching,pointwise_baseline}.txt.
  static PromptKit load(const std::filesystem::path& dir);
  /// Directory from $EXPERT_TEMPLATES, else the one configured at build time.
  static std::filesystem::path default_dir();
  static PromptKit load_default() { return load(default_dir()); }

  const PromptTemplate& get(TemplateId id) const;
  std::map<std::string, std::string> versions() const;

  std::string render_aspect_extraction(std::string_view task_input, std::string_view target_text) const;
  MatchingPrompt render_aspect_matching(const Aspect& query, std::span<const Aspect> pool) const;
  std::string render_content_matching(std::string_view evidence_ref, std::string_view evidence_cand) const;
  std::string render_style_matching(std::string_view evidence_ref, std::string_view evidence_cand) const;
  std::string render_pointwise_baseline(std::string_view task_input, std::string_view candidate,
                                        std::string_view reference,
                                        std::size_t token_cap = kBaselineTokenCap) const;

 private:
  std::map<TemplateId, PromptTemplate> templates_;
};

/// Keeps the first `cap` whitespace-separated tokens (original spacing
/// between them preserved). cap == 0 means no truncation.
std::string truncate_tokens(std::string_view text, std::size_t cap);

/// Evidences joined in their original order, newline separated.
std::string join_evidences(const Aspect& aspect);

/// Appended to a prompt when the previous answer was malformed.
std::string_view reask_suffix();

/// Temperature for re-ask k (1-based): schedule[k-1], clamped to the last
/// entry; the base temperature when the schedule is empty.
double reask_temperature(const std::vector<double>& schedule, double base, int reask);

/// Locates the first well-formed JSON value that starts with `open`
/// ('[' or '{'); brackets inside strings are ignored.
std::optional<nlohmann::json> find_first_json(std::string_view raw, char open);

ParseOutcome<std::vector<Aspect>> parse_aspect_list(std::string_view raw);
ParseOutcome<std::optional<AspectId>> parse_match_choice(std::string_view raw, std::span<const AspectId> valid_ids);
ParseOutcome<Verdict> parse_alignment(std::string_view raw);
/// First integer token in [0, 100].
ParseOutcome<int> parse_score(std::string_view raw);

/// The list form that parse_aspect_list accepts, for the given aspects.
nlohmann::json aspect_list_json(std::span<const Aspect> aspects);

}  // namespace expert
