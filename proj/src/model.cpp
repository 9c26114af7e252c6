#include "expert/model.hpp"

#include <algorithm>

#include "expert/errors.hpp"

namespace expert {

using nlohmann::json;

namespace {

struct ModeName {
  AggregationMode mode;
  std::string_view canonical;
  std::string_view alias;
};

constexpr ModeName kModeNames[] = {
    {AggregationMode::Content, "content", "content"},
    {AggregationMode::Style, "style", "style"},
    {AggregationMode::ContentAndStyle, "content_and_style", "and"},
    {AggregationMode::ContentOrStyle, "content_or_style", "or"},
    {AggregationMode::ContentStyleAverage, "content_style_average", "average"},
};

template <typename T>
T enum_from(const json& j, std::initializer_list<std::pair<std::string_view, T>> table) {
  const auto s = j.get<std::string>();
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  throw json::other_error::create(501, "unknown enum value '" + s + "'", &j);
}

}  // namespace

const Aspect* AspectSet::find(AspectId id) const {
  auto it = std::find_if(aspects.begin(), aspects.end(),
                         [id](const Aspect& a) { return a.aspect_id == id; });
  return it == aspects.end() ? nullptr : &*it;
}

std::string_view to_string(AggregationMode mode) {
  for (const auto& n : kModeNames) {
    if (n.mode == mode) return n.canonical;
  }
  return "unknown";
}

std::optional<AggregationMode> parse_mode(std::string_view name) {
  for (const auto& n : kModeNames) {
    if (n.canonical == name || n.alias == name) return n.mode;
  }
  return std::nullopt;
}

std::string_view to_string(SourceRole role) {
  return role == SourceRole::Reference ? "reference" : "candidate";
}

std::string_view to_string(MatchDirection direction) {
  return direction == MatchDirection::RecallDir ? "recall" : "precision";
}

std::string_view to_string(DegenerateFlag flag) {
  switch (flag) {
    case DegenerateFlag::EmptyReferenceAspects: return "empty_reference_aspects";
    case DegenerateFlag::EmptyCandidateAspects: return "empty_candidate_aspects";
    case DegenerateFlag::BothEmpty: return "both_empty";
  }
  return "unknown";
}

void to_json(json& j, const ProfileDocument& v) { j = json{{"doc_id", v.doc_id}, {"text", v.text}}; }

void from_json(const json& j, ProfileDocument& v) {
  v.doc_id = j.value("doc_id", std::string{});
  j.at("text").get_to(v.text);
}

void to_json(json& j, const EvalInstance& v) {
  j = json{{"id", v.id},
           {"task", v.task},
           {"input", v.input},
           {"reference", v.reference},
           {"candidates", v.candidates},
           {"metadata", v.metadata}};
  if (v.profile) j["profile"] = *v.profile;
}

void from_json(const json& j, EvalInstance& v) {
  j.at("id").get_to(v.id);
  v.task = j.value("task", std::string{});
  v.input = j.value("input", std::string{});
  j.at("reference").get_to(v.reference);
  v.candidates.clear();
  for (const auto& c : j.at("candidates")) {
    // Candidates may be bare strings or {"text": ...} objects.
    v.candidates.push_back(c.is_object() ? c.at("text").get<std::string>() : c.get<std::string>());
  }
  v.profile.reset();
  if (j.contains("profile") && !j.at("profile").is_null()) {
    v.profile = j.at("profile").get<std::vector<ProfileDocument>>();
  }
  v.metadata.clear();
  if (j.contains("metadata") && j.at("metadata").is_object()) {
    for (const auto& [k, val] : j.at("metadata").items()) {
      v.metadata[k] = val.is_string() ? val.get<std::string>() : val.dump();
    }
  }
}

void to_json(json& j, const Aspect& v) {
  j = json{{"aspect_id", v.aspect_id},
           {"title", v.title},
           {"description", v.description},
           {"evidences", v.evidences}};
}

void from_json(const json& j, Aspect& v) {
  j.at("aspect_id").get_to(v.aspect_id);
  j.at("title").get_to(v.title);
  v.description = j.value("description", std::string{});
  j.at("evidences").get_to(v.evidences);
}

void to_json(json& j, const AspectSet& v) {
  auto sorted = v.aspects;
  std::sort(sorted.begin(), sorted.end(),
            [](const Aspect& a, const Aspect& b) { return a.aspect_id < b.aspect_id; });
  j = json{{"source_role", to_string(v.source_role)},
           {"source_text", v.source_text},
           {"aspects", sorted}};
}

void from_json(const json& j, AspectSet& v) {
  v.source_role = enum_from<SourceRole>(
      j.at("source_role"), {{"reference", SourceRole::Reference}, {"candidate", SourceRole::Candidate}});
  j.at("source_text").get_to(v.source_text);
  j.at("aspects").get_to(v.aspects);
}

void to_json(json& j, const MatchResult& v) {
  j = json{{"direction", to_string(v.direction)},
           {"query_aspect_id", v.query_aspect_id},
           {"matched_aspect_id", v.matched_aspect_id ? json(*v.matched_aspect_id) : json(nullptr)}};
  if (v.rationale) j["rationale"] = *v.rationale;
}

void from_json(const json& j, MatchResult& v) {
  v.direction = enum_from<MatchDirection>(
      j.at("direction"), {{"recall", MatchDirection::RecallDir}, {"precision", MatchDirection::PrecisionDir}});
  j.at("query_aspect_id").get_to(v.query_aspect_id);
  const auto& m = j.at("matched_aspect_id");
  v.matched_aspect_id = m.is_null() ? std::nullopt : std::optional<AspectId>(m.get<AspectId>());
  v.rationale = j.contains("rationale") ? std::optional(j.at("rationale").get<std::string>()) : std::nullopt;
}

void to_json(json& j, const AlignmentJudgment& v) {
  j = json{{"ref_aspect_id", v.ref_aspect_id},
           {"cand_aspect_id", v.cand_aspect_id},
           {"content_aligned", v.content_aligned},
           {"style_aligned", v.style_aligned},
           {"content_rationale", v.content_rationale},
           {"style_rationale", v.style_rationale}};
}

void from_json(const json& j, AlignmentJudgment& v) {
  j.at("ref_aspect_id").get_to(v.ref_aspect_id);
  j.at("cand_aspect_id").get_to(v.cand_aspect_id);
  j.at("content_aligned").get_to(v.content_aligned);
  j.at("style_aligned").get_to(v.style_aligned);
  j.at("content_rationale").get_to(v.content_rationale);
  j.at("style_rationale").get_to(v.style_rationale);
}

void to_json(json& j, const ModeScore& v) {
  j = json{{"precision", v.precision}, {"recall", v.recall}, {"f_measure", v.f_measure}};
}

void from_json(const json& j, ModeScore& v) {
  j.at("precision").get_to(v.precision);
  j.at("recall").get_to(v.recall);
  j.at("f_measure").get_to(v.f_measure);
}

void to_json(json& j, const CallCounts& v) {
  j = json{{"extraction", v.extraction},
           {"matching", v.matching},
           {"alignment", v.alignment},
           {"total", v.total},
           {"reasks", v.reasks}};
}

void from_json(const json& j, CallCounts& v) {
  j.at("extraction").get_to(v.extraction);
  j.at("matching").get_to(v.matching);
  j.at("alignment").get_to(v.alignment);
  j.at("total").get_to(v.total);
  v.reasks = j.value("reasks", std::uint64_t{0});
}

void to_json(json& j, const ScoreReport& v) {
  json modes = json::object();
  for (const auto& [mode, score] : v.modes) modes[std::string(to_string(mode))] = score;
  j = json{{"modes", modes},
           {"llm_calls", v.llm_calls},
           {"degenerate_flag", v.degenerate_flag ? json(to_string(*v.degenerate_flag)) : json(nullptr)}};
}

void from_json(const json& j, ScoreReport& v) {
  v.modes.clear();
  for (const auto& [name, score] : j.at("modes").items()) {
    auto mode = parse_mode(name);
    if (!mode) throw json::other_error::create(501, "unknown mode '" + name + "'", &j);
    v.modes[*mode] = score.get<ModeScore>();
  }
  j.at("llm_calls").get_to(v.llm_calls);
  const auto& flag = j.at("degenerate_flag");
  if (flag.is_null()) {
    v.degenerate_flag.reset();
  } else {
    v.degenerate_flag = enum_from<DegenerateFlag>(
        flag, {{"empty_reference_aspects", DegenerateFlag::EmptyReferenceAspects},
               {"empty_candidate_aspects", DegenerateFlag::EmptyCandidateAspects},
               {"both_empty", DegenerateFlag::BothEmpty}});
  }
}

void to_json(json& j, const BackendIdentity& v) {
  j = json{{"model_id", v.model_id},
           {"temperature", v.temperature},
           {"retry_temperatures", v.retry_temperatures}};
}

void from_json(const json& j, BackendIdentity& v) {
  j.at("model_id").get_to(v.model_id);
  j.at("temperature").get_to(v.temperature);
  j.at("retry_temperatures").get_to(v.retry_temperatures);
}

void to_json(json& j, const ExplanationTrace& v) {
  auto judgments = v.judgments;
  std::sort(judgments.begin(), judgments.end(), [](const auto& a, const auto& b) {
    return std::pair(a.ref_aspect_id, a.cand_aspect_id) < std::pair(b.ref_aspect_id, b.cand_aspect_id);
  });
  j = json{{"instance_id", v.instance_id},
           {"candidate_index", v.candidate_index},
           {"reference", v.reference},
           {"candidate", v.candidate},
           {"recall_matches", v.recall_matches},
           {"precision_matches", v.precision_matches},
           {"judgments", judgments},
           {"report", v.report},
           {"backend", v.backend},
           {"template_versions", v.template_versions},
           {"warnings", v.warnings}};
}

void from_json(const json& j, ExplanationTrace& v) {
  j.at("instance_id").get_to(v.instance_id);
  j.at("candidate_index").get_to(v.candidate_index);
  j.at("reference").get_to(v.reference);
  j.at("candidate").get_to(v.candidate);
  j.at("recall_matches").get_to(v.recall_matches);
  j.at("precision_matches").get_to(v.precision_matches);
  j.at("judgments").get_to(v.judgments);
  j.at("report").get_to(v.report);
  j.at("backend").get_to(v.backend);
  j.at("template_versions").get_to(v.template_versions);
  j.at("warnings").get_to(v.warnings);
}

void validate(const EvalInstance& instance) {
  if (instance.id.empty()) throw ConfigError("instance id is empty");
  if (instance.reference.empty()) throw ConfigError("instance '" + instance.id + "' has an empty reference");
  if (instance.candidates.empty()) throw ConfigError("instance '" + instance.id + "' has no candidates");
  if (instance.profile) {
    for (const auto& doc : *instance.profile) {
      if (doc.text.empty()) throw ConfigError("instance '" + instance.id + "' has an empty profile document");
    }
  }
}

}  // namespace expert
