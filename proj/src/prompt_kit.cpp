#include "expert/prompt_kit.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "expert/errors.hpp"
#include "expert/hashing.hpp"

#ifndef EXPERT_DEFAULT_TEMPLATE_DIR
#define EXPERT_DEFAULT_TEMPLATE_DIR "templates"
#endif

namespace expert {

using nlohmann::json;

namespace {

constexpr std::pair<TemplateId, std::string_view> kTemplateFiles[] = {
    {TemplateId::AspectExtraction, "aspect_extraction"},
    {TemplateId::AspectMatching, "aspect_matching"},
    {TemplateId::ContentMatching, "content_matching"},
    {TemplateId::StyleMatching, "style_matching"},
    {TemplateId::PointwiseBaseline, "pointwise_baseline"},
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Position of the first whole-word, case-insensitive occurrence of `word`.
std::optional<std::size_t> find_word(std::string_view raw, std::string_view word) {
  const auto hay = lower(raw);
  std::size_t pos = 0;
  while ((pos = hay.find(word, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(hay[pos - 1]));
    const auto end = pos + word.size();
    const bool right_ok = end >= hay.size() || !std::isalnum(static_cast<unsigned char>(hay[end]));
    if (left_ok && right_ok) return pos;
    pos = end;
  }
  return std::nullopt;
}

struct IntegerToken {
  std::size_t pos;
  std::string digits;
  bool negative;
};

std::optional<IntegerToken> first_integer(std::string_view raw) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!is_digit(raw[i])) continue;
    std::size_t j = i;
    while (j < raw.size() && is_digit(raw[j])) ++j;
    const bool negative = i > 0 && raw[i - 1] == '-';
    return IntegerToken{i, std::string(raw.substr(i, j - i)), negative};
  }
  return std::nullopt;
}

// Strips separators a model tends to put between a verdict and its reason.
std::string_view strip_separators(std::string_view s) {
  for (;;) {
    s = trim(s);
    if (s.empty()) return s;
    if (s.front() == '-' || s.front() == ':' || s.front() == ',' || s.front() == '.' || s.front() == ';' ||
        s.front() == '*' || s.front() == '!') {
      s.remove_prefix(1);
      continue;
    }
    // UTF-8 en dash / em dash.
    if (s.size() >= 3 && static_cast<unsigned char>(s[0]) == 0xE2 && static_cast<unsigned char>(s[1]) == 0x80 &&
        (static_cast<unsigned char>(s[2]) == 0x93 || static_cast<unsigned char>(s[2]) == 0x94)) {
      s.remove_prefix(3);
      continue;
    }
    return s;
  }
}

std::optional<bool> verdict_from_json(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = lower(trim(v.get<std::string>()));
    if (s == "yes" || s == "true" || s == "aligned") return true;
    if (s == "no" || s == "false" || s == "not aligned" || s == "misaligned") return false;
  }
  if (v.is_number_integer()) {
    const auto n = v.get<long long>();
    if (n == 0 || n == 1) return n == 1;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(TemplateId id) {
  for (const auto& [tid, name] : kTemplateFiles) {
    if (tid == id) return name;
  }
  return "unknown";
}

std::string_view to_string(ParseFailure failure) {
  switch (failure) {
    case ParseFailure::NotJson: return "not_json";
    case ParseFailure::SchemaViolation: return "schema_violation";
    case ParseFailure::OutOfRangeChoice: return "out_of_range_choice";
    case ParseFailure::EmptyResult: return "empty_result";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Templates

PromptTemplate make_template(TemplateId id, std::string body) {
  PromptTemplate t;
  t.template_id = id;
  t.version = sha256_hex(body).substr(0, 16);
  t.body = std::move(body);
  return t;
}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> names;
  std::size_t pos = 0;
  while ((pos = body.find("{{", pos)) != std::string::npos) {
    const auto end = body.find("}}", pos + 2);
    if (end == std::string::npos) break;
    names.push_back(body.substr(pos + 2, end - pos - 2));
    pos = end + 2;
  }
  return names;
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& bindings) const {
  std::string out;
  out.reserve(body.size() + 256);
  std::size_t pos = 0;
  for (;;) {
    const auto open = body.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = body.find("}}", open + 2);
    if (close == std::string::npos) break;
    const auto name = body.substr(open + 2, close - open - 2);
    auto it = bindings.find(name);
    if (it == bindings.end()) {
      throw RenderError("template " + std::string(to_string(template_id)) + ": unbound placeholder '" + name + "'");
    }
    out.append(body, pos, open - pos);
    out += it->second;
    pos = close + 2;
  }
  out.append(body, pos, std::string::npos);
  return out;
}

PromptKit PromptKit::load(const std::filesystem::path& dir) {
  PromptKit kit;
  for (const auto& [id, name] : kTemplateFiles) {
    const auto path = dir / (std::string(name) + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read template " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    kit.templates_.emplace(id, make_template(id, ss.str()));
  }
  return kit;
}

std::filesystem::path PromptKit::default_dir() {
  if (const char* env = std::getenv("EXPERT_TEMPLATES"); env && *env) return env;
  return EXPERT_DEFAULT_TEMPLATE_DIR;
}

const PromptTemplate& PromptKit::get(TemplateId id) const { return templates_.at(id); }

std::map<std::string, std::string> PromptKit::versions() const {
  std::map<std::string, std::string> out;
  for (const auto& [id, t] : templates_) out[std::string(to_string(id))] = t.version;
  return out;
}

std::string PromptKit::render_aspect_extraction(std::string_view task_input, std::string_view target_text) const {
  if (target_text.empty()) throw RenderError("aspect extraction needs a non-empty target text");
  return get(TemplateId::AspectExtraction)
      .render({{"task_input", task_input.empty() ? std::string(kNoTaskContext) : std::string(task_input)},
               {"target_text", std::string(target_text)}});
}

MatchingPrompt PromptKit::render_aspect_matching(const Aspect& query, std::span<const Aspect> pool) const {
  if (pool.empty()) throw RenderError("aspect matching needs a non-empty pool");
  MatchingPrompt prompt;
  std::string options;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    options += "[" + std::to_string(k) + "] Title: " + pool[k].title + "\n    Description: " + pool[k].description +
               "\n";
    prompt.option_ids.push_back(pool[k].aspect_id);
  }
  options += "[none] None of the aspects above is a suitable match.";
  const auto query_text = "Title: " + query.title + "\nDescription: " + query.description;
  prompt.text = get(TemplateId::AspectMatching).render({{"query", query_text}, {"options", options}});
  return prompt;
}

std::string PromptKit::render_content_matching(std::string_view evidence_ref, std::string_view evidence_cand) const {
  if (evidence_ref.empty() || evidence_cand.empty()) throw RenderError("content matching needs both evidence blocks");
  return get(TemplateId::ContentMatching)
      .render({{"reference_evidence", std::string(evidence_ref)}, {"candidate_evidence", std::string(evidence_cand)}});
}

std::string PromptKit::render_style_matching(std::string_view evidence_ref, std::string_view evidence_cand) const {
  if (evidence_ref.empty() || evidence_cand.empty()) throw RenderError("style matching needs both evidence blocks");
  return get(TemplateId::StyleMatching)
      .render({{"reference_evidence", std::string(evidence_ref)}, {"candidate_evidence", std::string(evidence_cand)}});
}

std::string PromptKit::render_pointwise_baseline(std::string_view task_input, std::string_view candidate,
                                                 std::string_view reference, std::size_t token_cap) const {
  if (trim(reference).empty()) throw RenderError("pointwise baseline needs a non-empty reference");
  return get(TemplateId::PointwiseBaseline)
      .render({{"task_input", task_input.empty() ? std::string(kNoTaskContext) : std::string(task_input)},
               {"reference", truncate_tokens(reference, token_cap)},
               {"candidate", truncate_tokens(candidate, token_cap)}});
}

std::string truncate_tokens(std::string_view text, std::size_t cap) {
  if (cap == 0) return std::string(text);
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (++count == cap) return std::string(text.substr(0, i));
  }
  return std::string(text);
}

std::string join_evidences(const Aspect& aspect) {
  std::string out;
  for (std::size_t i = 0; i < aspect.evidences.size(); ++i) {
    if (i) out.push_back('\n');
    out += aspect.evidences[i];
  }
  return out;
}

std::string_view reask_suffix() {
  return "\n\nYour previous output format was invalid. Respond with the required format only.";
}

double reask_temperature(const std::vector<double>& schedule, double base, int reask) {
  if (reask <= 0 || schedule.empty()) return base;
  return schedule[std::min<std::size_t>(static_cast<std::size_t>(reask - 1), schedule.size() - 1)];
}

// ---------------------------------------------------------------------------
// Parsers

std::optional<json> find_first_json(std::string_view raw, char open) {
  for (std::size_t start = raw.find(open); start != std::string_view::npos; start = raw.find(open, start + 1)) {
    std::vector<char> stack;
    bool in_string = false;
    bool escaped = false;
    std::optional<std::size_t> end;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '[' || c == '{') {
        stack.push_back(c == '[' ? ']' : '}');
      } else if (c == ']' || c == '}') {
        if (stack.empty() || stack.back() != c) break;
        stack.pop_back();
        if (stack.empty()) {
          end = i + 1;
          break;
        }
      }
    }
    if (!end) continue;
    auto parsed = json::parse(raw.substr(start, *end - start), nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_discarded()) return parsed;
  }
  return std::nullopt;
}

json aspect_list_json(std::span<const Aspect> aspects) {
  json out = json::array();
  for (const auto& a : aspects) {
    out.push_back({{"title", a.title}, {"description", a.description}, {"sentences", a.evidences}});
  }
  return out;
}

ParseOutcome<std::vector<Aspect>> parse_aspect_list(std::string_view raw) {
  using Outcome = ParseOutcome<std::vector<Aspect>>;
  auto parsed = find_first_json(raw, '[');
  if (!parsed) return Outcome::failure(ParseFailure::NotJson);
  if (parsed->empty()) return Outcome::failure(ParseFailure::EmptyResult);

  std::vector<Aspect> aspects;
  std::vector<std::string> warnings;
  std::size_t index = 0;
  for (const auto& item : *parsed) {
    const auto where = "item " + std::to_string(index++);
    if (!item.is_object()) {
      warnings.push_back(where + ": not an object");
      continue;
    }
    auto title_it = item.find("title");
    if (title_it == item.end() || !title_it->is_string() || trim(title_it->get<std::string>()).empty()) {
      warnings.push_back(where + ": missing title");
      continue;
    }
    const json* evidence_field = nullptr;
    for (const char* key : {"sentences", "evidences", "evidence"}) {
      if (auto it = item.find(key); it != item.end()) {
        evidence_field = &*it;
        break;
      }
    }
    std::vector<std::string> evidences;
    if (evidence_field && evidence_field->is_array()) {
      for (const auto& e : *evidence_field) {
        if (e.is_string() && !trim(e.get<std::string>()).empty()) evidences.push_back(e.get<std::string>());
      }
    } else if (evidence_field && evidence_field->is_string() && !trim(evidence_field->get<std::string>()).empty()) {
      evidences.push_back(evidence_field->get<std::string>());
    }
    if (evidences.empty()) {
      warnings.push_back(where + ": missing evidences");
      continue;
    }
    Aspect a;
    a.aspect_id = static_cast<AspectId>(aspects.size());
    a.title = title_it->get<std::string>();
    if (auto d = item.find("description"); d != item.end() && d->is_string()) a.description = d->get<std::string>();
    a.evidences = std::move(evidences);
    aspects.push_back(std::move(a));
  }
  if (aspects.empty()) return Outcome::failure(ParseFailure::SchemaViolation, std::move(warnings));
  return Outcome::success(std::move(aspects), std::move(warnings));
}

ParseOutcome<std::optional<AspectId>> parse_match_choice(std::string_view raw, std::span<const AspectId> valid_ids) {
  using Outcome = ParseOutcome<std::optional<AspectId>>;
  const auto none_pos = find_word(raw, "none");
  const auto integer = first_integer(raw);
  if (none_pos && (!integer || *none_pos < integer->pos)) return Outcome::success(std::nullopt);
  if (!integer) return Outcome::failure(ParseFailure::SchemaViolation);
  if (integer->negative || integer->digits.size() > 9) return Outcome::failure(ParseFailure::OutOfRangeChoice);
  const auto option = static_cast<std::size_t>(std::stoul(integer->digits));
  if (option >= valid_ids.size()) return Outcome::failure(ParseFailure::OutOfRangeChoice);
  return Outcome::success(valid_ids[option]);
}

ParseOutcome<Verdict> parse_alignment(std::string_view raw) {
  using Outcome = ParseOutcome<Verdict>;
  const auto fallback = std::string(trim(raw));

  if (auto obj = find_first_json(raw, '{'); obj && obj->is_object()) {
    if (auto it = obj->find("aligned"); it != obj->end()) {
      if (auto verdict = verdict_from_json(*it)) {
        std::string reason;
        for (const char* key : {"reason", "rationale", "explanation"}) {
          if (auto r = obj->find(key); r != obj->end() && r->is_string()) {
            reason = std::string(trim(r->get<std::string>()));
            break;
          }
        }
        return Outcome::success(Verdict{*verdict, reason.empty() ? fallback : reason});
      }
    }
  }

  // Leading YES / NO token.
  std::string_view s = trim(raw);
  while (!s.empty() && (s.front() == '*' || s.front() == '#' || s.front() == '`' || s.front() == '"' ||
                        s.front() == '\'' || s.front() == '_')) {
    s.remove_prefix(1);
  }
  std::size_t word_end = 0;
  while (word_end < s.size() && is_alpha(s[word_end])) ++word_end;
  const auto word = lower(s.substr(0, word_end));
  if (word == "yes" || word == "no") {
    auto rest = s.substr(word_end);
    while (!rest.empty() && (rest.front() == '*' || rest.front() == '"' || rest.front() == '`')) rest.remove_prefix(1);
    const auto reason = std::string(strip_separators(rest));
    return Outcome::success(Verdict{word == "yes", reason.empty() ? fallback : reason});
  }
  return Outcome::failure(ParseFailure::SchemaViolation);
}

ParseOutcome<int> parse_score(std::string_view raw) {
  using Outcome = ParseOutcome<int>;
  const auto integer = first_integer(raw);
  if (!integer) return Outcome::failure(ParseFailure::SchemaViolation);
  if (integer->negative || integer->digits.size() > 3) return Outcome::failure(ParseFailure::OutOfRangeChoice);
  const int value = std::stoi(integer->digits);
  if (value > 100) return Outcome::failure(ParseFailure::OutOfRangeChoice);
  return Outcome::success(value);
}

}  // namespace expert
