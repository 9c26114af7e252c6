#include "expert/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <future>
#include <set>

#include "expert/errors.hpp"
#include "expert/scoring.hpp"

namespace expert {

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string trimmed(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

// Waits for every future before rethrowing the first failure, so no task
// outlives the data it references.
template <typename T>
std::vector<T> collect(std::vector<std::future<T>>& futures) {
  std::vector<T> out;
  out.reserve(futures.size());
  std::exception_ptr first_error;
  for (auto& f : futures) {
    try {
      out.push_back(f.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace

void CallCounter::add(Purpose purpose, std::uint64_t n) {
  switch (purpose) {
    case Purpose::Extraction: extraction_.fetch_add(n); break;
    case Purpose::Matching: matching_.fetch_add(n); break;
    case Purpose::Alignment: alignment_.fetch_add(n); break;
    case Purpose::Baseline: break;
  }
}

CallCounts CallCounter::snapshot() const {
  CallCounts c;
  c.extraction = extraction_.load();
  c.matching = matching_.load();
  c.alignment = alignment_.load();
  c.total = c.extraction + c.matching + c.alignment;
  c.reasks = reasks_.load();
  return c;
}

void WarningLog::add(std::string warning) {
  std::lock_guard lock(mu_);
  warnings_.push_back(std::move(warning));
}

std::vector<std::string> WarningLog::take_sorted() {
  std::lock_guard lock(mu_);
  auto out = std::move(warnings_);
  warnings_.clear();
  std::sort(out.begin(), out.end());
  return out;
}

JudgmentMemo::JudgmentMemo(const Evaluator& evaluator, CallCounter& counter, WarningLog* warnings)
    : evaluator_(evaluator), counter_(counter), warnings_(warnings) {}

const AlignmentJudgment& JudgmentMemo::get(const Aspect& ref_aspect, const Aspect& cand_aspect) {
  const auto key = std::pair(ref_aspect.aspect_id, cand_aspect.aspect_id);
  {
    std::lock_guard lock(mu_);
    if (auto it = judged_.find(key); it != judged_.end()) return it->second;
  }
  auto judgment = evaluator_.judge_pair(ref_aspect, cand_aspect, counter_, warnings_);
  std::lock_guard lock(mu_);
  // std::map references stay valid across inserts.
  return judged_.emplace(key, std::move(judgment)).first->second;
}

std::vector<AlignmentJudgment> JudgmentMemo::all() const {
  std::lock_guard lock(mu_);
  std::vector<AlignmentJudgment> out;
  for (const auto& [key, j] : judged_) out.push_back(j);
  return out;
}

Evaluator::Evaluator(Gateway& gateway, const PromptKit& kit, PipelineOptions options)
    : gateway_(gateway), kit_(kit), options_(options) {}

template <typename Accept>
std::pair<Evaluator::Answer, bool> Evaluator::ask(const std::string& prompt, Purpose purpose, CallCounter& counter,
                                                  Accept&& accept) const {
  Answer answer;
  for (int reask = 0; reask <= options_.max_reasks; ++reask) {
    ChatRequest req;
    req.user_text = reask == 0 ? prompt : prompt + std::string(reask_suffix());
    req.temperature = reask_temperature(gateway_.config().retry_temperatures, options_.temperature, reask);
    req.max_output_tokens = options_.max_output_tokens;
    req.purpose = purpose;
    if (reask == 0) {
      counter.add(purpose);
    } else {
      counter.add_reask();
    }
    answer.text = gateway_.complete(req).samples.front();
    answer.attempts = reask + 1;
    if (accept(answer.text)) return {answer, true};
  }
  return {answer, false};
}

AspectSet Evaluator::extract_aspects(std::string_view task_input, std::string_view target_text, SourceRole role,
                                     CallCounter& counter, WarningLog* warnings) const {
  const auto prompt = kit_.render_aspect_extraction(task_input, target_text);
  ParseOutcome<std::vector<Aspect>> outcome;
  auto [answer, ok] = ask(prompt, Purpose::Extraction, counter, [&](const std::string& raw) {
    outcome = parse_aspect_list(raw);
    return outcome.ok() || outcome.failure_reason == ParseFailure::EmptyResult;
  });
  if (!ok) {
    throw ExtractionFailed(std::string(to_string(role)) + " aspect extraction failed after " +
                           std::to_string(options_.max_reasks) + " re-asks (" +
                           std::string(to_string(*outcome.failure_reason)) + ")");
  }
  AspectSet set;
  set.source_role = role;
  set.source_text = std::string(target_text);
  if (outcome.value) set.aspects = std::move(*outcome.value);

  if (warnings) {
    const auto who = std::string(to_string(role));
    if (answer.attempts > 1) {
      warnings->add(who + " extraction needed " + std::to_string(answer.attempts - 1) + " re-ask(s)");
    }
    for (const auto& w : outcome.warnings) warnings->add(who + " extraction dropped " + w);
    for (const auto& a : set.aspects) {
      for (std::size_t e = 0; e < a.evidences.size(); ++e) {
        if (set.source_text.find(a.evidences[e]) == std::string::npos) {
          warnings->add(who + " aspect " + std::to_string(a.aspect_id) + " evidence " + std::to_string(e) +
                        " is not verbatim in the source text");
        }
      }
    }
    if (set.aspects.empty()) warnings->add(who + " text produced no aspects");
  }
  return set;
}

std::vector<MatchResult> Evaluator::match_direction(const AspectSet& query_set, const AspectSet& pool_set,
                                                    MatchDirection direction, CallCounter& counter,
                                                    WarningLog* warnings) const {
  std::vector<MatchResult> results;
  if (pool_set.aspects.empty()) {
    for (const auto& q : query_set.aspects) results.push_back(MatchResult{direction, q.aspect_id, std::nullopt, {}});
    return results;
  }

  std::vector<std::future<MatchResult>> futures;
  for (const auto& query : query_set.aspects) {
    futures.push_back(std::async(std::launch::async, [&, direction]() {
      const auto prompt = kit_.render_aspect_matching(query, pool_set.aspects);
      ParseOutcome<std::optional<AspectId>> outcome;
      auto [answer, ok] = ask(prompt.text, Purpose::Matching, counter, [&](const std::string& raw) {
        outcome = parse_match_choice(raw, prompt.option_ids);
        return outcome.ok();
      });
      MatchResult r{direction, query.aspect_id, std::nullopt, trimmed(answer.text)};
      if (ok) {
        r.matched_aspect_id = *outcome.value;
      } else if (warnings) {
        warnings->add(std::string(to_string(direction)) + " match for aspect " + std::to_string(query.aspect_id) +
                      " unparseable, treated as none");
      }
      return r;
    }));
  }
  results = collect(futures);

  if (warnings) {
    std::map<AspectId, int> uses;
    for (const auto& r : results) {
      if (r.matched_aspect_id) ++uses[*r.matched_aspect_id];
    }
    for (const auto& [id, n] : uses) {
      if (n > 1) {
        warnings->add(std::string(to_string(direction)) + " direction: " + std::to_string(n) +
                      " queries matched the same aspect " + std::to_string(id));
      }
    }
  }
  return results;
}

AlignmentJudgment Evaluator::judge_pair(const Aspect& ref_aspect, const Aspect& cand_aspect, CallCounter& counter,
                                        WarningLog* warnings) const {
  const auto ref_block = join_evidences(ref_aspect);
  const auto cand_block = join_evidences(cand_aspect);

  auto verdict_for = [&](const std::string& prompt, std::string_view dimension) {
    ParseOutcome<Verdict> outcome;
    auto [answer, ok] = ask(prompt, Purpose::Alignment, counter, [&](const std::string& raw) {
      outcome = parse_alignment(raw);
      return outcome.ok();
    });
    if (ok) return *outcome.value;
    if (warnings) {
      warnings->add(std::string(dimension) + " verdict for pair (" + std::to_string(ref_aspect.aspect_id) + ", " +
                    std::to_string(cand_aspect.aspect_id) + ") unparseable, treated as not aligned");
    }
    return Verdict{false, "unparseable verdict"};
  };

  auto content = std::async(std::launch::async,
                            [&] { return verdict_for(kit_.render_content_matching(ref_block, cand_block), "content"); });
  auto style = std::async(std::launch::async,
                          [&] { return verdict_for(kit_.render_style_matching(ref_block, cand_block), "style"); });
  std::vector<std::future<Verdict>> futures;
  futures.push_back(std::move(content));
  futures.push_back(std::move(style));
  const auto verdicts = collect(futures);

  AlignmentJudgment j;
  j.ref_aspect_id = ref_aspect.aspect_id;
  j.cand_aspect_id = cand_aspect.aspect_id;
  j.content_aligned = verdicts[0].aligned;
  j.content_rationale = verdicts[0].rationale;
  j.style_aligned = verdicts[1].aligned;
  j.style_rationale = verdicts[1].rationale;
  return j;
}

ExplanationTrace Evaluator::evaluate(const EvalInstance& instance, std::size_t candidate_index) const {
  if (candidate_index >= instance.candidates.size()) {
    throw ConfigError("instance '" + instance.id + "' has no candidate " + std::to_string(candidate_index));
  }
  const auto& raw_candidate = instance.candidates[candidate_index];
  if (blank(instance.reference)) throw DegenerateInput("instance '" + instance.id + "': empty reference text");
  if (blank(raw_candidate)) throw DegenerateInput("instance '" + instance.id + "': empty candidate text");

  const auto reference_text = truncate_tokens(instance.reference, options_.truncate_tokens);
  const auto candidate_text = truncate_tokens(raw_candidate, options_.truncate_tokens);

  CallCounter counter;
  WarningLog warnings;

  std::vector<std::future<AspectSet>> extraction;
  extraction.push_back(std::async(std::launch::async, [&] {
    return extract_aspects(instance.input, reference_text, SourceRole::Reference, counter, &warnings);
  }));
  extraction.push_back(std::async(std::launch::async, [&] {
    return extract_aspects(instance.input, candidate_text, SourceRole::Candidate, counter, &warnings);
  }));
  auto sets = collect(extraction);

  ExplanationTrace trace;
  trace.instance_id = instance.id;
  trace.candidate_index = candidate_index;
  trace.reference = std::move(sets[0]);
  trace.candidate = std::move(sets[1]);

  std::vector<std::future<std::vector<MatchResult>>> matching;
  matching.push_back(std::async(std::launch::async, [&] {
    return match_direction(trace.reference, trace.candidate, MatchDirection::RecallDir, counter, &warnings);
  }));
  matching.push_back(std::async(std::launch::async, [&] {
    return match_direction(trace.candidate, trace.reference, MatchDirection::PrecisionDir, counter, &warnings);
  }));
  auto directions = collect(matching);
  trace.recall_matches = std::move(directions[0]);
  trace.precision_matches = std::move(directions[1]);

  std::set<std::pair<AspectId, AspectId>> pairs;
  for (const auto& m : trace.recall_matches) {
    if (m.matched_aspect_id) pairs.emplace(m.query_aspect_id, *m.matched_aspect_id);
  }
  for (const auto& m : trace.precision_matches) {
    if (m.matched_aspect_id) pairs.emplace(*m.matched_aspect_id, m.query_aspect_id);
  }

  JudgmentMemo memo(*this, counter, &warnings);
  std::vector<std::future<int>> judging;
  for (const auto& [ref_id, cand_id] : pairs) {
    const Aspect* ref = trace.reference.find(ref_id);
    const Aspect* cand = trace.candidate.find(cand_id);
    judging.push_back(std::async(std::launch::async, [&memo, ref, cand] {
      memo.get(*ref, *cand);
      return 0;
    }));
  }
  collect(judging);
  trace.judgments = memo.all();

  trace.report = score_aspects(trace.reference, trace.candidate, trace.recall_matches, trace.precision_matches,
                               trace.judgments);
  trace.report.llm_calls = counter.snapshot();
  trace.backend = BackendIdentity{gateway_.backend_id(), options_.temperature, gateway_.config().retry_temperatures};
  trace.template_versions = kit_.versions();
  trace.warnings = warnings.take_sorted();
  return trace;
}

}  // namespace expert
