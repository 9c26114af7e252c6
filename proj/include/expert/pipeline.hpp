#pragma once

// Extraction -> directional matching -> alignment judging for one
// (reference, candidate) pair, producing an ExplanationTrace.

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "expert/llm_gateway.hpp"
#include "expert/model.hpp"
#include "expert/prompt_kit.hpp"

namespace expert {

struct PipelineOptions {
  double temperature = 0.0;
  int max_reasks = 3;
  int max_output_tokens = 2048;
  // Whitespace-token cap applied to texts before extraction; 0 = off.
  std::size_t truncate_tokens = 0;
};

/// Thread-safe per-evaluation counter of logical LLM calls.
class CallCounter {
 public:
  void add(Purpose purpose, std::uint64_t n = 1);
  void add_reask() { reasks_.fetch_add(1); }
  CallCounts snapshot() const;

 private:
  std::atomic<std::uint64_t> extraction_{0};
  std::atomic<std::uint64_t> matching_{0};
  std::atomic<std::uint64_t> alignment_{0};
  std::atomic<std::uint64_t> reasks_{0};
};

/// Collects trace warnings from concurrent tasks.
class WarningLog {
 public:
  void add(std::string warning);
  std::vector<std::string> take_sorted();

 private:
  std::mutex mu_;
  std::vector<std::string> warnings_;
};

class Evaluator;

/// One judgment per canonical (reference, candidate) pair per evaluation.
class JudgmentMemo {
 public:
  JudgmentMemo(const Evaluator& evaluator, CallCounter& counter, WarningLog* warnings = nullptr);

  /// Judges the pair on first request; later requests return the stored
  /// judgment without any LLM call.
  const AlignmentJudgment& get(const Aspect& ref_aspect, const Aspect& cand_aspect);
  std::vector<AlignmentJudgment> all() const;

 private:
  const Evaluator& evaluator_;
  CallCounter& counter_;
  WarningLog* warnings_;
  mutable std::mutex mu_;
  std::map<std::pair<AspectId, AspectId>, AlignmentJudgment> judged_;
};

class Evaluator {
 public:
  Evaluator(Gateway& gateway, const PromptKit& kit, PipelineOptions options = {});

  /// Throws ExtractionFailed when the output stays malformed after re-asks.
  /// An empty aspect list is a valid (degenerate) result.
  AspectSet extract_aspects(std::string_view task_input, std::string_view target_text, SourceRole role,
                            CallCounter& counter, WarningLog* warnings = nullptr) const;

  /// One matching call per query aspect. An empty pool maps every query to
  /// "none" without calls. Unparseable answers degrade to "none".
  std::vector<MatchResult> match_direction(const AspectSet& query_set, const AspectSet& pool_set,
                                           MatchDirection direction, CallCounter& counter,
                                           WarningLog* warnings = nullptr) const;

  /// One content and one style call. Unparseable verdicts degrade to
  /// not-aligned with rationale "unparseable verdict".
  AlignmentJudgment judge_pair(const Aspect& ref_aspect, const Aspect& cand_aspect, CallCounter& counter,
                               WarningLog* warnings = nullptr) const;

  /// Throws DegenerateInput for empty texts, ExtractionFailed, or gateway
  /// errors.
  ExplanationTrace evaluate(const EvalInstance& instance, std::size_t candidate_index) const;

  Gateway& gateway() const { return gateway_; }
  const PromptKit& kit() const { return kit_; }
  const PipelineOptions& options() const { return options_; }

 private:
  struct Answer {
    std::string text;
    int attempts = 1;
  };

  // Sends the prompt, re-asking while `accept` rejects the answer. Returns
  // the last answer and whether it was accepted.
  template <typename Accept>
  std::pair<Answer, bool> ask(const std::string& prompt, Purpose purpose, CallCounter& counter,
                              Accept&& accept) const;

  Gateway& gateway_;
  const PromptKit& kit_;
  PipelineOptions options_;
};

}  // namespace expert
