#include <numeric>

#include "expert/errors.hpp"
#include "expert/llm_gateway.hpp"
#include "expert/prompt_kit.hpp"
#include "expert/scoring.hpp"

namespace expert {

double gemba_score(Gateway& gateway, const PromptKit& kit, std::string_view task_input, std::string_view candidate,
                   std::string_view reference, const BaselineOptions& options) {
  const auto prompt = kit.render_pointwise_baseline(task_input, candidate, reference, options.token_cap);
  std::string last;
  for (int reask = 0; reask <= options.max_reasks; ++reask) {
    ChatRequest req;
    req.user_text = reask == 0 ? prompt : prompt + std::string(reask_suffix());
    req.temperature = reask_temperature(gateway.config().retry_temperatures, 0.0, reask);
    req.max_output_tokens = options.max_output_tokens;
    req.purpose = Purpose::Baseline;
    last = gateway.complete(req).samples.front();
    if (auto parsed = parse_score(last); parsed.ok()) return *parsed.value / 100.0;
  }
  throw UnparseableScore("pointwise score unparseable after " + std::to_string(options.max_reasks) +
                         " re-asks: '" + last.substr(0, 80) + "'");
}

GEvalResult geval_from_samples(std::span<const std::string> samples) {
  GEvalResult result;
  for (const auto& s : samples) {
    if (auto parsed = parse_score(s); parsed.ok()) {
      result.parsed.push_back(*parsed.value);
    } else {
      ++result.dropped;
    }
  }
  if (result.parsed.empty()) {
    throw AllSamplesUnparseable("none of " + std::to_string(samples.size()) + " samples parsed");
  }
  // sum_s s * count(s) / n, as one division of exact integers.
  const long long total = std::accumulate(result.parsed.begin(), result.parsed.end(), 0LL);
  result.score = static_cast<double>(total) / (100.0 * static_cast<double>(result.parsed.size()));
  return result;
}

GEvalResult geval_score(Gateway& gateway, const PromptKit& kit, std::string_view task_input,
                        std::string_view candidate, std::string_view reference, const BaselineOptions& options) {
  ChatRequest req;
  req.user_text = kit.render_pointwise_baseline(task_input, candidate, reference, options.token_cap);
  req.temperature = options.geval_temperature;
  req.sample_count = options.geval_samples;
  req.max_output_tokens = options.max_output_tokens;
  req.purpose = Purpose::Baseline;
  const auto response = gateway.complete(req);
  return geval_from_samples(response.samples);
}

}  // namespace expert
