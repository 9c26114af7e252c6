#include "expert/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "expert/errors.hpp"
#include "expert/reporting.hpp"

namespace expert {

using nlohmann::json;

namespace {

std::string trim_copy(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string file_stem_for(const std::string& id, std::size_t candidate_index) {
  std::string out;
  for (char c : id) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out + "_c" + std::to_string(candidate_index);
}

struct Job {
  std::size_t instance;
  std::size_t candidate;
};

std::vector<Job> make_jobs(std::span<const EvalInstance> instances, const std::optional<std::size_t>& candidate) {
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (candidate) {
      jobs.push_back({i, *candidate});
    } else {
      for (std::size_t c = 0; c < instances[i].candidates.size(); ++c) jobs.push_back({i, c});
    }
  }
  return jobs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

std::vector<EvalInstance> parse_dataset(std::istream& in) {
  std::vector<EvalInstance> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedLine(line_no, "not valid JSON");
    if (!j.is_object()) throw MalformedLine(line_no, "expected a JSON object");
    EvalInstance inst;
    try {
      j.get_to(inst);
      validate(inst);
    } catch (const json::exception& e) {
      throw MalformedLine(line_no, e.what());
    } catch (const ConfigError& e) {
      throw MalformedLine(line_no, e.what());
    }
    if (!ids.insert(inst.id).second) {
      throw DuplicateId("line " + std::to_string(line_no) + ": duplicate instance id '" + inst.id + "'");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<EvalInstance> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read dataset " + path.string());
  return parse_dataset(in);
}

// ---------------------------------------------------------------------------
// Scorers

PointwiseScorer make_expert_scorer(const Evaluator& evaluator, AggregationMode mode) {
  return [&evaluator, mode](const EvalInstance& instance, std::size_t index, std::string_view text) {
    EvalInstance copy = instance;
    copy.candidates.at(index) = std::string(text);
    return evaluator.evaluate(copy, index).report.modes.at(mode).f_measure;
  };
}

PointwiseScorer make_gemba_scorer(Gateway& gateway, const PromptKit& kit, BaselineOptions options) {
  return [&gateway, &kit, options](const EvalInstance& instance, std::size_t, std::string_view text) {
    return gemba_score(gateway, kit, instance.input, text, instance.reference, options);
  };
}

PointwiseScorer make_geval_scorer(Gateway& gateway, const PromptKit& kit, BaselineOptions options) {
  return [&gateway, &kit, options](const EvalInstance& instance, std::size_t, std::string_view text) {
    return geval_score(gateway, kit, instance.input, text, instance.reference, options).score;
  };
}

PointwiseScorer make_rouge_scorer() {
  return [](const EvalInstance& instance, std::size_t, std::string_view text) {
    return rouge_l(text, instance.reference).f_measure;
  };
}

ExternalScores ExternalScores::parse(std::istream& in) {
  ExternalScores scores;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim_copy(cell));
    if (cells.size() != 3) throw MalformedLine(line_no, "expected instance_id,candidate_index,score");
    try {
      std::size_t used = 0;
      const auto index = std::stoul(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("index");
      const double score = std::stod(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument("score");
      scores.set(cells[0], index, score);
    } catch (const std::logic_error&) {
      if (line_no == 1) continue;  // header
      throw MalformedLine(line_no, "bad candidate index or score");
    }
  }
  return scores;
}

ExternalScores ExternalScores::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scores file " + path.string());
  return parse(in);
}

void ExternalScores::set(const std::string& id, std::size_t candidate_index, double score) {
  scores_[{id, candidate_index}] = score;
}

std::optional<double> ExternalScores::find(const std::string& id, std::size_t candidate_index) const {
  auto it = scores_.find({id, candidate_index});
  if (it == scores_.end()) return std::nullopt;
  return it->second;
}

PointwiseScorer ExternalScores::scorer() const {
  return [this](const EvalInstance& instance, std::size_t index, std::string_view) {
    auto s = find(instance.id, index);
    if (!s) throw MissingLabel("no external score for '" + instance.id + "' candidate " + std::to_string(index));
    return *s;
  };
}

// ---------------------------------------------------------------------------
// Batch

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ExtractionFailed*>(&e)) return "extraction_failed";
  if (dynamic_cast<const TransportError*>(&e)) return "transport";
  if (dynamic_cast<const BackendRefused*>(&e)) return "backend_refused";
  if (dynamic_cast<const BudgetExceeded*>(&e)) return "budget_exceeded";
  if (dynamic_cast<const DegenerateInput*>(&e)) return "degenerate_input";
  if (dynamic_cast<const UnparseableScore*>(&e)) return "unparseable_score";
  if (dynamic_cast<const AllSamplesUnparseable*>(&e)) return "unparseable_score";
  if (dynamic_cast<const MissingLabel*>(&e)) return "missing_score";
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const RenderError*>(&e)) return "config";
  return "error";
}

std::vector<BatchRecord> batch_evaluate(std::span<const EvalInstance> instances, const Evaluator& evaluator,
                                        const BatchOptions& options) {
  const auto jobs = make_jobs(instances, options.candidate);
  std::vector<BatchRecord> records(jobs.size());
  if (options.trace_dir) std::filesystem::create_directories(*options.trace_dir);
  parallel_for(jobs.size(), options.parallelism, [&](std::size_t k) {
    const auto& inst = instances[jobs[k].instance];
    auto& rec = records[k];
    rec.instance_id = inst.id;
    rec.candidate_index = jobs[k].candidate;
    try {
      auto trace = evaluator.evaluate(inst, jobs[k].candidate);
      rec.report = trace.report;
      rec.score = trace.report.modes.at(options.primary_mode).f_measure;
      if (options.trace_dir) {
        auto path = *options.trace_dir / (file_stem_for(inst.id, jobs[k].candidate) + ".json");
        std::ofstream(path) << render_trace_json(trace);
        rec.trace_path = path;
      }
    } catch (const std::exception& e) {
      rec.error = e.what();
      rec.error_kind = error_kind(e);
    }
  });
  return records;
}

std::vector<BatchRecord> batch_score(std::span<const EvalInstance> instances, const PointwiseScorer& scorer,
                                     const BatchOptions& options) {
  const auto jobs = make_jobs(instances, options.candidate);
  std::vector<BatchRecord> records(jobs.size());
  parallel_for(jobs.size(), options.parallelism, [&](std::size_t k) {
    const auto& inst = instances[jobs[k].instance];
    auto& rec = records[k];
    rec.instance_id = inst.id;
    rec.candidate_index = jobs[k].candidate;
    try {
      if (jobs[k].candidate >= inst.candidates.size()) {
        throw ConfigError("instance '" + inst.id + "' has no candidate " + std::to_string(jobs[k].candidate));
      }
      rec.score = scorer(inst, jobs[k].candidate, inst.candidates[jobs[k].candidate]);
    } catch (const std::exception& e) {
      rec.error = e.what();
      rec.error_kind = error_kind(e);
    }
  });
  return records;
}

// ---------------------------------------------------------------------------
// Agreement

std::string_view to_string(Winner w) {
  switch (w) {
    case Winner::A: return "A";
    case Winner::B: return "B";
    case Winner::Tie: return "tie";
  }
  return "unknown";
}

Winner pairwise_winner(double score_a, double score_b, double tie_tolerance) {
  if (score_a > score_b + tie_tolerance) return Winner::A;
  if (score_b > score_a + tie_tolerance) return Winner::B;
  return Winner::Tie;
}

HumanLabelFile HumanLabelFile::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("label file must be a JSON object of id -> votes");
  HumanLabelFile labels;
  for (const auto& [id, votes] : j.items()) {
    if (!votes.is_array() || votes.empty()) throw ConfigError("label '" + id + "' needs at least one vote");
    auto& out = labels.votes[id];
    for (const auto& v : votes) {
      const auto s = v.is_string() ? v.get<std::string>() : std::string{};
      if (s == "A" || s == "a") {
        out.push_back(Winner::A);
      } else if (s == "B" || s == "b") {
        out.push_back(Winner::B);
      } else {
        throw ConfigError("label '" + id + "' has a vote that is neither A nor B");
      }
    }
  }
  return labels;
}

HumanLabelFile HumanLabelFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read label file " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("label file " + path.string() + " is not valid JSON");
  return from_json(j);
}

Winner HumanLabelFile::majority(const std::string& id) const {
  auto it = votes.find(id);
  if (it == votes.end()) throw MissingLabel("no human label for '" + id + "'");
  const auto a = std::count(it->second.begin(), it->second.end(), Winner::A);
  const auto b = std::count(it->second.begin(), it->second.end(), Winner::B);
  return a > b ? Winner::A : b > a ? Winner::B : Winner::Tie;
}

double agreement(const std::map<std::string, Winner>& predicted, const HumanLabelFile& labels, TiePolicy policy) {
  if (predicted.empty()) return 0.0;
  double agreed = 0.0;
  for (const auto& [id, winner] : predicted) {
    const auto label = labels.majority(id);
    if (winner == label) {
      agreed += 1.0;
    } else if (policy == TiePolicy::HalfCredit && winner == Winner::Tie) {
      agreed += 0.5;
    }
  }
  return agreed / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------------------
// Trick attack

std::string append_phrase(std::string_view candidate, std::string_view phrase) {
  return std::string(candidate) + " " + std::string(phrase);
}

AttackReport build_attack_report(std::string phrase, std::vector<AttackEntry> entries) {
  AttackReport report;
  report.phrase = std::move(phrase);
  double relative_sum = 0.0;
  for (auto& e : entries) {
    e.delta = e.tricked_score - e.real_score;
    report.sorted_deltas.push_back(e.delta);
    if (e.real_score > 0.0) {
      relative_sum += e.delta / e.real_score;
      ++report.relative_count;
    }
  }
  std::sort(report.sorted_deltas.begin(), report.sorted_deltas.end());
  report.mean_relative_change =
      report.relative_count == 0 ? 0.0 : relative_sum / static_cast<double>(report.relative_count);
  report.entries = std::move(entries);
  return report;
}

AttackReport trick_attack(std::span<const EvalInstance> instances, std::string_view phrase,
                          const PointwiseScorer& real_scorer, const PointwiseScorer& tricked_scorer,
                          const BatchOptions& options) {
  const auto jobs = make_jobs(instances, options.candidate.value_or(0));
  std::vector<std::optional<AttackEntry>> slots(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), options.parallelism, [&](std::size_t k) {
    const auto& inst = instances[jobs[k].instance];
    const auto idx = jobs[k].candidate;
    try {
      if (idx >= inst.candidates.size()) {
        throw ConfigError("instance '" + inst.id + "' has no candidate " + std::to_string(idx));
      }
      AttackEntry e;
      e.instance_id = inst.id;
      e.candidate_index = idx;
      e.real_score = real_scorer(inst, idx, inst.candidates[idx]);
      e.tricked_score = tricked_scorer(inst, idx, append_phrase(inst.candidates[idx], phrase));
      slots[k] = e;
    } catch (const std::exception& ex) {
      errors[k] = inst.id + ": " + ex.what();
    }
  });
  std::vector<AttackEntry> entries;
  for (auto& s : slots) {
    if (s) entries.push_back(std::move(*s));
  }
  auto report = build_attack_report(std::string(phrase), std::move(entries));
  for (auto& e : errors) {
    if (!e.empty()) report.errors.push_back(std::move(e));
  }
  return report;
}

AttackReport trick_attack(std::span<const EvalInstance> instances, std::string_view phrase,
                          const PointwiseScorer& scorer, const BatchOptions& options) {
  return trick_attack(instances, phrase, scorer, scorer, options);
}

void to_json(json& j, const AttackReport& report) {
  json entries = json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"instance_id", e.instance_id},
                       {"candidate_index", e.candidate_index},
                       {"real_score", e.real_score},
                       {"tricked_score", e.tricked_score},
                       {"delta", e.delta}});
  }
  j = json{{"phrase", report.phrase},
           {"entries", entries},
           {"sorted_deltas", report.sorted_deltas},
           {"mean_relative_change", report.mean_relative_change},
           {"mean_relative_change_percent", report.mean_relative_change * 100.0},
           {"relative_count", report.relative_count},
           {"n", report.entries.size()},
           {"errors", report.errors}};
}

// ---------------------------------------------------------------------------
// Sensitivity

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

SensitivityReport sensitivity_curve(const std::map<double, std::vector<double>>& scored_groups) {
  if (scored_groups.size() < 2) throw EmptyBucket("sensitivity needs at least two replacement-rate buckets");
  SensitivityReport report;
  std::vector<double> rates, means;
  for (const auto& [rate, scores] : scored_groups) {
    if (scores.empty()) throw EmptyBucket("bucket for rate " + std::to_string(rate) + " has no scores");
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    report.buckets.push_back({rate, mean, scores.size()});
    rates.push_back(rate);
    means.push_back(mean);
  }
  report.rank_correlation = spearman(rates, means);
  return report;
}

std::map<double, std::vector<double>> load_scored_groups(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read scored groups " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("scored groups must be a JSON object rate -> scores");
  std::map<double, std::vector<double>> groups;
  for (const auto& [key, scores] : j.items()) {
    double rate = 0.0;
    try {
      std::size_t used = 0;
      rate = std::stod(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::logic_error&) {
      throw ConfigError("scored groups key '" + key + "' is not a rate");
    }
    if (!scores.is_array()) throw ConfigError("scored groups entry '" + key + "' must be an array");
    auto& bucket = groups[rate];
    for (const auto& s : scores) {
      if (!s.is_number()) throw ConfigError("scored groups entry '" + key + "' has a non-numeric score");
      bucket.push_back(s.get<double>());
    }
  }
  return groups;
}

void to_json(json& j, const SensitivityReport& report) {
  json buckets = json::array();
  for (const auto& b : report.buckets) {
    buckets.push_back({{"rate", b.rate}, {"mean_score", b.mean_score}, {"count", b.count}});
  }
  j = json{{"buckets", buckets}, {"rank_correlation", report.rank_correlation}};
}

}  // namespace expert
