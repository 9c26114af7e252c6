// expert: command-line front end for the evaluator and the experiment harness.
//
// stdout carries machine-readable JSON only; diagnostics go to stderr.
// Exit codes: 0 ok, 2 configuration/input, 3 transport, 4 extraction, 5 parse.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "expert/errors.hpp"
#include "expert/harness.hpp"
#include "expert/llm_gateway.hpp"
#include "expert/pipeline.hpp"
#include "expert/prompt_kit.hpp"
#include "expert/reporting.hpp"
#include "expert/scoring.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace expert;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kTransport = 3, kExtraction = 4, kParse = 5 };

struct BackendFlags {
  std::string config_file;
  std::string scripted;
  std::string endpoint;
  std::string model;
  std::string cache_path;
  bool no_cache = false;
  int parallelism = 4;
  std::string templates;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--backend-config", config_file, "Backend configuration file (key = value)");
    cmd.add_option("--scripted", scripted, "Scripted backend file (offline, deterministic)");
    cmd.add_option("--endpoint", endpoint, "Chat-completions endpoint URL (overrides config)");
    cmd.add_option("--model", model, "Model identifier (overrides config)");
    cmd.add_option("--cache-path", cache_path, "Persistent response cache file");
    cmd.add_flag("--no-cache", no_cache, "Disable the response cache");
    cmd.add_option("--parallelism", parallelism, "Maximum in-flight requests and concurrent instances")
        ->check(CLI::Range(1, 1024));
    cmd.add_option("--templates", templates, "Prompt template directory");
  }
};

struct Runtime {
  BackendConfig config;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<PromptKit> kit;
  std::unique_ptr<Evaluator> evaluator;
};

Runtime make_runtime(const BackendFlags& flags, bool needs_backend) {
  Runtime rt;
  if (!flags.config_file.empty()) rt.config = load_backend_config(flags.config_file);
  if (!flags.endpoint.empty()) rt.config.endpoint = flags.endpoint;
  if (!flags.model.empty()) rt.config.model = flags.model;
  if (!flags.cache_path.empty()) rt.config.cache_path = fs::path(flags.cache_path);
  if (flags.no_cache) rt.config.cache_enabled = false;
  rt.config.parallelism_limit = flags.parallelism;

  rt.kit = std::make_unique<PromptKit>(flags.templates.empty() ? PromptKit::load_default()
                                                               : PromptKit::load(flags.templates));
  if (!needs_backend) return rt;

  std::shared_ptr<Backend> backend;
  if (!flags.scripted.empty()) {
    backend = ScriptedBackend::from_file(flags.scripted);
  } else if (!rt.config.endpoint.empty()) {
    backend = std::make_shared<HttpBackend>(rt.config);
  } else {
    throw ConfigError("no backend configured: pass --scripted or --backend-config/--endpoint");
  }
  rt.gateway = std::make_unique<Gateway>(rt.config, backend);
  rt.evaluator = std::make_unique<Evaluator>(*rt.gateway, *rt.kit);
  return rt;
}

std::string read_file(const std::string& path, std::string_view what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + std::string(what) + " file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << content;
}

std::vector<AggregationMode> parse_modes(const std::vector<std::string>& names) {
  std::vector<AggregationMode> modes;
  for (const auto& n : names) {
    auto m = parse_mode(n);
    if (!m) throw ConfigError("unknown mode '" + n + "' (content, style, and, or, average)");
    modes.push_back(*m);
  }
  if (modes.empty()) {
    // Average first: it is the headline score when no mode is named.
    modes.push_back(AggregationMode::ContentStyleAverage);
    for (auto m : kAllModes) {
      if (m != AggregationMode::ContentStyleAverage) modes.push_back(m);
    }
  }
  return modes;
}

json ledger_json(const Gateway& gateway) {
  const auto l = gateway.call_ledger();
  return json{{"network_calls", l.network_calls}, {"cache_hits", l.cache_hits}, {"by_purpose", l.by_purpose}};
}

bool is_llm_metric(const std::string& metric) { return metric == "expert" || metric == "gemba" || metric == "geval"; }

PointwiseScorer scorer_for(const std::string& metric, Runtime& rt, AggregationMode mode) {
  if (metric == "expert") return make_expert_scorer(*rt.evaluator, mode);
  if (metric == "gemba") return make_gemba_scorer(*rt.gateway, *rt.kit);
  if (metric == "geval") return make_geval_scorer(*rt.gateway, *rt.kit);
  if (metric == "rouge-l") return make_rouge_scorer();
  throw ConfigError("unknown metric '" + metric + "' (expert, gemba, geval, rouge-l)");
}

// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string input, reference, candidate, trace_out, report_out;
  std::vector<std::string> modes;
};

int run_score(const ScoreArgs& a, const BackendFlags& flags) {
  const auto modes = parse_modes(a.modes);
  EvalInstance inst;
  inst.id = "cli";
  inst.input = a.input.empty() ? std::string{} : read_file(a.input, "input");
  inst.reference = read_file(a.reference, "reference");
  inst.candidates = {read_file(a.candidate, "candidate")};
  auto rt = make_runtime(flags, true);
  const auto trace = rt.evaluator->evaluate(inst, 0);

  if (!a.trace_out.empty()) write_file(a.trace_out, render_trace_json(trace));
  if (!a.report_out.empty()) {
    const bool html = fs::path(a.report_out).extension() == ".html";
    write_file(a.report_out, render_trace_report(trace, html ? ReportFormat::Html : ReportFormat::Markdown));
  }
  json out = trace.report;
  json filtered = json::object();
  for (auto m : modes) filtered[std::string(to_string(m))] = out["modes"][std::string(to_string(m))];
  out["modes"] = filtered;
  std::cout << out.dump(2) << '\n';
  return kOk;
}

struct BatchArgs {
  std::string dataset, out_dir, metric = "expert", candidate = "0";
  std::vector<std::string> modes;
};

std::optional<std::size_t> parse_candidate(const std::string& s) {
  if (s == "all") return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoul(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("--candidate must be an index or 'all'");
}

int run_batch(const BatchArgs& a, const BackendFlags& flags) {
  const auto modes = parse_modes(a.modes);
  if (!is_llm_metric(a.metric) && a.metric != "rouge-l") throw ConfigError("unknown metric '" + a.metric + "'");
  const auto instances = load_dataset(a.dataset);
  auto rt = make_runtime(flags, is_llm_metric(a.metric));

  BatchOptions opts;
  opts.candidate = parse_candidate(a.candidate);
  opts.primary_mode = modes.front();
  opts.parallelism = flags.parallelism;
  const fs::path out_dir = a.out_dir;
  std::vector<BatchRecord> records;
  if (a.metric == "expert") {
    if (!a.out_dir.empty()) opts.trace_dir = out_dir / "traces";
    records = batch_evaluate(instances, *rt.evaluator, opts);
  } else {
    records = batch_score(instances, scorer_for(a.metric, rt, opts.primary_mode), opts);
  }
  const auto summary = summary_table(records);
  if (!a.out_dir.empty()) {
    write_file(out_dir / "scores.jsonl", render_records_jsonl(records));
    write_file(out_dir / "summary.txt", summary.text);
    write_file(out_dir / "summary.csv", summary.csv);
  }
  std::cerr << summary.text;

  json out{{"metric", a.metric}, {"records", records.size()}, {"successes", summary.successes},
           {"errors", summary.errors}};
  double score_sum = 0.0;
  std::uint64_t calls = 0;
  for (const auto& r : records) {
    if (r.error || !r.score) continue;
    score_sum += *r.score;
    if (r.report) calls += r.report->llm_calls.total;
  }
  out["mean_score"] = summary.successes ? json(score_sum / static_cast<double>(summary.successes)) : json(nullptr);
  if (a.metric == "expert") {
    out["mean_llm_calls"] =
        summary.successes ? json(static_cast<double>(calls) / static_cast<double>(summary.successes)) : json(nullptr);
  } else if (rt.gateway && summary.successes) {
    const auto ledger = rt.gateway->call_ledger();
    const auto it = ledger.by_purpose.find("baseline");
    const double baseline_calls = it == ledger.by_purpose.end() ? 0.0 : static_cast<double>(it->second);
    out["mean_llm_calls"] = baseline_calls / static_cast<double>(records.size());
  }
  if (rt.gateway) out["gateway"] = ledger_json(*rt.gateway);
  std::cout << out.dump(2) << '\n';
  return kOk;
}

struct CompareArgs {
  std::string dataset, labels, tie_policy = "strict", mode = "average";
  std::vector<std::string> metrics, scores_files;
  double tie_tolerance = 0.0;
};

int run_compare(const CompareArgs& a, const BackendFlags& flags) {
  if (a.metrics.empty() && a.scores_files.empty()) throw ConfigError("compare needs --metric or --scores-file");
  const auto mode = parse_modes({a.mode}).front();
  TiePolicy policy;
  if (a.tie_policy == "strict") {
    policy = TiePolicy::Strict;
  } else if (a.tie_policy == "half") {
    policy = TiePolicy::HalfCredit;
  } else {
    throw ConfigError("--tie-policy must be strict or half");
  }
  if (a.tie_tolerance < 0) throw ConfigError("--tie-tolerance must be >= 0");
  const auto instances = load_dataset(a.dataset);
  const auto labels = HumanLabelFile::load(a.labels);

  std::vector<EvalInstance> labeled;
  for (const auto& inst : instances) {
    if (!labels.contains(inst.id)) {
      std::cerr << "skipping unlabeled instance " << inst.id << '\n';
    } else if (inst.candidates.size() < 2) {
      std::cerr << "skipping instance " << inst.id << " with fewer than two candidates\n";
    } else {
      labeled.push_back(inst);
    }
  }

  bool needs_backend = false;
  for (const auto& m : a.metrics) needs_backend |= is_llm_metric(m);
  auto rt = make_runtime(flags, needs_backend);

  std::vector<std::pair<std::string, PointwiseScorer>> scorers;
  std::vector<std::unique_ptr<ExternalScores>> external;
  for (const auto& m : a.metrics) scorers.emplace_back(m, scorer_for(m, rt, mode));
  for (const auto& f : a.scores_files) {
    external.push_back(std::make_unique<ExternalScores>(ExternalScores::load(f)));
    scorers.emplace_back(fs::path(f).stem().string(), external.back()->scorer());
  }

  BatchOptions opts;
  opts.parallelism = flags.parallelism;
  json agreement_out = json::object();
  json counts = json::object();
  json errors = json::object();
  for (const auto& [name, scorer] : scorers) {
    opts.candidate = std::nullopt;
    std::vector<EvalInstance> pairs;
    for (auto inst : labeled) {
      inst.candidates.resize(2);
      pairs.push_back(std::move(inst));
    }
    const auto records = batch_score(pairs, scorer, opts);
    std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> scores;
    std::size_t failed = 0;
    for (const auto& r : records) {
      if (r.error) {
        ++failed;
        std::cerr << name << ": " << r.instance_id << ": " << *r.error << '\n';
        continue;
      }
      (r.candidate_index == 0 ? scores[r.instance_id].first : scores[r.instance_id].second) = r.score;
    }
    std::map<std::string, Winner> predicted;
    for (const auto& [id, s] : scores) {
      if (s.first && s.second) predicted[id] = pairwise_winner(*s.first, *s.second, a.tie_tolerance);
    }
    agreement_out[name] = agreement(predicted, labels, policy);
    counts[name] = predicted.size();
    errors[name] = failed;
  }
  std::cout << json{{"agreement", agreement_out}, {"n", counts}, {"errors", errors}}.dump(2) << '\n';
  return kOk;
}

struct AttackArgs {
  std::string dataset, metric = "expert", phrase{kDefaultTrickPhrase}, out, mode = "average";
  std::string scores_file, tricked_scores_file;
  std::size_t candidate = 0;
};

int run_attack(const AttackArgs& a, const BackendFlags& flags) {
  const auto mode = parse_modes({a.mode}).front();
  const auto instances = load_dataset(a.dataset);
  BatchOptions opts;
  opts.candidate = a.candidate;
  opts.parallelism = flags.parallelism;

  AttackReport report;
  if (!a.scores_file.empty() || !a.tricked_scores_file.empty()) {
    if (a.scores_file.empty() || a.tricked_scores_file.empty()) {
      throw ConfigError("external attack scores need both --scores-file and --tricked-scores-file");
    }
    const auto real = ExternalScores::load(a.scores_file);
    const auto tricked = ExternalScores::load(a.tricked_scores_file);
    report = trick_attack(instances, a.phrase, real.scorer(), tricked.scorer(), opts);
  } else {
    auto rt = make_runtime(flags, is_llm_metric(a.metric));
    report = trick_attack(instances, a.phrase, scorer_for(a.metric, rt, mode), opts);
  }
  for (const auto& e : report.errors) std::cerr << "error: " << e << '\n';

  json doc = report;
  if (!a.out.empty()) {
    const fs::path out = a.out;
    write_file(out / "attack.json", doc.dump(2) + "\n");
    std::ostringstream csv;
    csv << "rank,delta\n";
    char buf[64];
    for (std::size_t i = 0; i < report.sorted_deltas.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, report.sorted_deltas[i]);
      csv << buf;
    }
    write_file(out / "attack_curve.csv", csv.str());
  }
  doc.erase("entries");
  std::cout << doc.dump(2) << '\n';
  return kOk;
}

struct SensitivityArgs {
  std::string scored_groups, out;
};

int run_sensitivity(const SensitivityArgs& a) {
  const auto report = sensitivity_curve(load_scored_groups(a.scored_groups));
  json doc = report;
  if (!a.out.empty()) {
    const fs::path out = a.out;
    write_file(out / "sensitivity.json", doc.dump(2) + "\n");
    std::ostringstream csv;
    csv << "rate,mean_score,count\n";
    char buf[96];
    for (const auto& b : report.buckets) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", b.rate, b.mean_score, b.count);
      csv << buf;
    }
    write_file(out / "sensitivity.csv", csv.str());
  }
  std::cout << doc.dump(2) << '\n';
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ExtractionFailed*>(&e)) return kExtraction;
  if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const BackendRefused*>(&e) ||
      dynamic_cast<const BudgetExceeded*>(&e)) {
    return kTransport;
  }
  if (dynamic_cast<const MalformedLine*>(&e) || dynamic_cast<const DuplicateId*>(&e) ||
      dynamic_cast<const UnparseableScore*>(&e) || dynamic_cast<const AllSamplesUnparseable*>(&e)) {
    return kParse;
  }
  return kConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainable reference-based evaluation of personalized text generation"};
  app.require_subcommand(1);

  BackendFlags flags;

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Score one candidate against a reference");
  score_cmd->add_option("--input", score.input, "File with the task input (user prompt)");
  score_cmd->add_option("--reference", score.reference, "File with the reference text")->required();
  score_cmd->add_option("--candidate", score.candidate, "File with the generated text")->required();
  score_cmd->add_option("--mode", score.modes, "Aggregation modes to print (content, style, and, or, average)");
  score_cmd->add_option("--trace-out", score.trace_out, "Write the JSON explanation trace here");
  score_cmd->add_option("--report-out", score.report_out, "Write a .md or .html report here");
  flags.add_to(*score_cmd);

  BatchArgs batch;
  auto* batch_cmd = app.add_subcommand("batch", "Score every instance of a JSONL dataset");
  batch_cmd->add_option("--dataset", batch.dataset, "JSONL dataset")->required();
  batch_cmd->add_option("--modes", batch.modes, "Aggregation modes; the first is the headline score");
  batch_cmd->add_option("--out-dir", batch.out_dir, "Directory for scores.jsonl, summaries and traces");
  batch_cmd->add_option("--metric", batch.metric, "expert, gemba, geval or rouge-l");
  batch_cmd->add_option("--candidate", batch.candidate, "Candidate index or 'all'");
  flags.add_to(*batch_cmd);

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "Agreement of metrics with human pairwise labels");
  compare_cmd->add_option("--dataset", compare.dataset, "JSONL dataset (candidates 0 and 1 are compared)")->required();
  compare_cmd->add_option("--labels", compare.labels, "Label file: {\"id\": [\"A\", \"B\", ...]}")->required();
  compare_cmd->add_option("--metric", compare.metrics, "Metrics to compare (expert, gemba, geval, rouge-l)");
  compare_cmd->add_option("--scores-file", compare.scores_files, "External CSV scores: id,candidate_index,score");
  compare_cmd->add_option("--tie-tolerance", compare.tie_tolerance, "Score gap treated as a tie");
  compare_cmd->add_option("--tie-policy", compare.tie_policy, "strict or half");
  compare_cmd->add_option("--mode", compare.mode, "Aggregation mode for the expert metric");
  flags.add_to(*compare_cmd);

  AttackArgs attack;
  auto* attack_cmd = app.add_subcommand("attack", "Append a confidence phrase and measure score changes");
  attack_cmd->add_option("--dataset", attack.dataset, "JSONL dataset")->required();
  attack_cmd->add_option("--metric", attack.metric, "expert, gemba, geval or rouge-l");
  attack_cmd->add_option("--phrase", attack.phrase, "Phrase appended to each candidate");
  attack_cmd->add_option("--out", attack.out, "Directory for attack.json and attack_curve.csv");
  attack_cmd->add_option("--candidate", attack.candidate, "Candidate index to attack");
  attack_cmd->add_option("--mode", attack.mode, "Aggregation mode for the expert metric");
  attack_cmd->add_option("--scores-file", attack.scores_file, "External CSV scores of the original candidates");
  attack_cmd->add_option("--tricked-scores-file", attack.tricked_scores_file,
                         "External CSV scores of the attacked candidates");
  flags.add_to(*attack_cmd);

  SensitivityArgs sens;
  auto* sens_cmd = app.add_subcommand("sensitivity", "Mean score per profile replacement rate");
  sens_cmd->add_option("--scored-groups", sens.scored_groups, "JSON object: rate -> list of scores")->required();
  sens_cmd->add_option("--out", sens.out, "Directory for sensitivity.json and sensitivity.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }

  try {
    if (*score_cmd) return run_score(score, flags);
    if (*batch_cmd) return run_batch(batch, flags);
    if (*compare_cmd) return run_compare(compare, flags);
    if (*attack_cmd) return run_attack(attack, flags);
    if (*sens_cmd) return run_sensitivity(sens);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kConfig;
}
