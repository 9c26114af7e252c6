#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "expert/reporting.hpp"
#include "scenario.hpp"

using namespace expert;
using namespace expert::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const PromptKit& kit() {
  static const PromptKit k = PromptKit::load_default();
  return k;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

class Workdir {
 public:
  Workdir() : root_(fs::temp_directory_path() / ("expert_cli_" + std::to_string(::getpid()) + "_" +
                                                  std::to_string(counter_++))) {
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workdir() { fs::remove_all(root_); }

  std::string file(const std::string& name, const std::string& content) const {
    const auto p = root_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p.string();
  }
  std::string path(const std::string& name) const { return (root_ / name).string(); }

  Result run(const std::string& args) const {
    const auto err_path = root_ / "stderr.txt";
    const std::string cmd = std::string(EXPERT_CLI_PATH) + " " + args + " 2>" + err_path.string();
    Result r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err_path);
    return r;
  }

 private:
  static inline int counter_ = 0;
  fs::path root_;
};

std::string mode_key(AggregationMode m) { return std::string(to_string(m)); }

// s1 with the reference itself as the candidate: every aspect matches its
// twin and every pair is aligned.
Scenario s1_copy() {
  auto s = s1();
  s.candidate = s.reference;
  s.cand_aspects = s.ref_aspects;
  s.recall_choice = {0, 1};
  s.precision_choice = {0, 1};
  s.verdicts = {{{0, 0}, {true, true}}, {{1, 1}, {true, true}}};
  return s;
}

json dataset_line(const std::string& id, const Scenario& s, std::vector<std::string> extra = {}) {
  json cands = json::array({s.candidate});
  for (auto& e : extra) cands.push_back(e);
  return json{{"id", id}, {"input", s.input}, {"reference", s.reference}, {"candidates", cands}};
}

struct BatchFixture {
  std::vector<Scenario> scenarios;
  std::string dataset;
  std::string scripted;
};

BatchFixture batch_fixture(const Workdir& w) {
  std::mt19937_64 rng(77);
  BatchFixture f;
  f.scenarios = {s1(), twin(rng, 1), random_scenario(rng, 2)};
  ScriptBuilder b(kit());
  std::string lines;
  for (std::size_t i = 0; i < f.scenarios.size(); ++i) {
    b.add(f.scenarios[i]);
    lines += dataset_line("inst" + std::to_string(i), f.scenarios[i]).dump() + "\n";
  }
  f.dataset = w.file("data.jsonl", lines);
  f.scripted = w.file("script.json", b.script().dump());
  return f;
}

}  // namespace

TEST_CASE("score prints the requested modes") {
  Workdir w;
  const auto s = s1();
  ScriptBuilder b(kit());
  b.add(s);
  const auto script = w.file("script.json", b.script().dump());
  const auto input = w.file("input.txt", s.input);
  const auto ref = w.file("ref.txt", s.reference);
  const auto cand = w.file("cand.txt", s.candidate);

  const auto r = w.run("score --scripted " + script + " --input " + input + " --reference " + ref + " --candidate " +
                       cand + " --mode average --trace-out " + w.path("trace.json") + " --report-out " +
                       w.path("report.html"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  REQUIRE(j["modes"].size() == 1);
  CHECK(j["modes"][mode_key(AggregationMode::ContentStyleAverage)]["f_measure"] == 0.6);
  CHECK(j["llm_calls"]["total"] == 11);

  const auto trace = parse_trace_json(slurp(w.path("trace.json")));
  CHECK(trace.instance_id == "cli");
  CHECK(extract_embedded_trace(slurp(w.path("report.html"))) == trace);

  const auto md = w.run("score --scripted " + script + " --input " + input + " --reference " + ref +
                        " --candidate " + cand + " --report-out " + w.path("report.md"));
  REQUIRE(md.code == 0);
  CHECK(json::parse(md.out)["modes"].size() == 5);
  CHECK(slurp(w.path("report.md")).find("Unmatched generated aspects (1)") != std::string::npos);
}

TEST_CASE("score of a perfect copy is 1 in every mode") {
  Workdir w;
  const auto s = s1_copy();
  ScriptBuilder b(kit());
  b.add(s);
  const auto r = w.run("score --scripted " + w.file("script.json", b.script().dump()) + " --input " +
                       w.file("input.txt", s.input) + " --reference " + w.file("ref.txt", s.reference) +
                       " --candidate " + w.file("cand.txt", s.candidate));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  CHECK(j["modes"].size() == 5);
  for (const auto& [name, m] : j["modes"].items()) {
    CAPTURE(name);
    CHECK(m["precision"] == 1.0);
    CHECK(m["recall"] == 1.0);
    CHECK(m["f_measure"] == 1.0);
  }
}

TEST_CASE("argument errors") {
  Workdir w;
  const auto ref = w.file("ref.txt", "text");
  CHECK(w.run("score --candidate " + ref).code == 2);
  CHECK(w.run("score --reference " + ref + " --candidate " + ref + " --bogus").code == 2);
  CHECK(w.run("").code == 2);
  CHECK(w.run("frobnicate").code == 2);
  const auto nobackend = w.run("score --reference " + ref + " --candidate " + ref);
  CHECK(nobackend.code == 2);
  CHECK(nobackend.err.find("no backend configured") != std::string::npos);
  CHECK(w.run("score --reference " + w.path("missing.txt") + " --candidate " + ref + " --scripted x").code == 2);
  CHECK(w.run("score --reference " + ref + " --candidate " + ref + " --mode median --scripted x").code == 2);
  CHECK(w.run("score --reference " + ref + " --candidate " + ref + " --parallelism 0 --scripted x").code == 2);

  const auto help = w.run("score --help");
  CHECK(help.code == 0);
  for (const auto* flag : {"--reference", "--candidate", "--mode", "--trace-out", "--scripted", "--endpoint"}) {
    CHECK_MESSAGE(help.out.find(flag) != std::string::npos, flag);
  }
  CHECK(w.run("--help").code == 0);
}

TEST_CASE("backend failures map to exit codes") {
  Workdir w;
  const auto ref = w.file("ref.txt", "Some reference.");
  const auto cand = w.file("cand.txt", "Some candidate.");
  const auto garbage = w.file("garbage.json", R"({"completions":{},"default":"I cannot do that."})");
  const auto r = w.run("score --scripted " + garbage + " --reference " + ref + " --candidate " + cand);
  CHECK(r.code == 4);
  CHECK(r.err.find("error:") != std::string::npos);

  const auto empty = w.file("empty.json", R"({"completions":{}})");
  CHECK(w.run("score --scripted " + empty + " --reference " + ref + " --candidate " + cand).code == 3);

  CHECK(w.run("score --scripted " + w.file("bad.json", "not json") + " --reference " + ref + " --candidate " + cand)
            .code == 2);
}

TEST_CASE("batch over a scripted dataset is reproducible") {
  Workdir w;
  const auto f = batch_fixture(w);
  const auto base = "batch --scripted " + f.scripted + " --dataset " + f.dataset;
  const auto r1 = w.run(base + " --out-dir " + w.path("out1") + " --parallelism 1");
  REQUIRE_MESSAGE(r1.code == 0, r1.err);
  const auto r2 = w.run(base + " --out-dir " + w.path("out2") + " --parallelism 8");
  REQUIRE(r2.code == 0);

  const auto j = json::parse(r1.out);
  CHECK(j["records"] == 3);
  CHECK(j["successes"] == 3);
  CHECK(j["errors"] == 0);
  std::uint64_t calls = 0;
  for (const auto& s : f.scenarios) calls += oracle_calls(s);
  CHECK(j["mean_llm_calls"] == static_cast<double>(calls) / 3.0);

  std::istringstream lines(slurp(w.path("out1") + "/scores.jsonl"));
  std::string line;
  std::size_t i = 0;
  while (std::getline(lines, line)) {
    const auto rec = json::parse(line);
    REQUIRE(i < f.scenarios.size());
    CHECK(rec["instance_id"] == "inst" + std::to_string(i));
    CHECK(rec["score"].get<double>() ==
          oracle_score(f.scenarios[i], AggregationMode::ContentStyleAverage).f.value());
    ++i;
  }
  CHECK(i == 3);

  for (const auto* name : {"summary.txt", "summary.csv"}) {
    CHECK(slurp(w.path("out1") + "/" + name) == slurp(w.path("out2") + "/" + name));
  }
  std::size_t traces = 0;
  for (const auto& e : fs::directory_iterator(w.path("out1") + "/traces")) {
    ++traces;
    CHECK(slurp(e.path()) == slurp(fs::path(w.path("out2")) / "traces" / e.path().filename()));
  }
  CHECK(traces == 3);

  const auto modes = w.run(base + " --modes content");
  REQUIRE(modes.code == 0);
  CHECK(json::parse(modes.out)["mean_score"] ==
        (oracle_score(f.scenarios[0], AggregationMode::Content).f.value() +
         oracle_score(f.scenarios[1], AggregationMode::Content).f.value() +
         oracle_score(f.scenarios[2], AggregationMode::Content).f.value()) /
            3.0);

  const auto rouge = w.run("batch --metric rouge-l --dataset " + f.dataset);
  REQUIRE(rouge.code == 0);
  CHECK(json::parse(rouge.out)["successes"] == 3);

  CHECK(w.run("batch --metric bleu --dataset " + f.dataset).code == 2);
  CHECK(w.run("batch --metric rouge-l --candidate x --dataset " + f.dataset).code == 2);
  CHECK(w.run("batch --metric rouge-l --dataset " + w.file("bad.jsonl", "{}\n")).code == 5);
  CHECK(w.run("batch --metric rouge-l --dataset " + w.path("none.jsonl")).code == 2);
  const auto empty = w.run("batch --metric rouge-l --dataset " + w.file("empty.jsonl", ""));
  REQUIRE(empty.code == 0);
  CHECK(json::parse(empty.out)["records"] == 0);
  CHECK(json::parse(empty.out)["mean_score"].is_null());
}

TEST_CASE("batch records failures per instance") {
  Workdir w;
  auto f = batch_fixture(w);
  // Only the first scenario is scripted.
  ScriptBuilder b(kit());
  b.add(f.scenarios[0]);
  const auto partial = w.file("partial.json", b.script().dump());
  const auto r = w.run("batch --scripted " + partial + " --dataset " + f.dataset);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  CHECK(j["successes"] == 1);
  CHECK(j["errors"] == 2);
  CHECK(j["mean_score"] == 0.6);
}

TEST_CASE("compare against pairwise labels") {
  Workdir w;
  const auto a = s1();
  const auto copy = s1_copy();
  ScriptBuilder b(kit());
  b.add(a);
  b.add(copy);
  const auto script = w.file("script.json", b.script().dump());
  const auto dataset = w.file("pairs.jsonl", dataset_line("p1", a, {copy.candidate}).dump() + "\n" +
                                                 dataset_line("unlabeled", a, {copy.candidate}).dump() + "\n" +
                                                 dataset_line("single", a).dump() + "\n");
  const auto labels = w.file("labels.json", R"({"p1":["B","B","A"],"single":["A"]})");
  const auto ext = w.file("external.csv", "instance_id,candidate_index,score\np1,0,0.9\np1,1,0.1\n");

  const auto r = w.run("compare --scripted " + script + " --dataset " + dataset + " --labels " + labels +
                       " --metric expert --metric rouge-l --scores-file " + ext);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  CHECK(j["agreement"]["expert"] == 1.0);
  CHECK(j["agreement"]["rouge-l"] == 1.0);
  CHECK(j["agreement"]["external"] == 0.0);
  CHECK(j["n"]["expert"] == 1);
  CHECK(r.err.find("skipping unlabeled instance unlabeled") != std::string::npos);
  CHECK(r.err.find("skipping instance single") != std::string::npos);

  const auto tie = w.run("compare --dataset " + dataset + " --labels " + labels + " --scores-file " +
                         ext + " --tie-tolerance 0.9 --tie-policy half");
  REQUIRE(tie.code == 0);
  CHECK(json::parse(tie.out)["agreement"]["external"] == 0.5);

  CHECK(w.run("compare --dataset " + dataset + " --labels " + labels).code == 2);
  CHECK(w.run("compare --dataset " + dataset + " --labels " + labels + " --metric rouge-l --tie-policy maybe").code ==
        2);
  CHECK(w.run("compare --dataset " + dataset + " --labels " + w.file("bad.json", R"({"p1":["C"]})") +
              " --metric rouge-l")
            .code != 0);
}

TEST_CASE("attack writes a sorted delta curve") {
  Workdir w;
  const auto copy = s1_copy();
  const auto a = s1();
  const auto dataset =
      w.file("data.jsonl", dataset_line("copy", copy).dump() + "\n" + dataset_line("s1", a).dump() + "\n");
  const auto r = w.run("attack --metric rouge-l --dataset " + dataset + " --out " + w.path("atk"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  CHECK_FALSE(j.contains("entries"));
  const auto doc = json::parse(slurp(w.path("atk") + "/attack.json"));
  REQUIRE(doc["entries"].size() == 2);
  const auto deltas = doc["sorted_deltas"].get<std::vector<double>>();
  REQUIRE(deltas.size() == 2);
  CHECK(deltas[0] <= deltas[1]);
  // The copy scores 1 before the attack and strictly less after it.
  CHECK(deltas[0] < 0.0);
  const auto curve = slurp(w.path("atk") + "/attack_curve.csv");
  CHECK(curve.rfind("rank,delta\n0,", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 3);

  const auto real = w.file("real.csv", "instance_id,candidate_index,score\ncopy,0,0.5\ns1,0,0.4\n");
  const auto tricked = w.file("tricked.csv", "instance_id,candidate_index,score\ncopy,0,0.75\ns1,0,0.4\n");
  const auto ext = w.run("attack --dataset " + dataset + " --scores-file " + real + " --tricked-scores-file " +
                         tricked);
  REQUIRE_MESSAGE(ext.code == 0, ext.err);
  const auto e = json::parse(ext.out);
  CHECK(e["sorted_deltas"] == json::array({0.0, 0.25}));
  CHECK(e["mean_relative_change"] == 0.25);

  CHECK(w.run("attack --dataset " + dataset + " --scores-file " + real).code == 2);
  CHECK(w.run("attack --dataset " + dataset + " --metric bleu").code == 2);
}

TEST_CASE("sensitivity from scored groups") {
  Workdir w;
  const auto groups = w.file("groups.json", R"({"0": [1, 0.8], "0.5": [0.5], "1": [0.1, 0.3]})");
  const auto r = w.run("sensitivity --scored-groups " + groups + " --out " + w.path("sens"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  CHECK(j["rank_correlation"] == -1.0);
  CHECK(slurp(w.path("sens") + "/sensitivity.csv") == "rate,mean_score,count\n0,0.90000000000000002,2\n0.5,0.5,1\n1,"
                                                       "0.20000000000000001,2\n");
  CHECK(w.run("sensitivity --scored-groups " + w.file("one.json", R"({"0": [1]})")).code == 2);
  CHECK(w.run("sensitivity --scored-groups " + w.file("bad.json", R"({"x": [1]})")).code == 2);
  CHECK(w.run("sensitivity").code == 2);
}
