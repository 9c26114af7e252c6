#include "scenario.hpp"

#include <numeric>
#include <set>
#include <stdexcept>

namespace expert::testing {

namespace {

const char* const kWords[] = {"battery", "screen",  "camera", "price",  "warm",   "formal",  "quick",
                              "gentle",  "results", "method", "novel",  "robust", "dataset", "user",
                              "story",   "river",   "night",  "mother", "garden", "letter",  "travel"};

std::string words(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kWords) - 1);
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += kWords[pick(rng)];
  }
  return out;
}

std::vector<Aspect> make_aspects(std::mt19937_64& rng, const std::string& tag, int count) {
  std::uniform_int_distribution<int> n_evidence(1, 3);
  std::uniform_int_distribution<int> n_words(2, 6);
  std::vector<Aspect> out;
  for (int i = 0; i < count; ++i) {
    Aspect a;
    a.aspect_id = i;
    a.title = tag + " topic " + std::to_string(i);
    a.description = "About " + words(rng, n_words(rng)) + ".";
    const int ne = n_evidence(rng);
    for (int e = 0; e < ne; ++e) {
      a.evidences.push_back(tag + " " + std::to_string(i) + "." + std::to_string(e) + " " + words(rng, n_words(rng)) +
                            ".");
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::string text_of(const std::vector<Aspect>& aspects, const std::string& fallback) {
  std::string out;
  for (const auto& a : aspects) {
    for (const auto& e : a.evidences) {
      if (!out.empty()) out += ' ';
      out += e;
    }
  }
  return out.empty() ? fallback : out;
}

std::string verdict_json(bool aligned, const std::string& reason) {
  return nlohmann::json{{"aligned", aligned}, {"reason", reason}}.dump();
}

std::int64_t eps_halves(std::pair<bool, bool> v, AggregationMode mode) {
  const bool c = v.first;
  const bool s = v.second;
  switch (mode) {
    case AggregationMode::Content: return c ? 2 : 0;
    case AggregationMode::Style: return s ? 2 : 0;
    case AggregationMode::ContentAndStyle: return c && s ? 2 : 0;
    case AggregationMode::ContentOrStyle: return c || s ? 2 : 0;
    case AggregationMode::ContentStyleAverage: return (c ? 1 : 0) + (s ? 1 : 0);
  }
  return 0;
}

Rational reduce(std::int64_t num, std::int64_t den) {
  if (num == 0) return {0, 1};
  const auto g = std::gcd(num, den);
  return {num / g, den / g};
}

}  // namespace

EvalInstance Scenario::instance() const {
  EvalInstance inst;
  inst.id = id;
  inst.task = "synthetic";
  inst.input = input;
  inst.reference = reference;
  inst.candidates = {candidate};
  return inst;
}

std::vector<std::pair<int, int>> Scenario::matched_pairs() const {
  std::set<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < recall_choice.size(); ++i) {
    if (recall_choice[i]) pairs.emplace(static_cast<int>(i), *recall_choice[i]);
  }
  for (std::size_t j = 0; j < precision_choice.size(); ++j) {
    if (precision_choice[j]) pairs.emplace(*precision_choice[j], static_cast<int>(j));
  }
  return {pairs.begin(), pairs.end()};
}

void ScriptBuilder::put(const std::string& user_text, std::vector<std::string> completions) {
  auto [it, inserted] = by_prompt_.emplace(user_text, completions);
  if (!inserted && it->second != completions) {
    throw std::logic_error("prompt scripted twice with different answers");
  }
}

void ScriptBuilder::add(const Scenario& s) {
  put(kit_.render_aspect_extraction(s.input, s.reference), {aspect_list_json(s.ref_aspects).dump()});
  put(kit_.render_aspect_extraction(s.input, s.candidate), {aspect_list_json(s.cand_aspects).dump()});

  auto script_direction = [&](const std::vector<Aspect>& queries, const std::vector<Aspect>& pool,
                              const std::vector<std::optional<int>>& choices) {
    if (pool.empty()) return;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto prompt = kit_.render_aspect_matching(queries[i], pool);
      const auto& c = choices.at(i);
      put(prompt.text, {c ? std::to_string(*c) : std::string("none")});
    }
  };
  script_direction(s.ref_aspects, s.cand_aspects, s.recall_choice);
  script_direction(s.cand_aspects, s.ref_aspects, s.precision_choice);

  for (const auto& [r, c] : s.matched_pairs()) {
    const auto it = s.verdicts.find({r, c});
    if (it == s.verdicts.end()) throw std::logic_error("matched pair without a scripted verdict");
    const auto ref_block = join_evidences(s.ref_aspects.at(r));
    const auto cand_block = join_evidences(s.cand_aspects.at(c));
    const auto tag = std::to_string(r) + "/" + std::to_string(c);
    put(kit_.render_content_matching(ref_block, cand_block),
        {verdict_json(it->second.first, "content " + tag + (it->second.first ? " agrees" : " differs"))});
    put(kit_.render_style_matching(ref_block, cand_block),
        {verdict_json(it->second.second, "style " + tag + (it->second.second ? " agrees" : " differs"))});
  }
}

std::shared_ptr<ScriptedBackend> ScriptBuilder::backend(bool supports_n) const {
  auto b = std::make_shared<ScriptedBackend>(supports_n);
  for (const auto& [prompt, completions] : by_prompt_) b->set_for_prompt(prompt, completions);
  return b;
}

nlohmann::json ScriptBuilder::script() const {
  auto j = backend()->to_json();
  return j;
}

Scenario s1() {
  Scenario s;
  s.id = "s1";
  s.input = "Write a review of the Zephyr phone.";
  s.ref_aspects = {
      Aspect{0, "Battery", "Battery life of the phone", {"The battery easily lasts two days."}},
      Aspect{1, "Screen", "Display quality", {"The screen is dim outdoors."}},
  };
  s.cand_aspects = {
      Aspect{0, "Battery life", "How long the battery lasts", {"Battery life is superb, two full days!"}},
      Aspect{1, "Display", "Screen brightness", {"Sadly the screen is hard to read in sunlight."}},
      Aspect{2, "Price", "Cost of the phone", {"It costs far too much."}},
  };
  s.reference = "The battery easily lasts two days. The screen is dim outdoors.";
  s.candidate =
      "Battery life is superb, two full days! Sadly the screen is hard to read in sunlight. It costs far too much.";
  s.recall_choice = {0, 1};
  s.precision_choice = {0, 1, std::nullopt};
  s.verdicts = {{{0, 0}, {true, false}}, {{1, 1}, {true, true}}};
  return s;
}

Scenario twin(std::mt19937_64& rng, int index) {
  Scenario s;
  s.id = "twin-" + std::to_string(index);
  s.input = "Prompt " + std::to_string(index) + ": " + words(rng, 4);
  const int n = std::uniform_int_distribution<int>(1, 6)(rng);
  s.ref_aspects = make_aspects(rng, "T" + std::to_string(index), n);
  s.cand_aspects = s.ref_aspects;
  s.reference = text_of(s.ref_aspects, "");
  s.candidate = s.reference;
  for (int i = 0; i < n; ++i) {
    s.recall_choice.push_back(i);
    s.precision_choice.push_back(i);
    s.verdicts[{i, i}] = {true, true};
  }
  return s;
}

Scenario disjoint(std::mt19937_64& rng, int index) {
  Scenario s;
  s.id = "disjoint-" + std::to_string(index);
  s.input = "Prompt " + std::to_string(index);
  std::uniform_int_distribution<int> count(1, 5);
  s.ref_aspects = make_aspects(rng, "R" + std::to_string(index), count(rng));
  s.cand_aspects = make_aspects(rng, "C" + std::to_string(index), count(rng));
  s.reference = text_of(s.ref_aspects, "");
  s.candidate = text_of(s.cand_aspects, "");
  s.recall_choice.assign(s.ref_aspects.size(), std::nullopt);
  s.precision_choice.assign(s.cand_aspects.size(), std::nullopt);
  return s;
}

Scenario random_scenario(std::mt19937_64& rng, int index, int max_aspects) {
  Scenario s;
  s.id = "random-" + std::to_string(index);
  s.input = "Prompt " + std::to_string(index) + ": " + words(rng, 3);
  std::uniform_int_distribution<int> count(1, max_aspects);
  s.ref_aspects = make_aspects(rng, "R" + std::to_string(index), count(rng));
  s.cand_aspects = make_aspects(rng, "C" + std::to_string(index), count(rng));
  s.reference = text_of(s.ref_aspects, "");
  s.candidate = text_of(s.cand_aspects, "");
  std::bernoulli_distribution none(0.25);
  std::bernoulli_distribution coin(0.5);
  const int nr = static_cast<int>(s.ref_aspects.size());
  const int nc = static_cast<int>(s.cand_aspects.size());
  for (int i = 0; i < nr; ++i) {
    s.recall_choice.push_back(none(rng) ? std::nullopt
                                        : std::optional<int>(std::uniform_int_distribution<int>(0, nc - 1)(rng)));
  }
  for (int j = 0; j < nc; ++j) {
    s.precision_choice.push_back(none(rng) ? std::nullopt
                                           : std::optional<int>(std::uniform_int_distribution<int>(0, nr - 1)(rng)));
  }
  for (const auto& p : s.matched_pairs()) s.verdicts[p] = {coin(rng), coin(rng)};
  return s;
}

OracleScore oracle_score(const Scenario& s, AggregationMode mode) {
  const auto nr = static_cast<std::int64_t>(s.ref_aspects.size());
  const auto nc = static_cast<std::int64_t>(s.cand_aspects.size());
  if (nr == 0 && nc == 0) return {{1, 1}, {1, 1}, {1, 1}};
  if (nr == 0 || nc == 0) return {};

  std::int64_t recall_halves = 0;
  for (std::int64_t i = 0; i < nr; ++i) {
    if (const auto& c = s.recall_choice[i]) recall_halves += eps_halves(s.verdicts.at({static_cast<int>(i), *c}), mode);
  }
  std::int64_t precision_halves = 0;
  for (std::int64_t j = 0; j < nc; ++j) {
    if (const auto& r = s.precision_choice[j]) {
      precision_halves += eps_halves(s.verdicts.at({*r, static_cast<int>(j)}), mode);
    }
  }
  OracleScore out;
  out.recall = reduce(recall_halves, 2 * nr);
  out.precision = reduce(precision_halves, 2 * nc);
  // F = 2PR/(P+R) with P = a/b, R = c/d  ->  2ac / (ad + cb)
  const auto a = out.precision.num, b = out.precision.den, c = out.recall.num, d = out.recall.den;
  const auto den = a * d + c * b;
  out.f = den == 0 ? Rational{0, 1} : reduce(2 * a * c, den);
  return out;
}

std::uint64_t oracle_calls(const Scenario& s) {
  const auto nr = s.ref_aspects.size();
  const auto nc = s.cand_aspects.size();
  const std::uint64_t matching = (nr && nc) ? nr + nc : 0;
  return 2 + matching + 2 * s.matched_pairs().size();
}

}  // namespace expert::testing
