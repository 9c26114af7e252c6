#include "expert/llm_gateway.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "expert/errors.hpp"
#include "expert/hashing.hpp"

namespace expert {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(trim(v));
    double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) + "': not a number: '" + std::string(v) + "'");
  }
}

long long parse_int(std::string_view key, std::string_view v) {
  v = trim(v);
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': not an integer: '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "': not a boolean: '" + std::string(v) + "'");
}

std::string format_real(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

}  // namespace

std::string_view to_string(Purpose purpose) {
  switch (purpose) {
    case Purpose::Extraction: return "extraction";
    case Purpose::Matching: return "matching";
    case Purpose::Alignment: return "alignment";
    case Purpose::Baseline: return "baseline";
  }
  return "unknown";
}

void apply_backend_setting(BackendConfig& config, std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "endpoint") {
    config.endpoint = value;
  } else if (key == "model") {
    config.model = value;
  } else if (key == "timeout_ms") {
    config.timeout = std::chrono::milliseconds(parse_int(key, value));
  } else if (key == "max_retries") {
    config.max_retries = static_cast<int>(parse_int(key, value));
    if (config.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  } else if (key == "retry_temperatures") {
    config.retry_temperatures.clear();
    std::string_view rest = value;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      config.retry_temperatures.push_back(parse_double(key, rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  } else if (key == "parallelism") {
    config.parallelism_limit = static_cast<int>(parse_int(key, value));
    if (config.parallelism_limit < 1 || config.parallelism_limit > 1024) {
      throw ConfigError("parallelism must be in [1, 1024]");
    }
  } else if (key == "cache_path") {
    config.cache_path = std::filesystem::path(std::string(value));
  } else if (key == "cache") {
    config.cache_enabled = parse_bool(key, value);
  } else if (key == "supports_n") {
    config.supports_n_sampling = parse_bool(key, value);
  } else if (key == "max_calls") {
    config.max_network_calls = static_cast<std::uint64_t>(parse_int(key, value));
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

BackendConfig load_backend_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read backend config " + path.string());
  BackendConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_backend_setting(config, trim(view.substr(0, eq)), view.substr(eq + 1));
  }
  return config;
}

double retry_temperature(const std::vector<double>& schedule, double request_temperature, int attempt) {
  if (attempt <= 0 || schedule.empty()) return request_temperature;
  const auto pos = std::min<std::size_t>(static_cast<std::size_t>(attempt), schedule.size() - 1);
  return schedule[pos];
}

std::string prompt_hash(const std::optional<std::string>& system_text, std::string_view user_text) {
  return field_hash({system_text.value_or(""), user_text});
}

// ---------------------------------------------------------------------------
// ScriptedBackend

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const json& script) {
  auto backend = std::make_shared<ScriptedBackend>(script.value("supports_n", true));
  if (script.contains("completions")) {
    for (const auto& [hash, list] : script.at("completions").items()) {
      if (list.is_string()) {
        backend->set(hash, {list.get<std::string>()});
      } else {
        backend->set(hash, list.get<std::vector<std::string>>());
      }
    }
  }
  if (script.contains("default") && script.at("default").is_string()) {
    backend->set_default(script.at("default").get<std::string>());
  }
  return backend;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read script file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("script file " + path.string() + ": " + e.what());
  }
}

void ScriptedBackend::set(const std::string& hash, std::vector<std::string> completions) {
  if (completions.empty()) throw ConfigError("scripted entry " + hash + " has no completions");
  completions_[hash] = std::move(completions);
}

void ScriptedBackend::set_for_prompt(std::string_view user_text, std::vector<std::string> completions) {
  set(prompt_hash(std::nullopt, user_text), std::move(completions));
}

void ScriptedBackend::set_default(std::string completion) { default_ = std::move(completion); }

json ScriptedBackend::to_json() const {
  json j{{"completions", completions_}, {"supports_n", supports_n_}};
  if (default_) j["default"] = *default_;
  return j;
}

void ScriptedBackend::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_json().dump(2) << '\n';
}

std::vector<std::string> ScriptedBackend::send(const WireRequest& request) {
  sends_.fetch_add(1);
  const auto hash = prompt_hash(request.system_text, request.user_text);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(request.n));
  auto it = completions_.find(hash);
  for (int i = 0; i < request.n; ++i) {
    if (it != completions_.end()) {
      const auto& list = it->second;
      const auto idx = std::min<std::size_t>(static_cast<std::size_t>(request.sample_offset + i), list.size() - 1);
      out.push_back(list[idx]);
    } else if (default_) {
      out.push_back(*default_);
    } else {
      throw BackendRefused("no scripted completion for prompt hash " + hash, 404, false);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// HttpBackend

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, kUrl)) {
    throw ConfigError("endpoint must be an http(s) URL: '" + config_.endpoint + "'");
  }
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
  if (config_.model.empty()) throw ConfigError("backend config has no model");
}

json HttpBackend::build_body(const WireRequest& request) {
  json messages = json::array();
  if (request.system_text && !request.system_text->empty()) {
    messages.push_back({{"role", "system"}, {"content", *request.system_text}});
  }
  messages.push_back({{"role", "user"}, {"content", request.user_text}});
  json body{{"model", request.model},
            {"messages", messages},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens}};
  if (request.n != 1) body["n"] = request.n;
  return body;
}

std::vector<std::string> HttpBackend::parse_body(const json& body, int expected) {
  std::vector<std::string> out;
  if (!body.contains("choices") || !body.at("choices").is_array()) {
    throw BackendRefused("response has no choices array", 200, false);
  }
  for (const auto& choice : body.at("choices")) {
    if (!choice.is_object() || !choice.contains("message") || !choice.at("message").is_object()) {
      throw BackendRefused("choice without a message object", 200, false);
    }
    const auto& msg = choice.at("message");
    out.push_back(msg.contains("content") && msg.at("content").is_string() ? msg.at("content").get<std::string>()
                                                                            : std::string{});
  }
  if (static_cast<int>(out.size()) != expected) {
    throw BackendRefused("expected " + std::to_string(expected) + " choices, got " + std::to_string(out.size()),
                         200, false);
  }
  return out;
}

// send() lives in http_client.cpp to keep httplib in one translation unit.

// ---------------------------------------------------------------------------
// ResponseCache

ResponseCache::ResponseCache(std::optional<std::filesystem::path> path) : path_(std::move(path)) {
  if (!path_) return;
  std::ifstream in(*path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    // A torn trailing line from an interrupted writer is skipped.
    if (j.is_discarded() || !j.contains("k") || !j.contains("s")) continue;
    entries_[j.at("k").get<std::string>()] = j.at("s").get<std::vector<std::string>>();
  }
}

std::optional<std::vector<std::string>> ResponseCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& key, const std::vector<std::string>& samples) {
  std::lock_guard lock(mu_);
  entries_[key] = samples;
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << json{{"k", key}, {"s", samples}}.dump() + "\n" << std::flush;
  }
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(BackendConfig config, std::shared_ptr<Backend> backend)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      cache_(config_.cache_enabled ? config_.cache_path : std::nullopt),
      in_flight_(std::clamp(config_.parallelism_limit, 1, 1024)) {
  if (!backend_) throw ConfigError("gateway needs a backend");
}

std::string Gateway::backend_id() const {
  return config_.model.empty() ? backend_->id() : config_.model;
}

std::string Gateway::cache_key(const std::string& model_id, const ChatRequest& request) {
  return field_hash({model_id, format_real(request.temperature), std::to_string(request.sample_count),
                     request.system_text ? std::string_view("S") : std::string_view("-"),
                     request.system_text.value_or(""), request.user_text});
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  if (request.user_text.empty()) throw ConfigError("chat request has empty user text");
  if (request.sample_count < 1) throw ConfigError("chat request sample_count must be >= 1");
  if (request.temperature < 0.0) throw ConfigError("chat request temperature must be >= 0");

  by_purpose_[static_cast<int>(request.purpose)].fetch_add(static_cast<std::uint64_t>(request.sample_count));

  ChatResponse response;
  response.backend_id = backend_id();
  if (!config_.cache_enabled) {
    response.samples = fetch(request);
    return response;
  }

  const auto key = cache_key(response.backend_id, request);
  if (auto hit = cache_.get(key)) {
    cache_hits_.fetch_add(1);
    response.samples = std::move(*hit);
    response.cached = true;
    return response;
  }

  // Single flight: concurrent identical requests share one wire round-trip,
  // so network counts do not depend on scheduling.
  std::promise<std::vector<std::string>> promise;
  std::shared_future<std::vector<std::string>> waiting;
  {
    std::lock_guard lock(pending_mu_);
    if (auto hit = cache_.get(key)) {
      cache_hits_.fetch_add(1);
      response.samples = std::move(*hit);
      response.cached = true;
      return response;
    }
    auto it = pending_.find(key);
    if (it != pending_.end()) {
      waiting = it->second;
    } else {
      pending_.emplace(key, promise.get_future().share());
    }
  }
  if (waiting.valid()) {
    response.samples = waiting.get();
    cache_hits_.fetch_add(1);
    response.cached = true;
    return response;
  }

  try {
    response.samples = fetch(request);
    cache_.put(key, response.samples);
    promise.set_value(response.samples);
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(pending_mu_);
    pending_.erase(key);
    throw;
  }
  std::lock_guard lock(pending_mu_);
  pending_.erase(key);
  return response;
}

std::vector<std::string> Gateway::fetch(const ChatRequest& request) {
  WireRequest wire;
  wire.system_text = request.system_text;
  wire.user_text = request.user_text;
  wire.model = config_.model;
  wire.temperature = request.temperature;
  wire.max_output_tokens = request.max_output_tokens;

  if (request.sample_count == 1 || backend_->supports_n_sampling()) {
    wire.n = request.sample_count;
    return send_with_retries(wire);
  }
  std::vector<std::string> samples;
  samples.reserve(static_cast<std::size_t>(request.sample_count));
  for (int i = 0; i < request.sample_count; ++i) {
    wire.n = 1;
    wire.sample_offset = i;
    auto one = send_with_retries(wire);
    samples.push_back(std::move(one.front()));
  }
  return samples;
}

std::vector<std::string> Gateway::send_with_retries(const WireRequest& wire) {
  const double base_temperature = wire.temperature;
  for (int attempt = 0;; ++attempt) {
    WireRequest attempt_req = wire;
    attempt_req.temperature = retry_temperature(config_.retry_temperatures, base_temperature, attempt);
    try {
      in_flight_.acquire();
      struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
      } release{in_flight_};

      const auto n = network_calls_.fetch_add(1) + 1;
      if (config_.max_network_calls && n > *config_.max_network_calls) {
        network_calls_.fetch_sub(1);
        throw BudgetExceeded("network call budget of " + std::to_string(*config_.max_network_calls) +
                             " exhausted");
      }
      auto samples = backend_->send(attempt_req);
      if (static_cast<int>(samples.size()) != wire.n) {
        throw BackendRefused("backend returned " + std::to_string(samples.size()) + " samples, expected " +
                                 std::to_string(wire.n),
                             200, false);
      }
      return samples;
    } catch (const TransportError&) {
      if (attempt >= config_.max_retries) throw;
    } catch (const BackendRefused& e) {
      if (!e.retryable() || attempt >= config_.max_retries) throw;
    }
  }
}

LedgerSnapshot Gateway::call_ledger() const {
  LedgerSnapshot snap;
  snap.network_calls = network_calls_.load();
  snap.cache_hits = cache_hits_.load();
  for (auto p : {Purpose::Extraction, Purpose::Matching, Purpose::Alignment, Purpose::Baseline}) {
    snap.by_purpose[std::string(to_string(p))] = by_purpose_[static_cast<int>(p)].load();
  }
  return snap;
}

}  // namespace expert
