#pragma once

// Uniform access to a chat-completion model. A Gateway owns one Backend
// (remote HTTP client, hash-keyed script, or a test double) and adds the
// response cache, transport retries, in-flight bounding and the call ledger.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace expert {

enum class Purpose { Extraction, Matching, Alignment, Baseline };
std::string_view to_string(Purpose purpose);

struct ChatRequest {
  std::optional<std::string> system_text;
  std::string user_text;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  int sample_count = 1;
  // Ledger bucket only; not part of the cache key.
  Purpose purpose = Purpose::Extraction;
};

struct ChatResponse {
  std::vector<std::string> samples;
  std::string backend_id;
  bool cached = false;
};

struct BackendConfig {
  std::string endpoint;  // e.g. https://api.openai.com/v1/chat/completions
  std::string model;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  std::vector<double> retry_temperatures{0.0, 0.3, 0.7};
  int parallelism_limit = 4;
  bool cache_enabled = true;
  std::optional<std::filesystem::path> cache_path;
  // Set to false for endpoints that reject the "n" parameter.
  bool supports_n_sampling = true;
  std::optional<std::uint64_t> max_network_calls;
};

/// Reads a key = value configuration file. Unknown keys are a ConfigError.
/// Keys: endpoint, model, timeout_ms, max_retries, retry_temperatures
/// (comma separated), parallelism, cache_path, cache, supports_n, max_calls.
BackendConfig load_backend_config(const std::filesystem::path& path);
void apply_backend_setting(BackendConfig& config, std::string_view key, std::string_view value);

/// Temperature for retry attempt k: attempt 0 uses the request temperature,
/// attempt k > 0 uses schedule[k] clamped to the last entry.
double retry_temperature(const std::vector<double>& schedule, double request_temperature, int attempt);

/// What a backend sees for one wire round-trip.
struct WireRequest {
  std::optional<std::string> system_text;
  std::string user_text;
  std::string model;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  int n = 1;
  // Index of the first sample requested; lets stateless backends serve
  // looped n-sampling deterministically.
  int sample_offset = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual bool supports_n_sampling() const = 0;
  /// Returns exactly request.n completions or throws TransportError /
  /// BackendRefused.
  virtual std::vector<std::string> send(const WireRequest& request) = 0;
};

/// Hash of the prompt text used to key scripted completions.
std::string prompt_hash(const std::optional<std::string>& system_text, std::string_view user_text);

/// Deterministic offline backend. Maps prompt_hash -> list of completions;
/// sample i of a request is entry i (the last entry repeats). Unknown hashes
/// get the default completion, or BackendRefused when there is none.
///
/// File format: {"completions": {"<hash>": ["...", ...]}, "default": "..."}
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(bool supports_n = true) : supports_n_(supports_n) {}

  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);
  static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& script);

  void set(const std::string& hash, std::vector<std::string> completions);
  void set_for_prompt(std::string_view user_text, std::vector<std::string> completions);
  void set_default(std::string completion);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  std::string id() const override { return "scripted"; }
  bool supports_n_sampling() const override { return supports_n_; }
  std::vector<std::string> send(const WireRequest& request) override;

  std::uint64_t sends() const { return sends_.load(); }

 private:
  bool supports_n_;
  std::map<std::string, std::vector<std::string>> completions_;
  std::optional<std::string> default_;
  std::atomic<std::uint64_t> sends_{0};
};

/// OpenAI-style chat-completions client. The bearer token comes from the
/// EXPERT_API_KEY environment variable when set.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);
  std::string id() const override { return "http:" + config_.model; }
  bool supports_n_sampling() const override { return config_.supports_n_sampling; }
  std::vector<std::string> send(const WireRequest& request) override;

  static nlohmann::json build_body(const WireRequest& request);
  static std::vector<std::string> parse_body(const nlohmann::json& body, int expected);

 private:
  BackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

struct LedgerSnapshot {
  std::uint64_t network_calls = 0;
  std::uint64_t cache_hits = 0;
  // Logical completions per purpose: extraction, matching, alignment, baseline.
  std::map<std::string, std::uint64_t> by_purpose;
};

/// Persistent response cache: one JSON object per line, last line wins.
class ResponseCache {
 public:
  explicit ResponseCache(std::optional<std::filesystem::path> path);
  std::optional<std::vector<std::string>> get(const std::string& key) const;
  void put(const std::string& key, const std::vector<std::string>& samples);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::vector<std::string>> entries_;
};

class Gateway {
 public:
  Gateway(BackendConfig config, std::shared_ptr<Backend> backend);

  ChatResponse complete(const ChatRequest& request);
  LedgerSnapshot call_ledger() const;

  const BackendConfig& config() const { return config_; }
  std::string backend_id() const;
  static std::string cache_key(const std::string& model_id, const ChatRequest& request);

 private:
  std::vector<std::string> fetch(const ChatRequest& request);
  std::vector<std::string> send_with_retries(const WireRequest& wire);

  BackendConfig config_;
  std::shared_ptr<Backend> backend_;
  ResponseCache cache_;
  std::counting_semaphore<1024> in_flight_;

  std::mutex pending_mu_;
  std::unordered_map<std::string, std::shared_future<std::vector<std::string>>> pending_;

  std::atomic<std::uint64_t> network_calls_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> by_purpose_[4]{};
};

}  // namespace expert
