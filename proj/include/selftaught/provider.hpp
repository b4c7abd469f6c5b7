#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "selftaught/core.hpp"

namespace selftaught::provider {

using nlohmann::json;

class TransportError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

/// Thrown when a scripted transcript runs out of entries; the scripted
/// equivalent of a transport failure.
class ScriptExhausted : public TransportError {
 public:
  using TransportError::TransportError;
};

class TranscriptMismatch : public Error {
 public:
  using Error::Error;
};

class UnknownModel : public Error {
 public:
  using Error::Error;
};

struct Message {
  std::string role;  // system | user | assistant
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

struct LlmRequest {
  std::string model_name;
  std::vector<Message> messages;
  double temperature{0.7};
  std::optional<int> max_tokens;

  void validate() const {
    if (temperature < 0.0 || temperature > 2.0) throw Error("temperature out of [0,2]");
    for (const auto& msg : messages) {
      if (msg.role == "user") return;
    }
    throw Error("request has no user message");
  }

  json to_json() const {
    json messages_json = json::array();
    for (const auto& msg : messages) {
      messages_json.push_back({{"role", msg.role}, {"content", msg.content}});
    }
    json body = {{"model", model_name}, {"messages", messages_json}, {"temperature", temperature}};
    if (max_tokens) body["max_tokens"] = *max_tokens;
    return body;
  }

  /// Canonical serialization used for cache keying: any field change changes
  /// the resulting string.
  std::string canonical_string() const {
    json body = to_json();
    body["max_tokens"] = max_tokens ? json(*max_tokens) : json(nullptr);
    return body.dump();
  }
};

struct TokenUsage {
  long input_tokens{0};
  long output_tokens{0};
  bool estimated{false};  // true when counts come from the chars/4 fallback

  TokenUsage& operator+=(const TokenUsage& other) {
    input_tokens += other.input_tokens;
    output_tokens += other.output_tokens;
    estimated = estimated || other.estimated;
    return *this;
  }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct LlmResponse {
  std::string text;
  TokenUsage usage;
  bool cached{false};
};

struct EmbeddingVector {
  std::vector<double> values;

  int dim() const { return static_cast<int>(values.size()); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

struct ModelPrice {
  double input_per_1k{0.0};
  double output_per_1k{0.0};
};

using PriceTable = std::map<std::string, ModelPrice>;

inline double cost_of(const TokenUsage& usage, const std::string& model, const PriceTable& prices) {
  const auto it = prices.find(model);
  if (it == prices.end()) throw UnknownModel("no price entry for model: " + model);
  return static_cast<double>(usage.input_tokens) * it->second.input_per_1k / 1000.0 +
         static_cast<double>(usage.output_tokens) * it->second.output_per_1k / 1000.0;
}

inline long estimate_tokens(std::string_view text) {
  return static_cast<long>((text.size() + 3) / 4);
}

inline long estimate_request_tokens(const LlmRequest& request) {
  std::size_t chars = 0;
  for (const auto& msg : request.messages) chars += msg.content.size();
  return static_cast<long>((chars + 3) / 4);
}

class LlmProvider {
 public:
  virtual ~LlmProvider() = default;
  virtual LlmResponse complete(const LlmRequest& request) = 0;
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// One replayable provider transcript. Entries are consumed strictly in
/// order; a match-bearing entry must find its substring in the rendered
/// prompt or the run fails loudly.
struct Transcript {
  struct Entry {
    std::optional<std::string> match;
    std::string response;
  };
  std::vector<Entry> entries;

  json to_json() const {
    json arr = json::array();
    for (const auto& entry : entries) {
      json item = {{"response", entry.response}};
      if (entry.match) item["match"] = *entry.match;
      arr.push_back(std::move(item));
    }
    return arr;
  }

  static Transcript from_json(const json& arr) {
    if (!arr.is_array()) throw Error("transcript must be a JSON array");
    Transcript transcript;
    for (const auto& item : arr) {
      Entry entry;
      entry.response = item.at("response").get<std::string>();
      if (item.contains("match") && !item.at("match").is_null()) {
        entry.match = item.at("match").get<std::string>();
      }
      transcript.entries.push_back(std::move(entry));
    }
    return transcript;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write transcript: " + path.string());
    out << to_json().dump(2) << "\n";
  }

  static Transcript load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read transcript: " + path.string());
    json arr = json::parse(in);
    return from_json(arr);
  }
};

/// Deterministic test/offline backend: completions replay a transcript,
/// embeddings are digest-seeded pseudo-vectors (identical text, identical
/// vector). Entries are consumed in order; when the next entry carries a
/// match that does not occur in the prompt, the earliest later matching
/// entry is taken instead (concurrent sessions interleave their turns).
/// A prompt matched by no remaining entry fails loudly.
class ScriptedProvider : public LlmProvider {
 public:
  explicit ScriptedProvider(Transcript transcript, int embed_dim = 8)
      : transcript_(std::move(transcript)),
        embed_dim_(embed_dim),
        consumed_(transcript_.entries.size(), false) {}

  LlmResponse complete(const LlmRequest& request) override {
    std::lock_guard lock(mutex_);
    std::string rendered;
    for (const auto& msg : request.messages) {
      rendered += msg.content;
      rendered += "\n";
    }
    std::size_t index = transcript_.entries.size();
    bool saw_unconsumed = false;
    for (std::size_t i = 0; i < transcript_.entries.size(); ++i) {
      if (consumed_[i]) continue;
      saw_unconsumed = true;
      const auto& match = transcript_.entries[i].match;
      if (!match || rendered.find(*match) != std::string::npos) {
        index = i;
        break;
      }
    }
    if (!saw_unconsumed) {
      throw ScriptExhausted("scripted transcript exhausted after " +
                            std::to_string(transcript_.entries.size()) + " entries");
    }
    if (index == transcript_.entries.size()) {
      throw TranscriptMismatch("no remaining transcript entry matches the observed prompt");
    }
    consumed_[index] = true;
    ++consumed_count_;
    LlmResponse response;
    response.text = transcript_.entries[index].response;
    response.usage.input_tokens = estimate_request_tokens(request);
    response.usage.output_tokens = estimate_tokens(response.text);
    response.usage.estimated = true;
    return response;
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) throw Error("embed requires a non-empty input list");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) out.push_back(pseudo_embedding(text, embed_dim_));
    return out;
  }

  static EmbeddingVector pseudo_embedding(std::string_view text, int dim) {
    const std::string digest = stable_hash(text);
    std::uint64_t seed = 0;
    for (int i = 0; i < 16; ++i) {
      seed = seed * 16 + static_cast<std::uint64_t>(
                             digest[i] <= '9' ? digest[i] - '0' : digest[i] - 'a' + 10);
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    EmbeddingVector vec;
    vec.values.resize(static_cast<std::size_t>(dim));
    for (auto& v : vec.values) v = dist(rng);
    return vec;
  }

  std::size_t consumed() const {
    std::lock_guard lock(mutex_);
    return consumed_count_;
  }
  std::size_t remaining() const {
    std::lock_guard lock(mutex_);
    return transcript_.entries.size() - consumed_count_;
  }

 private:
  Transcript transcript_;
  int embed_dim_;
  mutable std::mutex mutex_;
  std::vector<bool> consumed_;
  std::size_t consumed_count_ = 0;
};

namespace detail {

class Semaphore {
 public:
  explicit Semaphore(int limit) : available_(limit) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int available_;
};

struct SemaphoreGuard {
  Semaphore& sem;
  explicit SemaphoreGuard(Semaphore& s) : sem(s) { sem.acquire(); }
  ~SemaphoreGuard() { sem.release(); }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Accounting and budget guard
// ---------------------------------------------------------------------------

/// Thread-safe record of every non-cached completion's usage and cost.
class UsageLedger {
 public:
  struct Entry {
    std::string model;
    TokenUsage usage;
    double cost{0.0};
  };

  void record(const std::string& model, const TokenUsage& usage, double cost) {
    std::lock_guard lock(mutex_);
    entries_.push_back({model, usage, cost});
    total_cost_ += cost;
  }

  double total_cost() const {
    std::lock_guard lock(mutex_);
    return total_cost_;
  }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }
  std::vector<Entry> entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
  double total_cost_ = 0.0;
};

/// Wraps a live backend with spend accounting and an optional hard budget
/// cap. Sits below the cache so cache hits bypass it entirely: usage is
/// recorded exactly once per non-cached completion, and the budget check
/// happens before any network call.
class AccountingProvider : public LlmProvider {
 public:
  AccountingProvider(LlmProvider& inner, PriceTable prices, UsageLedger& ledger,
                     std::optional<double> budget_cap = std::nullopt)
      : inner_(inner), prices_(std::move(prices)), ledger_(ledger), budget_cap_(budget_cap) {}

  LlmResponse complete(const LlmRequest& request) override {
    check_budget();
    LlmResponse response = inner_.complete(request);
    double cost = 0.0;
    if (prices_.count(request.model_name) > 0) {
      cost = cost_of(response.usage, request.model_name, prices_);
    }
    ledger_.record(request.model_name, response.usage, cost);
    return response;
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    check_budget();
    return inner_.embed(texts);
  }

 private:
  void check_budget() const {
    if (budget_cap_ && ledger_.total_cost() >= *budget_cap_) {
      std::ostringstream msg;
      msg << "spend cap reached: " << ledger_.total_cost() << " >= " << *budget_cap_;
      throw BudgetExceeded(msg.str());
    }
  }

  LlmProvider& inner_;
  PriceTable prices_;
  UsageLedger& ledger_;
  std::optional<double> budget_cap_;
};

// ---------------------------------------------------------------------------
// Content-addressed response cache
// ---------------------------------------------------------------------------

/// File-per-key completion cache. The key digests the full serialized
/// request plus a salt (seed tag + config snapshot hash), so any parameter
/// change invalidates prior entries. Writes are write-temp-then-rename.
class CachingProvider : public LlmProvider {
 public:
  CachingProvider(LlmProvider& inner, std::filesystem::path cache_dir, std::string salt)
      : inner_(inner), cache_dir_(std::move(cache_dir)), salt_(std::move(salt)) {
    std::filesystem::create_directories(cache_dir_);
  }

  static std::string cache_key(const LlmRequest& request, const std::string& salt) {
    return stable_hash(request.canonical_string() + "|" + salt);
  }

  LlmResponse complete(const LlmRequest& request) override {
    const std::string key = cache_key(request, salt_);
    const auto path = cache_dir_ / (key + ".json");
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      json stored = json::parse(in);
      LlmResponse response;
      response.text = stored.at("text").get<std::string>();
      response.usage.input_tokens = stored.at("input_tokens").get<long>();
      response.usage.output_tokens = stored.at("output_tokens").get<long>();
      response.usage.estimated = stored.value("estimated", false);
      response.cached = true;
      return response;
    }
    LlmResponse response = inner_.complete(request);
    json stored = {{"text", response.text},
                   {"input_tokens", response.usage.input_tokens},
                   {"output_tokens", response.usage.output_tokens},
                   {"estimated", response.usage.estimated}};
    write_atomic(path, stored.dump(2));
    return response;
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    return inner_.embed(texts);
  }

 private:
  void write_atomic(const std::filesystem::path& path, const std::string& payload) {
    std::lock_guard lock(write_mutex_);
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cannot write cache file: " + tmp);
      out << payload;
    }
    std::filesystem::rename(tmp, path);
  }

  LlmProvider& inner_;
  std::filesystem::path cache_dir_;
  std::string salt_;
  std::mutex write_mutex_;
};

}  // namespace selftaught::provider
