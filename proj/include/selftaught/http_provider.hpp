#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "selftaught/provider.hpp"

namespace selftaught::provider {

struct HttpProviderOptions {
  std::string base_url;                       // e.g. http://localhost:8080/v1
  std::string api_key_env{"OPENAI_API_KEY"};  // credential comes from the environment
  std::string embed_model{"text-embedding-3-small"};
  int timeout_seconds{120};
  int max_retries{3};
  double backoff_base_seconds{1.0};  // exponential, factor 2, full jitter
  int max_concurrency{4};
  // Injected in tests to avoid real sleeps.
  std::function<void(double)> sleep_fn;
};

/// Client for the OpenAI-compatible chat/embeddings wire protocol.
/// Retries transport failures, 429 and 5xx responses up to max_retries;
/// other 4xx statuses fail immediately.
class HttpProvider : public LlmProvider {
 public:
  explicit HttpProvider(HttpProviderOptions options)
      : options_(std::move(options)), semaphore_(std::max(1, options_.max_concurrency)) {
    if (options_.base_url.empty()) throw Error("http provider requires a base_url");
    if (const char* key = std::getenv(options_.api_key_env.c_str())) api_key_ = key;
    split_base_url();
    if (!options_.sleep_fn) {
      options_.sleep_fn = [](double seconds) {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
      };
    }
  }

  LlmResponse complete(const LlmRequest& request) override {
    request.validate();
    const std::string body = request.to_json().dump();
    const std::string reply = post_with_retries("/chat/completions", body);
    json payload;
    try {
      payload = json::parse(reply);
    } catch (const json::exception& ex) {
      throw ProtocolError(std::string("malformed completion body: ") + ex.what());
    }
    LlmResponse response;
    try {
      response.text = payload.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& ex) {
      throw ProtocolError(std::string("completion body missing fields: ") + ex.what());
    }
    if (payload.contains("usage") && payload.at("usage").is_object()) {
      const auto& usage = payload.at("usage");
      response.usage.input_tokens = usage.value("prompt_tokens", 0L);
      response.usage.output_tokens = usage.value("completion_tokens", 0L);
    } else {
      response.usage.input_tokens = estimate_request_tokens(request);
      response.usage.output_tokens = estimate_tokens(response.text);
      response.usage.estimated = true;
    }
    return response;
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) throw Error("embed requires a non-empty input list");
    json body = {{"model", options_.embed_model}, {"input", texts}};
    const std::string reply = post_with_retries("/embeddings", body.dump());
    json payload;
    try {
      payload = json::parse(reply);
    } catch (const json::exception& ex) {
      throw ProtocolError(std::string("malformed embeddings body: ") + ex.what());
    }
    std::vector<EmbeddingVector> out(texts.size());
    try {
      const auto& data = payload.at("data");
      if (data.size() != texts.size()) throw ProtocolError("embedding count mismatch");
      for (const auto& item : data) {
        const auto index = item.at("index").get<std::size_t>();
        if (index >= out.size()) throw ProtocolError("embedding index out of range");
        EmbeddingVector vec;
        for (const auto& v : item.at("embedding")) vec.values.push_back(v.get<double>());
        out[index] = std::move(vec);
      }
    } catch (const json::exception& ex) {
      throw ProtocolError(std::string("embeddings body missing fields: ") + ex.what());
    }
    return out;
  }

 private:
  void split_base_url() {
    // base_url = scheme://host[:port][/prefix]
    const auto scheme_end = options_.base_url.find("://");
    if (scheme_end == std::string::npos) throw Error("base_url must include a scheme");
    const auto host_start = scheme_end + 3;
    const auto path_start = options_.base_url.find('/', host_start);
    if (path_start == std::string::npos) {
      origin_ = options_.base_url;
      path_prefix_.clear();
    } else {
      origin_ = options_.base_url.substr(0, path_start);
      path_prefix_ = options_.base_url.substr(path_start);
      while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
  }

  static bool retryable_status(int status) { return status == 429 || status >= 500; }

  std::string post_with_retries(const std::string& endpoint, const std::string& body) {
    detail::SemaphoreGuard guard(semaphore_);
    const std::string path = path_prefix_ + endpoint;
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
      if (attempt > 0) backoff(attempt - 1);
      httplib::Client client(origin_);
      client.set_connection_timeout(options_.timeout_seconds);
      client.set_read_timeout(options_.timeout_seconds);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      auto result = client.Post(path, headers, body, "application/json");
      if (!result) {
        last_error = "transport failure: " + httplib::to_string(result.error());
        continue;
      }
      if (result->status >= 200 && result->status < 300) return result->body;
      last_error = "HTTP " + std::to_string(result->status) + ": " + result->body;
      if (!retryable_status(result->status)) {
        throw TransportError(last_error);
      }
    }
    throw TransportError("request failed after " + std::to_string(options_.max_retries) +
                         " retries; last error: " + last_error);
  }

  void backoff(int attempt) {
    const double ceiling = options_.backoff_base_seconds * std::pow(2.0, attempt);
    double delay;
    {
      std::lock_guard lock(rng_mutex_);
      std::uniform_real_distribution<double> dist(0.0, ceiling);
      delay = dist(jitter_rng_);
    }
    options_.sleep_fn(delay);
  }

  HttpProviderOptions options_;
  std::string api_key_;
  std::string origin_;
  std::string path_prefix_;
  detail::Semaphore semaphore_;
  std::mt19937_64 jitter_rng_{std::random_device{}()};
  std::mutex rng_mutex_;
};

}  // namespace selftaught::provider
