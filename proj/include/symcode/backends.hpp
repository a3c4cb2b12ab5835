#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <json.hpp>

#include "symcode/error.hpp"
#include "symcode/prompting.hpp"
#include "symcode/text.hpp"

namespace symcode {

struct InferenceParams {
  std::string model = "gpt-4-turbo";
  int max_new_tokens = 256;
  double temperature = 0.4;

  void validate() const {
    if (model.empty()) throw Error(Errc::config, "model identifier is empty");
    if (max_new_tokens < 1) throw Error(Errc::config, "max_new_tokens must be >= 1");
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw Error(Errc::config, "temperature must lie in [0, 2]");
  }
};

struct RawCompletion {
  std::string text;
  std::string model;
  std::string prompt_fingerprint;
  bool retrieved_from_cache = false;
  /// The model stopped at the token limit; the distiller may need to salvage.
  bool truncated = false;
};

/// Stable content address of (prompt text, params).
inline std::string prompt_fingerprint(std::string_view prompt_text, const InferenceParams& params) {
  char temp[32];
  std::snprintf(temp, sizeof temp, "%.6g", params.temperature);
  std::string key = "chat\x1f" + params.model + '\x1f' + std::to_string(params.max_new_tokens) + '\x1f' + temp + '\x1f';
  key.append(prompt_text);
  return hex64(fnv1a64(key));
}

// ---------------------------------------------------------------------------
// Chat response bodies (OpenAI-compatible shape)
// ---------------------------------------------------------------------------

struct ChatReply {
  std::string text;
  bool truncated = false;
};

inline std::string make_chat_body(std::string_view text, std::string_view model,
                                  std::string_view finish_reason = "stop") {
  nlohmann::json body{{"object", "chat.completion"},
                      {"model", model},
                      {"choices",
                       {{{"index", 0},
                         {"message", {{"role", "assistant"}, {"content", text}}},
                         {"finish_reason", finish_reason}}}}};
  return body.dump();
}

/// Consumes the first choice's message content.
inline ChatReply parse_chat_body(std::string_view body) {
  nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw TransportError(200, false, "response body is not JSON");
  const auto choices = doc.find("choices");
  if (choices == doc.end() || !choices->is_array() || choices->empty())
    throw TransportError(200, false, "response has no choices");
  const auto& first = (*choices)[0];
  ChatReply reply;
  if (first.contains("message") && first["message"].is_object()) {
    const auto& content = first["message"].value("content", nlohmann::json());
    if (content.is_string()) reply.text = content.get<std::string>();
  } else if (first.contains("text") && first["text"].is_string()) {
    reply.text = first["text"].get<std::string>();
  }
  reply.truncated = first.value("finish_reason", nlohmann::json()) == "length";
  return reply;
}

/// Maps an HTTP status to the toolkit's error contract: 401/403 are
/// credential errors, 429, 5xx and "no response" (0) are retryable.
[[noreturn]] inline void throw_for_status(int status, std::string_view detail) {
  const std::string msg = "HTTP " + std::to_string(status) + (detail.empty() ? "" : ": " + std::string(detail.substr(0, 300)));
  if (status == 401 || status == 403) throw Error(Errc::credential, msg);
  const bool retryable = status == 0 || status == 408 || status == 429 || status >= 500;
  throw TransportError(status, retryable, msg);
}

// ---------------------------------------------------------------------------
// Backend contract
// ---------------------------------------------------------------------------

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string name() const = 0;
  /// Returns the raw response body; throws TransportError / credential Error.
  virtual std::string send(const Prompt& prompt, const InferenceParams& params) = 0;
  /// Cheap reachability check run once before a pipeline starts.
  virtual void probe() {}
};

// ---------------------------------------------------------------------------
// Retry, rate limiting, concurrency
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  bool retry_on_truncation = false;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Runs `attempt` until it succeeds, a non-retryable error escapes, or the
/// retry budget is spent.
template <class F>
auto with_retries(const RetryPolicy& policy, const Sleeper& sleep, F&& attempt) {
  auto delay = policy.initial_backoff;
  for (int tries = 0;; ++tries) {
    try {
      return attempt();
    } catch (const TransportError& e) {
      if (!e.retryable()) throw;
      if (tries >= policy.max_retries)
        throw TransportError(e.status(), false,
                             "giving up after " + std::to_string(tries + 1) + " attempts: " + e.message());
    }
    if (sleep) sleep(delay);
    delay = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy.multiplier));
  }
}

/// Caps the number of requests in flight.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(size_t limit) : limit_(std::max<size_t>(1, limit)) {}

  class Permit {
   public:
    explicit Permit(ConcurrencyLimiter* owner) : owner_(owner) {}
    Permit(Permit&& other) noexcept : owner_(std::exchange(other.owner_, nullptr)) {}
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    Permit& operator=(Permit&&) = delete;
    ~Permit() {
      if (owner_ != nullptr) owner_->release();
    }

   private:
    ConcurrencyLimiter* owner_;
  };

  Permit acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return active_ < limit_; });
    ++active_;
    return Permit(this);
  }

  size_t limit() const { return limit_; }

 private:
  void release() {
    {
      std::lock_guard lock(mu_);
      --active_;
    }
    cv_.notify_one();
  }

  size_t limit_;
  size_t active_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

/// Token bucket shared by every remote client of a process. A rate of 0
/// disables it.
class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;

  TokenBucket(double per_second, double burst)
      : rate_(per_second), capacity_(std::max(1.0, burst)), tokens_(capacity_), last_(Clock::now()) {}

  void acquire() {
    if (rate_ <= 0.0) return;
    std::unique_lock lock(mu_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      lock.unlock();
      std::this_thread::sleep_for(wait);
      lock.lock();
    }
  }

 private:
  void refill() {
    const auto now = Clock::now();
    tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
    last_ = now;
  }

  double rate_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// On-disk cache: one file per fingerprint, raw response body kept verbatim
// ---------------------------------------------------------------------------

class BlobCache {
 public:
  explicit BlobCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(Errc::io, "cannot create cache directory " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

  std::optional<std::string> get(const std::string& key) const {
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }

  void put(const std::string& key, std::string_view body) {
    std::lock_guard lock(mu_);
    const auto final_path = path_for(key);
    auto tmp = final_path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(Errc::io, "cannot write cache entry " + tmp.string());
      out.write(body.data(), static_cast<std::streamsize>(body.size()));
      if (!out) throw Error(Errc::io, "short write on cache entry " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, final_path, ec);
    if (ec) throw Error(Errc::io, "cannot publish cache entry " + final_path.string() + ": " + ec.message());
  }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// complete(): cache lookup, rate limiting, retries, persistence
// ---------------------------------------------------------------------------

class CompletionService {
 public:
  struct Options {
    std::shared_ptr<BlobCache> cache;
    RetryPolicy retry;
    std::shared_ptr<ConcurrencyLimiter> limiter;
    std::shared_ptr<TokenBucket> bucket;
    Sleeper sleep = real_sleeper();
  };

  CompletionService(std::shared_ptr<ChatBackend> backend, Options options)
      : backend_(std::move(backend)), opts_(std::move(options)) {
    if (!backend_) throw Error(Errc::config, "no chat backend configured");
  }

  ChatBackend& backend() { return *backend_; }

  RawCompletion complete(const Prompt& prompt, const InferenceParams& params) {
    RawCompletion out;
    out.model = params.model;
    out.prompt_fingerprint = prompt_fingerprint(prompt.text, params);
    if (opts_.cache) {
      if (auto body = opts_.cache->get(out.prompt_fingerprint)) {
        const ChatReply reply = parse_chat_body(*body);
        out.text = reply.text;
        out.truncated = reply.truncated;
        out.retrieved_from_cache = true;
        return out;
      }
    }

    RetryPolicy policy = opts_.retry;
    int truncation_retries = policy.retry_on_truncation ? policy.max_retries : 0;
    for (;;) {
      std::string body = with_retries(policy, opts_.sleep, [&] {
        if (opts_.bucket) opts_.bucket->acquire();
        std::optional<ConcurrencyLimiter::Permit> permit;
        if (opts_.limiter) permit.emplace(opts_.limiter->acquire());
        return backend_->send(prompt, params);
      });
      const ChatReply reply = parse_chat_body(body);
      if (reply.truncated && truncation_retries-- > 0) continue;
      if (opts_.cache) opts_.cache->put(out.prompt_fingerprint, body);
      out.text = reply.text;
      out.truncated = reply.truncated;
      return out;
    }
  }

 private:
  std::shared_ptr<ChatBackend> backend_;
  Options opts_;
};

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

struct MockReply {
  int status = 200;
  std::string text;
  std::string finish_reason = "stop";
};

/// Scriptable in-process backend. Records call counts and the peak number of
/// concurrent send() calls so concurrency bounds can be observed.
class MockBackend : public ChatBackend {
 public:
  using Handler = std::function<MockReply(const Prompt&, const InferenceParams&)>;

  explicit MockBackend(Handler handler, std::chrono::milliseconds latency = {})
      : handler_(std::move(handler)), latency_(latency) {}

  static std::shared_ptr<MockBackend> echo(std::string text) {
    return std::make_shared<MockBackend>([text = std::move(text)](const Prompt&, const InferenceParams&) {
      return MockReply{200, text, "stop"};
    });
  }

  std::string name() const override { return "mock"; }

  std::string send(const Prompt& prompt, const InferenceParams& params) override {
    const int now = ++in_flight_;
    int peak = peak_in_flight_.load();
    while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
    }
    ++calls_;
    struct Leave {
      std::atomic<int>& counter;
      ~Leave() { --counter; }
    } leave{in_flight_};
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
    MockReply reply = handler_(prompt, params);
    if (reply.status != 200) throw_for_status(reply.status, reply.text);
    return make_chat_body(reply.text, params.model, reply.finish_reason);
  }

  int calls() const { return calls_.load(); }
  int peak_in_flight() const { return peak_in_flight_.load(); }

 private:
  Handler handler_;
  std::chrono::milliseconds latency_;
  std::atomic<int> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
};

}  // namespace symcode
