#pragma once

#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "symcode/backends.hpp"
#include "symcode/error.hpp"
#include "symcode/http.hpp"
#include "symcode/text.hpp"

namespace symcode {

struct EmbeddingVector {
  std::vector<double> values;
  std::string source;

  bool operator==(const EmbeddingVector&) const = default;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual EmbeddingVector compute(std::string_view text) = 0;
};

/// Character-trigram hashed bag of features, L2-normalized. Features are
/// nonnegative, so cosine similarity between two of these lies in [0, 1].
class OfflineEmbedder : public Embedder {
 public:
  static constexpr size_t kDefaultDimension = 256;

  explicit OfflineEmbedder(size_t dimension = kDefaultDimension) : dim_(dimension) {
    if (dim_ == 0) throw Error(Errc::argument, "embedding dimension must be positive");
  }

  size_t dimension() const { return dim_; }

  std::string id() const override { return "offline-trigram-" + std::to_string(dim_); }

  EmbeddingVector compute(std::string_view text) override {
    std::string basis = normalize_term(text);
    if (basis.empty()) basis = std::string(text);
    const std::u32string padded = U" " + to_u32(basis) + U" ";

    std::vector<double> v(dim_, 0.0);
    for (size_t i = 0; i + 3 <= padded.size(); ++i) {
      const std::string gram = to_utf8(std::u32string_view(padded).substr(i, 3));
      v[fnv1a64(gram) % dim_] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return {std::move(v), id()};
  }

 private:
  size_t dim_;
};

/// POST {base_url}/v1/embeddings, raw bodies cached by content address.
class OpenAIEmbedder : public Embedder {
 public:
  struct Options {
    std::string model = "text-embedding-3-small";
    std::shared_ptr<BlobCache> cache;
    RetryPolicy retry;
    std::shared_ptr<ConcurrencyLimiter> limiter;
    std::shared_ptr<TokenBucket> bucket;
    Sleeper sleep = real_sleeper();
  };

  OpenAIEmbedder(std::shared_ptr<HttpTransport> transport, std::string api_key, Options options)
      : transport_(std::move(transport)), api_key_(std::move(api_key)), opts_(std::move(options)) {}

  std::string id() const override { return "openai:" + opts_.model; }

  std::string fingerprint(std::string_view text) const {
    std::string key = "embed\x1f" + opts_.model + '\x1f';
    key.append(text);
    return hex64(fnv1a64(key));
  }

  static std::vector<double> parse_body(std::string_view body) {
    auto doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("data") || !doc["data"].is_array() || doc["data"].empty())
      throw TransportError(200, false, "embedding response has no data");
    const auto& emb = doc["data"][0].value("embedding", nlohmann::json());
    if (!emb.is_array() || emb.empty()) throw TransportError(200, false, "embedding response has no vector");
    return emb.get<std::vector<double>>();
  }

  EmbeddingVector compute(std::string_view text) override {
    const std::string key = fingerprint(text);
    if (opts_.cache) {
      if (auto body = opts_.cache->get(key)) return {parse_body(*body), id()};
    }
    const std::string payload = nlohmann::json{{"model", opts_.model}, {"input", text}}.dump();
    std::string body = with_retries(opts_.retry, opts_.sleep, [&] {
      if (opts_.bucket) opts_.bucket->acquire();
      std::optional<ConcurrencyLimiter::Permit> permit;
      if (opts_.limiter) permit.emplace(opts_.limiter->acquire());
      return detail::checked_body(transport_->post("/v1/embeddings", detail::auth_headers(api_key_), payload));
    });
    auto values = parse_body(body);
    if (opts_.cache) opts_.cache->put(key, body);
    return {std::move(values), id()};
  }

 private:
  std::shared_ptr<HttpTransport> transport_;
  std::string api_key_;
  Options opts_;
};

/// Memoizes an embedder per text and enforces a constant vector length.
class EmbeddingService {
 public:
  explicit EmbeddingService(std::shared_ptr<Embedder> embedder) : embedder_(std::move(embedder)) {
    if (!embedder_) throw Error(Errc::config, "no embedder configured");
  }

  std::string id() const { return embedder_->id(); }

  EmbeddingVector embed(std::string_view text) {
    if (text.empty()) throw Error(Errc::argument, "cannot embed empty text");
    {
      std::lock_guard lock(mu_);
      if (auto it = memo_.find(std::string(text)); it != memo_.end()) return it->second;
    }
    EmbeddingVector v = embedder_->compute(text);
    std::lock_guard lock(mu_);
    if (v.values.empty()) throw Error(Errc::dimension, "embedder " + id() + " returned an empty vector");
    if (dimension_ == 0) dimension_ = v.values.size();
    if (v.values.size() != dimension_)
      throw Error(Errc::dimension, "embedder " + id() + " changed vector length from " + std::to_string(dimension_) +
                                       " to " + std::to_string(v.values.size()));
    return memo_.emplace(std::string(text), std::move(v)).first->second;
  }

 private:
  std::shared_ptr<Embedder> embedder_;
  std::mutex mu_;
  std::unordered_map<std::string, EmbeddingVector> memo_;
  size_t dimension_ = 0;
};

inline EmbeddingVector embed(std::string_view text, EmbeddingService& embedder) { return embedder.embed(text); }

}  // namespace symcode
