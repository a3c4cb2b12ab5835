#pragma once

#include <cstdlib>
#include <map>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "symcode/backends.hpp"
#include "symcode/error.hpp"

namespace symcode {

struct HttpResponse {
  int status = 0;  // 0 when no response was received
  std::string body;
  std::string error;
};

using HttpHeaders = std::multimap<std::string, std::string>;

/// Minimal transport seam so the OpenAI clients can be exercised without a
/// network.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& path, const HttpHeaders& headers, const std::string& body) = 0;
  virtual HttpResponse get(const std::string& path, const HttpHeaders& headers) = 0;
};

class HttplibTransport : public HttpTransport {
 public:
  explicit HttplibTransport(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(120))
      : base_url_(std::move(base_url)), timeout_(timeout) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (base_url_.rfind("https://", 0) == 0)
      throw Error(Errc::config, "this build has no TLS support; cannot reach " + base_url_);
#endif
  }

  HttpResponse post(const std::string& path, const HttpHeaders& headers, const std::string& body) override {
    auto client = make_client();
    return convert(client.Post(path, to_httplib(headers), body, "application/json"));
  }

  HttpResponse get(const std::string& path, const HttpHeaders& headers) override {
    auto client = make_client();
    return convert(client.Get(path, to_httplib(headers)));
  }

 private:
  httplib::Client make_client() const {
    httplib::Client client(base_url_);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    return client;
  }

  static httplib::Headers to_httplib(const HttpHeaders& headers) {
    httplib::Headers out;
    for (const auto& [k, v] : headers) out.emplace(k, v);
    return out;
  }

  static HttpResponse convert(const httplib::Result& result) {
    if (!result) return {0, {}, httplib::to_string(result.error())};
    return {result->status, result->body, {}};
  }

  std::string base_url_;
  std::chrono::seconds timeout_;
};

/// Reads the API key from the named environment variable. Keys are never
/// taken from config files.
inline std::string api_key_from_env(const std::string& variable) {
  const char* value = std::getenv(variable.c_str());
  if (value == nullptr || *value == '\0')
    throw Error(Errc::credential, "environment variable " + variable + " is not set");
  return value;
}

namespace detail {

inline HttpHeaders auth_headers(const std::string& api_key) {
  HttpHeaders h{{"Content-Type", "application/json"}};
  if (!api_key.empty()) h.emplace("Authorization", "Bearer " + api_key);
  return h;
}

inline std::string checked_body(const HttpResponse& r) {
  if (r.status == 200) return r.body;
  throw_for_status(r.status, r.status == 0 ? r.error : r.body);
}

}  // namespace detail

/// POST {base_url}/v1/chat/completions.
class OpenAIChatBackend : public ChatBackend {
 public:
  OpenAIChatBackend(std::shared_ptr<HttpTransport> transport, std::string api_key)
      : transport_(std::move(transport)), api_key_(std::move(api_key)) {}

  std::string name() const override { return "openai-compatible"; }

  static std::string request_body(const Prompt& prompt, const InferenceParams& params) {
    nlohmann::json payload{{"model", params.model},
                           {"messages", {{{"role", "user"}, {"content", prompt.text}}}},
                           {"max_tokens", params.max_new_tokens},
                           {"temperature", params.temperature}};
    return payload.dump();
  }

  std::string send(const Prompt& prompt, const InferenceParams& params) override {
    return detail::checked_body(
        transport_->post("/v1/chat/completions", detail::auth_headers(api_key_), request_body(prompt, params)));
  }

  /// Any HTTP answer proves the endpoint is reachable; only auth failures and
  /// connection errors are fatal.
  void probe() override {
    const HttpResponse r = transport_->get("/v1/models", detail::auth_headers(api_key_));
    if (r.status == 0) throw Error(Errc::config, "backend unreachable: " + r.error);
    if (r.status == 401 || r.status == 403) throw Error(Errc::credential, "backend rejected the API key");
  }

 private:
  std::shared_ptr<HttpTransport> transport_;
  std::string api_key_;
};

}  // namespace symcode
