#pragma once

// HTTP+JSON boundary for policies that live in another process.
//
//   POST /v1/sample         {context, temperature, max_len, seed} -> {tokens, logprobs, text}
//   POST /v1/logprobs       {context, tokens}                     -> {logprobs}
//   POST /v1/answer_logits  {context, candidates}                 -> {logits}
//
// Every request carries "x-lgrpo-proto: 1". Errors come back as a non-200
// status with {"error": message}.

#include <chrono>
#include <cmath>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lgrpo/error.hpp"
#include "lgrpo/policy.hpp"

namespace lgrpo {

inline constexpr const char* kProtoHeader = "x-lgrpo-proto";
inline constexpr const char* kProtoVersion = "1";

// ---------------------------------------------------------------------------
// Wire schema

inline nlohmann::json context_to_json(const Context& c) {
  return {{"visual", c.visual},
          {"prompt", c.prompt},
          {"reasoning_tokens", c.reasoning_tokens},
          {"partial_answer", c.partial_answer}};
}

namespace remote_detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.is_object()) throw SchemaError("expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("missing field '") + key + "'");
  return *it;
}

inline std::vector<int> int_array(const nlohmann::json& j, const char* key) {
  const auto& a = field(j, key);
  if (!a.is_array()) throw SchemaError(std::string("'") + key + "' must be an array");
  std::vector<int> out;
  out.reserve(a.size());
  for (const auto& x : a) {
    if (!x.is_number_integer()) throw SchemaError(std::string("'") + key + "' must hold integers");
    out.push_back(x.get<int>());
  }
  return out;
}

inline std::vector<double> real_array(const nlohmann::json& j, const char* key) {
  const auto& a = field(j, key);
  if (!a.is_array()) throw SchemaError(std::string("'") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& x : a) {
    if (!x.is_number()) throw SchemaError(std::string("'") + key + "' must hold numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline std::string string_field(const nlohmann::json& j, const char* key) {
  const auto& s = field(j, key);
  if (!s.is_string()) throw SchemaError(std::string("'") + key + "' must be a string");
  return s.get<std::string>();
}

template <class T>
T number_field(const nlohmann::json& j, const char* key) {
  const auto& x = field(j, key);
  if constexpr (std::is_integral_v<T>) {
    if (!x.is_number_integer()) throw SchemaError(std::string("'") + key + "' must be an integer");
  } else {
    if (!x.is_number()) throw SchemaError(std::string("'") + key + "' must be a number");
  }
  return x.get<T>();
}

}  // namespace remote_detail

inline Context context_from_json(const nlohmann::json& j) {
  using namespace remote_detail;
  const auto& c = field(j, "context");
  Context out;
  const auto& vis = field(c, "visual");
  if (!vis.is_array()) throw SchemaError("'visual' must be an array");
  for (const auto& v : vis) {
    if (!v.is_string()) throw SchemaError("'visual' must hold strings");
    out.visual.push_back(v.get<std::string>());
  }
  out.prompt = string_field(c, "prompt");
  out.reasoning_tokens = int_array(c, "reasoning_tokens");
  out.partial_answer = int_array(c, "partial_answer");
  return out;
}

// ---------------------------------------------------------------------------
// Server

// Serves a Policy over HTTP on a background thread. The wrapped policy must
// outlive the server and be safe to call concurrently.
class PolicyServer {
 public:
  explicit PolicyServer(const Policy& policy) : policy_(policy) {
    server_.Post("/v1/sample", [this](const httplib::Request& q, httplib::Response& r) {
      handle(q, r, [this](const nlohmann::json& j) {
        using namespace remote_detail;
        auto ro = policy_.sample(context_from_json(j), number_field<double>(j, "temperature"),
                                 number_field<int>(j, "max_len"),
                                 number_field<std::uint64_t>(j, "seed"));
        return nlohmann::json{{"tokens", ro.tokens}, {"logprobs", ro.logprobs_old},
                              {"text", ro.text}};
      });
    });
    server_.Post("/v1/logprobs", [this](const httplib::Request& q, httplib::Response& r) {
      handle(q, r, [this](const nlohmann::json& j) {
        const auto tokens = remote_detail::int_array(j, "tokens");
        return nlohmann::json{{"logprobs", policy_.logprobs(context_from_json(j), tokens)}};
      });
    });
    server_.Post("/v1/answer_logits", [this](const httplib::Request& q, httplib::Response& r) {
      handle(q, r, [this](const nlohmann::json& j) {
        const auto cand = remote_detail::int_array(j, "candidates");
        return nlohmann::json{
            {"logits", policy_.answer_logits(context_from_json(j), cand).logits}};
      });
    });
  }

  PolicyServer(const PolicyServer&) = delete;
  PolicyServer& operator=(const PolicyServer&) = delete;
  ~PolicyServer() { stop(); }

  // Binds (port 0 picks a free port) and starts serving; returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw TransportError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Blocks serving requests on the calling thread.
  void serve(const std::string& host, int port) {
    if (!server_.listen(host, port))
      throw TransportError("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  template <class F>
  void handle(const httplib::Request& q, httplib::Response& r, F&& f) {
    try {
      if (q.get_header_value(kProtoHeader) != kProtoVersion)
        throw SchemaError("missing or unsupported protocol header");
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(q.body);
      } catch (const nlohmann::json::exception&) {
        throw SchemaError("request body is not JSON");
      }
      r.set_content(f(body).dump(), "application/json");
    } catch (const SchemaError& e) {
      r.status = 400;
      r.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      r.status = 422;
      r.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  const Policy& policy_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

// ---------------------------------------------------------------------------
// Client

struct RemoteOptions {
  int timeout_ms = 10000;
  int retries = 3;  // total attempts on transport failure
  int backoff_ms = 50;
};

// Policy whose calls are forwarded to a PolicyServer-compatible endpoint.
// Responses are validated against the wire schema and the local vocabulary.
class RemotePolicy final : public Policy {
 public:
  RemotePolicy(std::string endpoint, Vocabulary vocab, RemoteOptions opt = {})
      : endpoint_(std::move(endpoint)), vocab_(std::move(vocab)), opt_(opt) {
    if (opt_.retries < 1) throw Error("retries must be at least 1");
  }

  const Vocabulary& vocab() const override { return vocab_; }

  Rollout sample(const Context& c, double temperature, int max_len,
                 std::uint64_t seed) const override {
    using namespace remote_detail;
    const auto j = call("/v1/sample", {{"context", context_to_json(c)},
                                       {"temperature", temperature},
                                       {"max_len", max_len},
                                       {"seed", seed}});
    Rollout r;
    r.context = c;
    r.temperature = temperature;
    r.tokens = int_array(j, "tokens");
    r.logprobs_old = real_array(j, "logprobs");
    r.text = string_field(j, "text");
    if (r.tokens.size() != r.logprobs_old.size())
      throw SchemaError("tokens and logprobs differ in length");
    if (r.tokens.empty() || static_cast<int>(r.tokens.size()) > max_len)
      throw SchemaError("rollout length outside [1, max_len]");
    check_ids(r.tokens);
    check_logprobs(r.logprobs_old);
    auto blocks = parse_blocks(r.text);
    if (blocks) r.parsed = *blocks;
    return r;
  }

  std::vector<double> logprobs(const Context& c,
                               std::span<const TokenId> tokens) const override {
    const auto j = call("/v1/logprobs", {{"context", context_to_json(c)},
                                         {"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())}});
    auto lp = remote_detail::real_array(j, "logprobs");
    if (lp.size() != tokens.size()) throw SchemaError("logprobs length does not match tokens");
    check_logprobs(lp);
    return lp;
  }

  AnswerLogits answer_logits(const Context& c,
                             std::span<const TokenId> candidates) const override {
    std::vector<TokenId> cand(candidates.begin(), candidates.end());
    const auto j = call("/v1/answer_logits", {{"context", context_to_json(c)}, {"candidates", cand}});
    auto logits = remote_detail::real_array(j, "logits");
    if (logits.size() != cand.size()) throw SchemaError("logits length does not match candidates");
    for (double x : logits)
      if (!std::isfinite(x)) throw SchemaError("non-finite logit");
    return {std::move(cand), std::move(logits)};
  }

  const std::string& endpoint() const { return endpoint_; }

 private:
  nlohmann::json call(const std::string& path, const nlohmann::json& body) const {
    const auto payload = body.dump();
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt < opt_.retries; ++attempt) {
      if (attempt) std::this_thread::sleep_for(std::chrono::milliseconds(opt_.backoff_ms << (attempt - 1)));
      httplib::Client cli(endpoint_);
      cli.set_connection_timeout(std::chrono::milliseconds(opt_.timeout_ms));
      cli.set_read_timeout(std::chrono::milliseconds(opt_.timeout_ms));
      cli.set_write_timeout(std::chrono::milliseconds(opt_.timeout_ms));
      auto res = cli.Post(path, {{kProtoHeader, kProtoVersion}}, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        std::string msg = res->body;
        try {
          auto e = nlohmann::json::parse(res->body);
          if (e.is_object() && e.contains("error") && e["error"].is_string())
            msg = e["error"].get<std::string>();
        } catch (const nlohmann::json::exception&) {
        }
        throw ServerError(res->status, msg);
      }
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception&) {
        throw SchemaError("response body is not JSON");
      }
    }
    throw TransportError(endpoint_ + path + ": " + last_error + " after " +
                         std::to_string(opt_.retries) + " attempts");
  }

  void check_ids(const std::vector<TokenId>& tokens) const {
    for (TokenId t : tokens)
      if (!vocab_.contains(t)) throw SchemaError("token id " + std::to_string(t) + " outside vocabulary");
  }

  static void check_logprobs(const std::vector<double>& lp) {
    for (double x : lp)
      if (!(x <= 0.0)) throw SchemaError("logprob outside (-inf, 0]");
  }

  std::string endpoint_;
  Vocabulary vocab_;
  RemoteOptions opt_;
};

}  // namespace lgrpo
