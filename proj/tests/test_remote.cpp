#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <thread>

#include "lgrpo/listener.hpp"
#include "lgrpo/remote.hpp"
#include "support.hpp"

using namespace lgrpo;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

std::string url(int port) { return "http://127.0.0.1:" + std::to_string(port); }

// Bare httplib server answering every policy route with a fixed reply.
struct CannedServer {
  httplib::Server server;
  std::thread thread;
  int port = -1;
  int status = 200;
  std::string body;
  int delay_ms = 0;
  std::atomic<int> hits{0};

  CannedServer() {
    auto h = [this](const httplib::Request&, httplib::Response& r) {
      ++hits;
      if (delay_ms) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      r.status = status;
      r.set_content(body, "application/json");
    };
    for (const char* p : {"/v1/sample", "/v1/logprobs", "/v1/answer_logits"}) server.Post(p, h);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~CannedServer() {
    server.stop();
    thread.join();
  }
};

const Context kCtx{{"0.5 -1 0", "1 0.25 1"}, "rate", {}, {}};

}  // namespace

TEST(Remote, LoopbackMatchesLocalBitForBit) {
  const auto v = Vocabulary::toy(16);
  const auto local = lgrpo_test::random_toy(v, 3, 21, 0.7);
  PolicyServer server(local);
  const int port = server.start();
  RemotePolicy remote(url(port), v);

  Rng rng(6);
  for (int i = 0; i < 60; ++i) {
    auto c = lgrpo_test::random_pair_context(3, rng);
    const auto seed = rng();
    const double temp = 0.5 + uniform01(rng);
    auto a = local.sample(c, temp, 24, seed);
    auto b = remote.sample(c, temp, 24, seed);
    ASSERT_EQ(a.tokens, b.tokens);
    ASSERT_EQ(a.text, b.text);
    ASSERT_EQ(a.parsed.has_value(), b.parsed.has_value());
    for (std::size_t t = 0; t < a.tokens.size(); ++t)
      ASSERT_TRUE(same_bits(a.logprobs_old[t], b.logprobs_old[t]));

    auto la = local.logprobs(c, a.tokens), lb = remote.logprobs(c, a.tokens);
    for (std::size_t t = 0; t < la.size(); ++t) ASSERT_TRUE(same_bits(la[t], lb[t]));

    c.reasoning_tokens = {v.think_open(), v.think_close()};
    c.partial_answer = {v.answer_open()};
    const auto cand = v.answer_candidates();
    auto za = local.answer_logits(c, cand), zb = remote.answer_logits(c, cand);
    EXPECT_EQ(za.candidates, zb.candidates);
    for (std::size_t t = 0; t < cand.size(); ++t) ASSERT_TRUE(same_bits(za.logits[t], zb.logits[t]));
  }
}

TEST(Remote, ListenerOverLoopbackMatchesLocal) {
  const auto v = Vocabulary::toy(16);
  const auto listener = make_synthetic_listener(v, 3, 2, 6.0, 1.0);
  PolicyServer server(listener);
  RemotePolicy remote(url(server.start()), v);
  const auto policy = ToyPolicy::reference(v, 3);
  Rng rng(2);
  int checked = 0;
  for (int i = 0; i < 20; ++i) {
    auto r = policy.sample(lgrpo_test::random_pair_context(3, rng), 1.0, 32, rng());
    if (!r.parsed) continue;
    const auto lc = strip_answer(r, v);
    auto a = listener_confidence(listener, lc, Winner::first);
    auto b = listener_confidence(remote, lc, Winner::first);
    EXPECT_TRUE(same_bits(a.p_corr, b.p_corr));
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(Remote, ServerRejectsMissingHeaderAndBadBodies) {
  const auto v = Vocabulary::toy(12);
  const auto local = ToyPolicy::reference(v, 2);
  PolicyServer server(local);
  httplib::Client cli(url(server.start()));
  const std::string body =
      R"({"context": {"visual": ["1 2", "3 4"], "prompt": "", "reasoning_tokens": [], "partial_answer": []}, "tokens": [0]})";

  auto r = cli.Post("/v1/logprobs", body, "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);

  httplib::Headers h{{kProtoHeader, kProtoVersion}};
  r = cli.Post("/v1/logprobs", h, "{oops", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);

  r = cli.Post("/v1/logprobs", h, body, "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);

  auto bad = nlohmann::json::parse(body);
  bad["tokens"] = {999};
  r = cli.Post("/v1/logprobs", h, bad.dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_GE(r->status, 400);
  EXPECT_TRUE(nlohmann::json::parse(r->body).contains("error"));
}

TEST(Remote, MalformedResponsesAreSchemaErrors) {
  const auto v = Vocabulary::toy(12);
  CannedServer fake;
  RemotePolicy remote(url(fake.port), v, {2000, 1, 0});
  const std::vector<TokenId> tk = {0, 1};
  const auto cand = v.answer_candidates();

  const std::vector<std::string> bad_samples = {
      "not json",
      R"({"tokens": [0, 1], "logprobs": [-0.1], "text": ""})",
      R"({"tokens": [0, 99], "logprobs": [-0.1, -0.2], "text": ""})",
      R"({"tokens": [0, 1], "logprobs": [-0.1, 0.3], "text": ""})",
      R"({"tokens": [0, 1], "logprobs": [-0.1, -0.2]})",
      R"({"tokens": [], "logprobs": [], "text": ""})",
      R"({"tokens": [0, 1, 2, 3, 4], "logprobs": [-1, -1, -1, -1, -1], "text": ""})",
      R"({"tokens": "0 1", "logprobs": [-0.1, -0.2], "text": ""})",
      R"([1, 2])",
  };
  for (const auto& b : bad_samples) {
    fake.body = b;
    EXPECT_THROW(remote.sample(kCtx, 1.0, 4, 0), SchemaError) << b;
  }
  fake.body = R"({"logprobs": [-0.5]})";
  EXPECT_THROW(remote.logprobs(kCtx, tk), SchemaError);
  fake.body = R"({"logits": [0.5, null]})";
  EXPECT_THROW(remote.answer_logits(kCtx, cand), SchemaError);
  fake.body = R"({"logits": [0.5]})";
  EXPECT_THROW(remote.answer_logits(kCtx, cand), SchemaError);

  fake.body = R"({"tokens": [0, 1], "logprobs": [-0.1, -0.2], "text": "x"})";
  EXPECT_NO_THROW(remote.sample(kCtx, 1.0, 4, 0));
}

TEST(Remote, ServerErrorsCarryStatusAndMessage) {
  const auto v = Vocabulary::toy(12);
  CannedServer fake;
  fake.status = 503;
  fake.body = R"({"error": "model overloaded"})";
  RemotePolicy remote(url(fake.port), v, {2000, 3, 0});
  try {
    remote.logprobs(kCtx, std::vector<TokenId>{0});
    FAIL() << "expected a server error";
  } catch (const ServerError& e) {
    EXPECT_EQ(e.status(), 503);
    EXPECT_NE(std::string(e.what()).find("model overloaded"), std::string::npos);
  }
  EXPECT_EQ(fake.hits.load(), 1);
}

TEST(Remote, TimeoutRetriesThenFails) {
  const auto v = Vocabulary::toy(12);
  CannedServer fake;
  fake.delay_ms = 300;
  fake.body = R"({"logprobs": [-0.5]})";
  RemotePolicy remote(url(fake.port), v, {50, 2, 1});
  EXPECT_THROW(remote.logprobs(kCtx, std::vector<TokenId>{0}), TransportError);
  EXPECT_EQ(fake.hits.load(), 2);
}

TEST(Remote, UnreachableEndpointIsTransportError) {
  int port;
  {
    CannedServer closed;
    port = closed.port;
  }
  RemotePolicy remote(url(port), Vocabulary::toy(12), {200, 2, 1});
  EXPECT_THROW(remote.sample(kCtx, 1.0, 4, 0), TransportError);
  EXPECT_THROW(RemotePolicy(url(port), Vocabulary::toy(12), {200, 0, 1}), Error);
}

TEST(Remote, GradientsNeedALocalPolicy) {
  const auto v = Vocabulary::toy(12);
  RemotePolicy remote("http://127.0.0.1:1", v);
  Rollout r;
  EXPECT_THROW(toy_grad_logprob(remote, r), Error);
}
