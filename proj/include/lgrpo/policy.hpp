#pragma once

// Policy abstraction plus the built-in toy autoregressive policy.
//
// The toy policy is position-wise linear-softmax: the logits at a position
// are W * phi, where phi concatenates
//   [ phase one-hot | item diff (think phase) | item diff (answer slot) | bag ]
// The phase is derived from the tokens emitted so far, the item difference
// is decoded from synthetic item payloads and is only active inside <think>
// and at the answer slot, and the bag is the normalised token histogram of
// the <think> segment. Log-probabilities are therefore differentiable in
// closed form.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgrpo/data.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/format.hpp"
#include "lgrpo/util.hpp"

namespace lgrpo {

using TokenId = int;

class Vocabulary {
 public:
  static constexpr const char* kFirst = "first";
  static constexpr const char* kSecond = "second";
  static constexpr const char* kFinished = "<finished>";
  static constexpr const char* kCueFirst = "<cue:first>";
  static constexpr const char* kCueSecond = "<cue:second>";
  static constexpr std::string_view kFinishedText = "I have finished thinking.";

  Vocabulary() = default;

  // Tags, both answers and the no-thinking filler are required; cue tokens
  // are optional.
  explicit Vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    think_open_ = require(kThinkOpen);
    think_close_ = require(kThinkClose);
    answer_open_ = require(kAnswerOpen);
    answer_close_ = require(kAnswerClose);
    first_ = require(kFirst);
    second_ = require(kSecond);
    finished_ = require(kFinished);
    cue_first_ = find(kCueFirst).value_or(-1);
    cue_second_ = find(kCueSecond).value_or(-1);
    check_unique();
  }

  // Free-form vocabulary with no structural tokens. A toy policy over it
  // never leaves the start phase, so its logits depend on weights alone.
  static Vocabulary bare(std::vector<std::string> names) {
    if (names.empty()) throw Error("degenerate vocabulary");
    Vocabulary v;
    v.names_ = std::move(names);
    v.check_unique();
    return v;
  }

  // Structural tokens first, then cue tokens, then fillers w0, w1, ...
  static Vocabulary toy(int size) {
    if (size < kMinToyVocab)
      throw Error("toy vocabulary needs at least " + std::to_string(kMinToyVocab) + " tokens");
    std::vector<std::string> names = {std::string(kThinkOpen), std::string(kThinkClose),
                                      std::string(kAnswerOpen), std::string(kAnswerClose),
                                      kFirst, kSecond, kFinished, kCueFirst, kCueSecond};
    for (int i = 0; static_cast<int>(names.size()) < size; ++i)
      names.push_back("w" + std::to_string(i));
    return Vocabulary(std::move(names));
  }

  int size() const { return static_cast<int>(names_.size()); }
  bool contains(TokenId t) const { return t >= 0 && t < size(); }
  const std::string& name(TokenId t) const { return names_.at(t); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<TokenId> find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<TokenId>(i);
    return std::nullopt;
  }

  TokenId think_open() const { return think_open_; }
  TokenId think_close() const { return think_close_; }
  TokenId answer_open() const { return answer_open_; }
  TokenId answer_close() const { return answer_close_; }
  TokenId first() const { return first_; }
  TokenId second() const { return second_; }
  TokenId finished() const { return finished_; }
  std::optional<TokenId> cue_first() const { return opt(cue_first_); }
  std::optional<TokenId> cue_second() const { return opt(cue_second_); }

  TokenId answer_token(Winner w) const {
    if (w == Winner::first) return first_;
    if (w == Winner::second) return second_;
    throw Error("no answer token for an unknown winner");
  }

  std::vector<TokenId> answer_candidates() const { return {first_, second_}; }
  bool is_answer(TokenId t) const { return t == first_ || t == second_; }

  std::string surface(TokenId t) const {
    if (t == first_) return R"("preferred": "first")";
    if (t == second_) return R"("preferred": "second")";
    if (t == finished_) return std::string(kFinishedText);
    return name(t);
  }

  std::string detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += surface(tokens[i]);
    }
    return out;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.names_ == b.names_;
  }

 private:
  TokenId require(std::string_view n) const {
    auto id = find(n);
    if (!id) throw Error("vocabulary is missing required token " + std::string(n));
    return *id;
  }
  void check_unique() const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      for (std::size_t j = i + 1; j < names_.size(); ++j)
        if (names_[i] == names_[j]) throw Error("duplicate vocabulary entry " + names_[i]);
  }
  static std::optional<TokenId> opt(TokenId t) {
    return t < 0 ? std::nullopt : std::optional<TokenId>(t);
  }

  std::vector<std::string> names_;
  TokenId think_open_ = -1, think_close_ = -1, answer_open_ = -1, answer_close_ = -1;
  TokenId first_ = -1, second_ = -1, finished_ = -1, cue_first_ = -1, cue_second_ = -1;
};

struct Context {
  std::vector<std::string> visual;
  std::string prompt;
  std::vector<TokenId> reasoning_tokens;
  std::vector<TokenId> partial_answer;

  friend bool operator==(const Context&, const Context&) = default;
};

inline Context pair_context(const PreferencePair& p) {
  return Context{{p.item_a, p.item_b}, p.prompt, {}, {}};
}

struct Rollout {
  Context context;
  std::vector<TokenId> tokens;
  std::vector<double> logprobs_old;
  std::optional<Blocks> parsed;
  double temperature = 1.0;
  std::string text;
};

struct AnswerLogits {
  std::vector<TokenId> candidates;
  std::vector<double> logits;
};

class Policy {
 public:
  virtual ~Policy() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual Rollout sample(const Context& context, double temperature, int max_len,
                         std::uint64_t seed) const = 0;
  // log pi(tokens[t] | context, tokens[<t]) at temperature 1.
  virtual std::vector<double> logprobs(const Context& context,
                                       std::span<const TokenId> tokens) const = 0;
  // Raw temperature-1 logits at the position following the context.
  virtual AnswerLogits answer_logits(const Context& context,
                                     std::span<const TokenId> candidates) const = 0;
};

inline void check_tokens(const Vocabulary& v, std::span<const TokenId> tokens) {
  for (TokenId t : tokens)
    if (!v.contains(t)) throw Error("token id " + std::to_string(t) + " outside vocabulary");
}

// Fills text/parsed from the tokens.
inline void finish_rollout(Rollout& r, const Vocabulary& v) {
  r.text = v.detokenize(r.tokens);
  auto blocks = parse_blocks(r.text);
  if (blocks) r.parsed = *blocks;
}

inline Rollout sample_rollout(const Policy& p, const Context& c, double temperature,
                              int max_len, std::uint64_t seed) {
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  if (max_len < 1) throw Error("max_len must be at least 1");
  return p.sample(c, temperature, max_len, seed);
}

inline std::vector<double> logprobs_under(const Policy& p, const Rollout& r) {
  return p.logprobs(r.context, r.tokens);
}

inline AnswerLogits answer_logits(const Policy& p, const Context& c,
                                  std::span<const TokenId> candidates) {
  if (candidates.empty()) throw Error("empty candidate set");
  return p.answer_logits(c, candidates);
}

// ---------------------------------------------------------------------------
// Toy policy

// Row-major dense matrix; rows index vocabulary entries.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }

  Matrix& operator+=(const Matrix& o) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& x : data) x *= s;
    return *this;
  }
  void axpy(double a, const Matrix& x) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += a * x.data[i];
  }
  double norm() const {
    double s = 0.0;
    for (double x : data) s += x * x;
    return std::sqrt(s);
  }
  double max_abs() const {
    double m = 0.0;
    for (double x : data) m = std::max(m, std::abs(x));
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class Phase : int { start = 0, think, after_think, answer, chosen, done };
inline constexpr int kNumPhases = 6;

// Incremental feature state for one sequence.
class ToyFeatureState {
 public:
  ToyFeatureState(const Vocabulary& v, std::vector<double> item_diff)
      : vocab_(&v), diff_(std::move(item_diff)), bag_(v.size(), 0.0) {}

  void consume(TokenId t) {
    switch (phase_) {
      case Phase::start:
        if (t == vocab_->think_open()) phase_ = Phase::think;
        break;
      case Phase::think:
        if (t == vocab_->think_close()) {
          phase_ = Phase::after_think;
        } else {
          bag_[t] += 1.0;
          ++reasoning_len_;
        }
        break;
      case Phase::after_think:
        if (t == vocab_->answer_open()) phase_ = Phase::answer;
        break;
      case Phase::answer:
        if (vocab_->is_answer(t)) phase_ = Phase::chosen;
        break;
      case Phase::chosen:
        if (t == vocab_->answer_close()) phase_ = Phase::done;
        break;
      case Phase::done:
        break;
    }
  }

  Phase phase() const { return phase_; }

  void write(std::span<double> phi) const {
    std::fill(phi.begin(), phi.end(), 0.0);
    phi[static_cast<int>(phase_)] = 1.0;
    const auto p = diff_.size();
    if (phase_ == Phase::think)
      std::copy(diff_.begin(), diff_.end(), phi.begin() + kNumPhases);
    else if (phase_ == Phase::answer)
      std::copy(diff_.begin(), diff_.end(), phi.begin() + kNumPhases + p);
    const double norm = reasoning_len_ > 0 ? 1.0 / reasoning_len_ : 0.0;
    auto bag_out = phi.subspan(kNumPhases + 2 * p);
    for (std::size_t i = 0; i < bag_.size(); ++i) bag_out[i] = bag_[i] * norm;
  }

 private:
  const Vocabulary* vocab_;
  std::vector<double> diff_;
  std::vector<double> bag_;
  int reasoning_len_ = 0;
  Phase phase_ = Phase::start;
};

class ToyPolicy final : public Policy {
 public:
  ToyPolicy(Vocabulary vocab, int payload_dim)
      : vocab_(std::move(vocab)), payload_dim_(payload_dim) {
    if (vocab_.size() < 1) throw Error("degenerate vocabulary");
    if (payload_dim_ < 0) throw Error("payload_dim must be non-negative");
    weights_ = Matrix(vocab_.size(), feature_dim());
  }

  ToyPolicy(Vocabulary vocab, int payload_dim, Matrix weights)
      : ToyPolicy(std::move(vocab), payload_dim) {
    if (weights.rows != weights_.rows || weights.cols != weights_.cols)
      throw Error("weight matrix shape does not match vocabulary and payload");
    for (double w : weights.data)
      if (!std::isfinite(w)) throw Error("non-finite policy weight");
    weights_ = std::move(weights);
  }

  const Vocabulary& vocab() const override { return vocab_; }
  int payload_dim() const { return payload_dim_; }
  int feature_dim() const { return kNumPhases + 2 * payload_dim_ + vocab_.size(); }
  const Matrix& weights() const { return weights_; }
  Matrix& weights() { return weights_; }

  // Column helpers for building structured weights.
  int phase_col(Phase p) const { return static_cast<int>(p); }
  int think_diff_col(int i) const { return kNumPhases + i; }
  int diff_col(int i) const { return kNumPhases + payload_dim_ + i; }
  int bag_col(TokenId t) const { return kNumPhases + 2 * payload_dim_ + t; }

  // Item-a minus item-b payload features (or item-a alone for one item).
  // Non-synthetic items contribute zeros.
  std::vector<double> item_diff(const Context& c) const {
    std::vector<double> d(payload_dim_, 0.0);
    auto add = [&](std::size_t idx, double sign) {
      if (idx >= c.visual.size()) return;
      auto f = decode_synth_item(c.visual[idx]);
      if (!f) return;
      for (int i = 0; i < payload_dim_ && i < static_cast<int>(f->size()); ++i)
        d[i] += sign * (*f)[i];
    };
    add(0, 1.0);
    add(1, -1.0);
    return d;
  }

  ToyFeatureState start_state(const Context& c) const {
    check_tokens(vocab_, c.reasoning_tokens);
    check_tokens(vocab_, c.partial_answer);
    ToyFeatureState s(vocab_, item_diff(c));
    for (TokenId t : c.reasoning_tokens) s.consume(t);
    for (TokenId t : c.partial_answer) s.consume(t);
    return s;
  }

  void logits(std::span<const double> phi, std::span<double> out) const {
    for (int v = 0; v < vocab_.size(); ++v) {
      auto w = weights_.row(v);
      double s = 0.0;
      for (int j = 0; j < weights_.cols; ++j) s += w[j] * phi[j];
      out[v] = s;
    }
  }

  Rollout sample(const Context& c, double temperature, int max_len,
                 std::uint64_t seed) const override {
    Rollout r;
    r.context = c;
    r.temperature = temperature;
    Rng rng(seed);
    auto state = start_state(c);
    std::vector<double> phi(feature_dim()), z(vocab_.size()), scaled(vocab_.size());
    for (int step = 0; step < max_len; ++step) {
      state.write(phi);
      logits(phi, z);
      for (std::size_t v = 0; v < z.size(); ++v) scaled[v] = z[v] / temperature;
      const double lse_t = log_sum_exp(scaled);
      const double u = uniform01(rng);
      double cdf = 0.0;
      TokenId pick = vocab_.size() - 1;
      for (int v = 0; v < vocab_.size(); ++v) {
        cdf += std::exp(scaled[v] - lse_t);
        if (u < cdf) {
          pick = v;
          break;
        }
      }
      r.tokens.push_back(pick);
      r.logprobs_old.push_back(z[pick] - log_sum_exp(z));
      state.consume(pick);
      if (pick == vocab_.answer_close()) break;
    }
    finish_rollout(r, vocab_);
    return r;
  }

  std::vector<double> logprobs(const Context& c,
                               std::span<const TokenId> tokens) const override {
    check_tokens(vocab_, tokens);
    auto state = start_state(c);
    std::vector<double> phi(feature_dim()), z(vocab_.size()), out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
      state.write(phi);
      logits(phi, z);
      out.push_back(z[t] - log_sum_exp(z));
      state.consume(t);
    }
    return out;
  }

  AnswerLogits answer_logits(const Context& c,
                             std::span<const TokenId> candidates) const override {
    check_tokens(vocab_, candidates);
    auto state = start_state(c);
    std::vector<double> phi(feature_dim()), z(vocab_.size());
    state.write(phi);
    logits(phi, z);
    AnswerLogits out;
    out.candidates.assign(candidates.begin(), candidates.end());
    for (TokenId t : candidates) out.logits.push_back(z[t]);
    return out;
  }

  // Full next-token distribution at every position of `tokens` (plus the
  // features used), for exact KL and gradients.
  struct Trace {
    std::vector<std::vector<double>> features;
    std::vector<std::vector<double>> probs;
  };

  Trace trace(const Context& c, std::span<const TokenId> tokens) const {
    check_tokens(vocab_, tokens);
    auto state = start_state(c);
    Trace tr;
    std::vector<double> z(vocab_.size());
    for (TokenId t : tokens) {
      std::vector<double> phi(feature_dim());
      state.write(phi);
      logits(phi, z);
      tr.probs.push_back(softmax(z));
      tr.features.push_back(std::move(phi));
      state.consume(t);
    }
    return tr;
  }

  // d/dW sum_t weight[t] * log pi(tokens[t] | prefix)
  //   = sum_t weight[t] * (onehot(tokens[t]) - softmax_t) (x) phi_t
  Matrix grad_weighted(const Context& c, std::span<const TokenId> tokens,
                       std::span<const double> token_weights) const {
    if (tokens.size() != token_weights.size())
      throw Error("token weight count does not match token count");
    Matrix g(weights_.rows, weights_.cols);
    const auto tr = trace(c, tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double w = token_weights[t];
      if (w == 0.0) continue;
      const auto& phi = tr.features[t];
      const auto& p = tr.probs[t];
      for (int v = 0; v < vocab_.size(); ++v) {
        const double coef = w * ((v == tokens[t] ? 1.0 : 0.0) - p[v]);
        if (coef == 0.0) continue;
        auto row = g.row(v);
        for (int j = 0; j < g.cols; ++j) row[j] += coef * phi[j];
      }
    }
    return g;
  }

  // Structured initial weights standing in for an instruction-tuned model:
  // it follows the output grammar with high probability and is indifferent
  // between the two answers.
  static ToyPolicy reference(Vocabulary vocab, int payload_dim, double tag_logit = 8.0,
                             double stop_think_logit = 1.5, double misuse_logit = -6.0) {
    ToyPolicy p(std::move(vocab), payload_dim);
    const auto& v = p.vocab_;
    auto& w = p.weights_;
    w(v.think_open(), p.phase_col(Phase::start)) = tag_logit;
    for (TokenId t = 0; t < v.size(); ++t) {
      const bool structural = t == v.think_open() || t == v.think_close() ||
                              t == v.answer_open() || t == v.answer_close() ||
                              v.is_answer(t);
      if (structural) w(t, p.phase_col(Phase::think)) = misuse_logit;
    }
    w(v.think_close(), p.phase_col(Phase::think)) = stop_think_logit;
    w(v.answer_open(), p.phase_col(Phase::after_think)) = tag_logit;
    w(v.first(), p.phase_col(Phase::answer)) = tag_logit;
    w(v.second(), p.phase_col(Phase::answer)) = tag_logit;
    w(v.answer_close(), p.phase_col(Phase::chosen)) = tag_logit;
    w(v.answer_close(), p.phase_col(Phase::done)) = tag_logit;
    return p;
  }

  friend bool operator==(const ToyPolicy& a, const ToyPolicy& b) {
    return a.vocab_ == b.vocab_ && a.payload_dim_ == b.payload_dim_ && a.weights_ == b.weights_;
  }

 private:
  Vocabulary vocab_;
  int payload_dim_;
  Matrix weights_;
};

// Frozen synthetic listener: the reference policy whose answer head is
// persuaded by cue tokens in the reasoning (weight `cue_weight` on the cue
// fraction difference) and by the salient item marker (`salient_weight`).
inline ToyPolicy make_synthetic_listener(const Vocabulary& vocab, int payload_dim,
                                         int salient_index, double cue_weight,
                                         double salient_weight) {
  auto p = ToyPolicy::reference(vocab, payload_dim);
  auto& w = p.weights();
  const auto cf = vocab.cue_first(), cs = vocab.cue_second();
  if (!cf || !cs) throw Error("synthetic listener needs cue tokens in the vocabulary");
  w(vocab.first(), p.bag_col(*cf)) = 0.5 * cue_weight;
  w(vocab.first(), p.bag_col(*cs)) = -0.5 * cue_weight;
  w(vocab.second(), p.bag_col(*cf)) = -0.5 * cue_weight;
  w(vocab.second(), p.bag_col(*cs)) = 0.5 * cue_weight;
  if (salient_index >= 0 && salient_index < payload_dim) {
    w(vocab.first(), p.diff_col(salient_index)) = 0.5 * salient_weight;
    w(vocab.second(), p.diff_col(salient_index)) = -0.5 * salient_weight;
  }
  return p;
}

inline const ToyPolicy& require_toy(const Policy& p) {
  auto* toy = dynamic_cast<const ToyPolicy*>(&p);
  if (!toy) throw Error("gradient unavailable; use remote backend's optimizer");
  return *toy;
}

inline Matrix toy_grad_logprob(const Policy& p, const Rollout& r) {
  const auto& toy = require_toy(p);
  std::vector<double> ones(r.tokens.size(), 1.0);
  return toy.grad_weighted(r.context, r.tokens, ones);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ToyPolicy& p) {
  return {{"vocab", p.vocab().names()},
          {"payload_dim", p.payload_dim()},
          {"rows", p.weights().rows},
          {"cols", p.weights().cols},
          {"weights", p.weights().data}};
}

inline ToyPolicy toy_policy_from_json(const nlohmann::json& j) {
  try {
    Vocabulary v(j.at("vocab").get<std::vector<std::string>>());
    Matrix w(j.at("rows").get<int>(), j.at("cols").get<int>());
    w.data = j.at("weights").get<std::vector<double>>();
    if (w.data.size() != static_cast<std::size_t>(w.rows) * w.cols)
      throw Error("weight array length does not match shape");
    return ToyPolicy(std::move(v), j.at("payload_dim").get<int>(), std::move(w));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed policy: ") + e.what());
  }
}

// Call-counting decorator; thread-safe.
class CountingPolicy final : public Policy {
 public:
  explicit CountingPolicy(const Policy& inner) : inner_(inner) {}

  const Vocabulary& vocab() const override { return inner_.vocab(); }
  Rollout sample(const Context& c, double t, int m, std::uint64_t s) const override {
    ++samples_;
    return inner_.sample(c, t, m, s);
  }
  std::vector<double> logprobs(const Context& c, std::span<const TokenId> tk) const override {
    ++logprob_calls_;
    return inner_.logprobs(c, tk);
  }
  AnswerLogits answer_logits(const Context& c, std::span<const TokenId> cand) const override {
    ++answer_calls_;
    return inner_.answer_logits(c, cand);
  }

  long samples() const { return samples_; }
  long logprob_calls() const { return logprob_calls_; }
  long answer_calls() const { return answer_calls_; }

 private:
  const Policy& inner_;
  mutable std::atomic<long> samples_{0}, logprob_calls_{0}, answer_calls_{0};
};

}  // namespace lgrpo
