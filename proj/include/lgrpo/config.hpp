#pragma once

// Engine configuration: one INI file with sections [data], [policy],
// [listener], [rewards], [grpo] and [eval]. Unknown sections or keys are
// rejected. Command-line overrides are applied as "section.key=value".

#include <boost/crc.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "lgrpo/error.hpp"
#include "lgrpo/grpo.hpp"
#include "lgrpo/listener.hpp"
#include "lgrpo/reward.hpp"
#include "lgrpo/scoring.hpp"
#include "lgrpo/util.hpp"

namespace lgrpo {

struct DataConfig {
  std::string path;  // JSONL dataset; empty means generate the synthetic task
  SynthTaskConfig synth;
};

struct PolicyConfig {
  std::string backend = "toy";  // toy | remote
  std::string endpoint;         // http://host:port for the remote backend
  std::string init;             // toy policy JSON or checkpoint; empty = reference init
  int timeout_ms = 10000;
  int retries = 3;
  double tag_logit = 8.0;
  double stop_think_logit = 1.5;
  double misuse_logit = -6.0;
  std::string system_prompt =
      "Compare the two images against the text prompt. Think inside <think>...</think>, "
      "then name the better image.";
  std::string user_prompt =
      "User prompt: {prompt} Which image is better? Put your reasoning in <think>...</think> "
      "and the final answer in <answer>\"preferred\": \"first\"</answer> or "
      "<answer>\"preferred\": \"second\"</answer>.";
};

struct ListenerConfig {
  bool enabled = true;
  std::string backend = "toy";  // toy | remote
  std::string endpoint;
  std::string init;  // toy listener JSON; empty = synthetic listener
  double cue_weight = 6.0;
  double salient_weight = 1.0;
  ListenerOptions options;
};

struct EvalConfig {
  std::vector<double> thresholds{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> k_values{1, 2, 4, 8};
  Split split = Split::test;
  std::int64_t every = 0;  // held-out evaluation period during training; 0 = end only
  int k = 1;
  int max_len = 64;
  double temperature = 1.1;
  Aggregation aggregation = Aggregation::probability;
  int workers = 1;
  int bins = 8;
  std::string judge_endpoint;
  int judge_timeout_ms = 30000;
  int judge_retries = 3;
};

struct EngineConfig {
  DataConfig data;
  PolicyConfig policy;
  ListenerConfig listener;
  RewardConfig rewards;
  GrpoConfig grpo;
  EvalConfig eval;
  std::uint64_t seed = 0;

  TrainerConfig trainer() const { return {grpo, rewards, listener.options}; }
  PredictOptions predict_options(std::uint64_t s) const {
    return {eval.k, eval.temperature, eval.max_len, eval.aggregation, s};
  }
};

namespace config_detail {

inline std::string fmt_double(double x) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    throw Error("config " + key + ": bad number '" + std::string(t) + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  const auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw Error("config " + key + ": bad boolean '" + std::string(t) + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& s) {
  std::vector<T> out;
  for (auto part : split(s, ',')) out.push_back(parse_number<T>(key, std::string(part)));
  if (out.empty()) throw Error("config " + key + ": empty list");
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>)
      s += fmt_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

// One accessor per key, so reading, writing and listing share a table.
struct Field {
  std::function<void(EngineConfig&, const std::string&)> set;
  std::function<std::string(const EngineConfig&)> get;
};

#define LGRPO_NUM(member, T)                                                              \
  Field {                                                                                 \
    [](EngineConfig& c, const std::string& v) { c.member = parse_number<T>(#member, v); }, \
        [](const EngineConfig& c) {                                                       \
          if constexpr (std::is_floating_point_v<T>)                                      \
            return fmt_double(c.member);                                                  \
          else                                                                            \
            return std::to_string(c.member);                                              \
        }                                                                                 \
  }
#define LGRPO_STR(member)                                                   \
  Field {                                                                   \
    [](EngineConfig& c, const std::string& v) { c.member = v; },            \
        [](const EngineConfig& c) { return c.member; }                      \
  }

template <class E>
Field enum_field(std::function<E&(EngineConfig&)> ref,
                 std::vector<std::pair<std::string, E>> names) {
  return {[ref, names](EngineConfig& c, const std::string& v) {
            const auto t = trim(v);
            for (const auto& [n, e] : names)
              if (n == t) {
                ref(c) = e;
                return;
              }
            throw Error("config: unknown value '" + std::string(t) + "'");
          },
          [ref, names](const EngineConfig& c) {
            auto& cc = const_cast<EngineConfig&>(c);
            for (const auto& [n, e] : names)
              if (ref(cc) == e) return n;
            return std::string("?");
          }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["data.path"] = LGRPO_STR(data.path);
    t["data.vocab_size"] = LGRPO_NUM(data.synth.vocab_size, int);
    t["data.context_dim"] = LGRPO_NUM(data.synth.context_dim, int);
    t["data.num_pairs"] = LGRPO_NUM(data.synth.num_pairs, int);
    t["data.heldout_pairs"] = LGRPO_NUM(data.synth.heldout_pairs, int);
    t["data.listener_feature_weight"] = LGRPO_NUM(data.synth.listener_feature_weight, double);
    t["data.votes_per_pair"] = LGRPO_NUM(data.synth.votes_per_pair, int);

    t["policy.backend"] = LGRPO_STR(policy.backend);
    t["policy.endpoint"] = LGRPO_STR(policy.endpoint);
    t["policy.init"] = LGRPO_STR(policy.init);
    t["policy.timeout_ms"] = LGRPO_NUM(policy.timeout_ms, int);
    t["policy.retries"] = LGRPO_NUM(policy.retries, int);
    t["policy.tag_logit"] = LGRPO_NUM(policy.tag_logit, double);
    t["policy.stop_think_logit"] = LGRPO_NUM(policy.stop_think_logit, double);
    t["policy.misuse_logit"] = LGRPO_NUM(policy.misuse_logit, double);
    t["policy.system_prompt"] = LGRPO_STR(policy.system_prompt);
    t["policy.user_prompt"] = LGRPO_STR(policy.user_prompt);

    t["listener.enabled"] = {
        [](EngineConfig& c, const std::string& v) {
          c.listener.enabled = parse_bool("listener.enabled", v);
        },
        [](const EngineConfig& c) { return std::string(c.listener.enabled ? "true" : "false"); }};
    t["listener.backend"] = LGRPO_STR(listener.backend);
    t["listener.endpoint"] = LGRPO_STR(listener.endpoint);
    t["listener.init"] = LGRPO_STR(listener.init);
    t["listener.cue_weight"] = LGRPO_NUM(listener.cue_weight, double);
    t["listener.salient_weight"] = LGRPO_NUM(listener.salient_weight, double);
    t["listener.strip"] = enum_field<StripMode>(
        [](EngineConfig& c) -> StripMode& { return c.listener.options.strip; },
        {{"answer_block", StripMode::answer_block}, {"answer_token", StripMode::answer_token}});
    t["listener.on_failure"] = enum_field<ListenerOptions::OnFailure>(
        [](EngineConfig& c) -> ListenerOptions::OnFailure& {
          return c.listener.options.on_failure;
        },
        {{"fail", ListenerOptions::OnFailure::fail}, {"zero", ListenerOptions::OnFailure::zero}});

    t["rewards.w_fmt"] = LGRPO_NUM(rewards.weights.fmt, double);
    t["rewards.w_acc"] = LGRPO_NUM(rewards.weights.acc, double);
    t["rewards.w_list"] = LGRPO_NUM(rewards.weights.list, double);
    t["rewards.listener_shaping"] = enum_field<ListenerShaping>(
        [](EngineConfig& c) -> ListenerShaping& { return c.rewards.shaping; },
        {{"off", ListenerShaping::off},
         {"eq5", ListenerShaping::eq5},
         {"setup_variant", ListenerShaping::setup_variant}});
    t["rewards.approx_table"] = {
        [](EngineConfig& c, const std::string& v) {
          c.rewards.approx.by_distance = parse_list<double>("rewards.approx_table", v);
        },
        [](const EngineConfig& c) { return join(c.rewards.approx.by_distance); }};
    t["rewards.scale_max"] = LGRPO_NUM(rewards.scale_max, long);
    t["rewards.abs_w_fmt"] = LGRPO_NUM(rewards.absolute.fmt, double);
    t["rewards.abs_w_exact"] = LGRPO_NUM(rewards.absolute.exact, double);
    t["rewards.abs_w_approx"] = LGRPO_NUM(rewards.absolute.approx, double);

    t["grpo.group_size"] = LGRPO_NUM(grpo.group_size, int);
    t["grpo.adv_epsilon"] = LGRPO_NUM(grpo.adv_epsilon, double);
    t["grpo.clip_epsilon"] = LGRPO_NUM(grpo.clip_epsilon, double);
    t["grpo.kl_coeff"] = LGRPO_NUM(grpo.kl_coeff, double);
    t["grpo.learning_rate"] = LGRPO_NUM(grpo.learning_rate, double);
    t["grpo.grad_accum_steps"] = LGRPO_NUM(grpo.grad_accum_steps, int);
    t["grpo.batch_size"] = LGRPO_NUM(grpo.batch_size, int);
    t["grpo.max_seq_len"] = LGRPO_NUM(grpo.max_seq_len, int);
    t["grpo.temperature"] = LGRPO_NUM(grpo.temperature, double);
    t["grpo.total_steps"] = LGRPO_NUM(grpo.total_steps, std::int64_t);
    t["grpo.max_grad_norm"] = LGRPO_NUM(grpo.max_grad_norm, double);
    t["grpo.checkpoint_every"] = LGRPO_NUM(grpo.checkpoint_every, std::int64_t);
    t["grpo.workers"] = LGRPO_NUM(grpo.workers, int);
    t["grpo.ratio_level"] = enum_field<RatioLevel>(
        [](EngineConfig& c) -> RatioLevel& { return c.grpo.ratio_level; },
        {{"token", RatioLevel::token}, {"sequence", RatioLevel::sequence}});
    t["grpo.seed"] = LGRPO_NUM(seed, std::uint64_t);

    t["eval.thresholds"] = {
        [](EngineConfig& c, const std::string& v) {
          c.eval.thresholds = parse_list<double>("eval.thresholds", v);
        },
        [](const EngineConfig& c) { return join(c.eval.thresholds); }};
    t["eval.k_values"] = {
        [](EngineConfig& c, const std::string& v) {
          c.eval.k_values = parse_list<int>("eval.k_values", v);
        },
        [](const EngineConfig& c) { return join(c.eval.k_values); }};
    t["eval.split"] = enum_field<Split>(
        [](EngineConfig& c) -> Split& { return c.eval.split; },
        {{"train", Split::train}, {"val", Split::val}, {"test", Split::test}});
    t["eval.every"] = LGRPO_NUM(eval.every, std::int64_t);
    t["eval.k"] = LGRPO_NUM(eval.k, int);
    t["eval.max_len"] = LGRPO_NUM(eval.max_len, int);
    t["eval.temperature"] = LGRPO_NUM(eval.temperature, double);
    t["eval.aggregation"] = enum_field<Aggregation>(
        [](EngineConfig& c) -> Aggregation& { return c.eval.aggregation; },
        {{"probability", Aggregation::probability},
         {"logit", Aggregation::logit},
         {"vote", Aggregation::vote}});
    t["eval.workers"] = LGRPO_NUM(eval.workers, int);
    t["eval.bins"] = LGRPO_NUM(eval.bins, int);
    t["eval.judge_endpoint"] = LGRPO_STR(eval.judge_endpoint);
    t["eval.judge_timeout_ms"] = LGRPO_NUM(eval.judge_timeout_ms, int);
    t["eval.judge_retries"] = LGRPO_NUM(eval.judge_retries, int);
    return t;
  }();
  return table;
}

#undef LGRPO_NUM
#undef LGRPO_STR

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, f] : config_detail::fields()) k.push_back(name);
  return k;
}

// Sets "section.key" from its text form.
inline void set_config_value(EngineConfig& c, const std::string& key, const std::string& value) {
  const auto& f = config_detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw Error("unknown config key '" + key + "'");
  it->second.set(c, value);
}

inline std::string get_config_value(const EngineConfig& c, const std::string& key) {
  const auto& f = config_detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw Error("unknown config key '" + key + "'");
  return it->second.get(c);
}

inline void validate(const EngineConfig& c) {
  c.grpo.validate();
  if (c.policy.backend != "toy" && c.policy.backend != "remote")
    throw Error("policy.backend must be toy or remote");
  if (c.listener.backend != "toy" && c.listener.backend != "remote")
    throw Error("listener.backend must be toy or remote");
  if (c.policy.backend == "remote" && c.policy.endpoint.empty())
    throw Error("policy.endpoint is required for the remote backend");
  if (c.listener.backend == "remote" && c.listener.enabled && c.listener.endpoint.empty())
    throw Error("listener.endpoint is required for the remote backend");
  if (c.policy.timeout_ms < 1 || c.policy.retries < 1) throw Error("bad policy timeout/retries");
  for (double t : c.eval.thresholds)
    if (!(t >= 0.5 && t <= 1.0)) throw Error("eval.thresholds must lie in [0.5, 1]");
  for (int k : c.eval.k_values)
    if (k < 1) throw Error("eval.k_values must be positive");
  if (c.eval.every < 0) throw Error("eval.every must be non-negative");
  if (c.eval.k < 1 || c.eval.max_len < 1 || c.eval.workers < 1 || c.eval.bins < 1)
    throw Error("eval.k, eval.max_len, eval.workers and eval.bins must be positive");
  if (!(c.eval.temperature > 0.0)) throw Error("eval.temperature must be positive");
  if (c.rewards.scale_max < 1) throw Error("rewards.scale_max must be positive");
}

inline EngineConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(static_cast<std::size_t>(e.line()), e.message());
  }
  EngineConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw Error("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body)
      set_config_value(c, section + "." + key, value.data());
  }
  return c;
}

inline EngineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  return parse_config(in);
}

// Prompt text sent to a remote policy: the system template, a blank line,
// then the user template with {prompt} substituted.
inline std::string render_prompt(const PolicyConfig& p, std::string_view prompt) {
  std::string user = p.user_prompt;
  const std::string tag = "{prompt}";
  for (auto pos = user.find(tag); pos != std::string::npos; pos = user.find(tag, pos + prompt.size()))
    user.replace(pos, tag.size(), prompt);
  return p.system_prompt.empty() ? user : p.system_prompt + "\n\n" + user;
}

// Canonical "section.key=value" lines, sorted by key.
inline std::string canonical_config(const EngineConfig& c) {
  std::string s;
  for (const auto& [name, f] : config_detail::fields()) s += name + "=" + f.get(c) + "\n";
  return s;
}

// CRC-32 of the canonical form, as 8 hex digits.
inline std::string config_hash(const EngineConfig& c) {
  boost::crc_32_type crc;
  const auto s = canonical_config(c);
  crc.process_bytes(s.data(), s.size());
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc.checksum());
  return buf;
}

}  // namespace lgrpo
