#pragma once

// Group Relative Policy Optimization: group-normalised advantages, the
// clipped surrogate with a KL penalty toward a frozen reference, and the
// training loop driving the toy policy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgrpo/data.hpp"
#include "lgrpo/error.hpp"
#include "lgrpo/listener.hpp"
#include "lgrpo/policy.hpp"
#include "lgrpo/reward.hpp"
#include "lgrpo/util.hpp"

namespace lgrpo {

enum class RatioLevel { token, sequence };

struct GrpoConfig {
  int group_size = 10;
  double adv_epsilon = 1e-8;
  double clip_epsilon = 0.2;
  double kl_coeff = 0.04;
  double learning_rate = 1e-6;
  int grad_accum_steps = 4;
  int batch_size = 1;
  int max_seq_len = 512;
  double temperature = 1.1;
  std::int64_t total_steps = 0;
  std::uint64_t seed = 0;
  RatioLevel ratio_level = RatioLevel::token;
  // Global-norm gradient clipping; 0 disables it.
  double max_grad_norm = 0.0;
  std::int64_t checkpoint_every = 0;
  int workers = 1;

  void validate() const {
    if (group_size < 2) throw Error("group_size must be at least 2");
    if (!(adv_epsilon >= 0.0)) throw Error("adv_epsilon must be non-negative");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw Error("clip_epsilon must lie in (0, 1)");
    if (!(kl_coeff >= 0.0)) throw Error("kl_coeff must be non-negative");
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
    if (grad_accum_steps < 1 || batch_size < 1) throw Error("batch sizes must be positive");
    if (max_seq_len < 1) throw Error("max_seq_len must be positive");
    if (!(temperature > 0.0)) throw Error("temperature must be positive");
    if (total_steps < 0) throw Error("total_steps must be non-negative");
    if (workers < 1) throw Error("workers must be positive");
    if (!(max_grad_norm >= 0.0)) throw Error("max_grad_norm must be non-negative");
  }
};

struct AdvantageSet {
  std::vector<double> rewards;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> advantages;
};

// A_i = (r_i - mu) / (sigma + eps) with the population standard deviation.
// A constant group yields exact zeros.
inline AdvantageSet group_advantages(std::span<const double> rewards, double adv_epsilon) {
  if (rewards.size() < 2) throw Error("advantage group needs at least 2 rewards");
  if (!(adv_epsilon >= 0.0)) throw Error("adv_epsilon must be non-negative");
  AdvantageSet a;
  a.rewards.assign(rewards.begin(), rewards.end());
  const double g = static_cast<double>(rewards.size());
  a.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / g;
  a.advantages.assign(rewards.size(), 0.0);
  const bool constant = std::all_of(rewards.begin(), rewards.end(),
                                    [&](double r) { return r == rewards.front(); });
  if (constant) {
    a.mean = rewards.front();
    return a;
  }
  double ss = 0.0;
  for (double r : rewards) ss += (r - a.mean) * (r - a.mean);
  a.stddev = std::sqrt(ss / g);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    a.advantages[i] = (rewards[i] - a.mean) / (a.stddev + adv_epsilon);
  return a;
}

inline std::vector<double> per_token_ratio(std::span<const double> logprobs_new,
                                           std::span<const double> logprobs_old) {
  if (logprobs_new.size() != logprobs_old.size()) throw Error("logprob length mismatch");
  std::vector<double> r(logprobs_new.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::exp(logprobs_new[i] - logprobs_old[i]);
  return r;
}

inline double clipped_surrogate(double ratio, double advantage, double clip_epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

// d/d ratio of clipped_surrogate: the advantage while the unclipped branch
// is active, zero once the clip binds on the pessimistic side.
inline double clipped_surrogate_slope(double ratio, double advantage, double clip_epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return ratio * advantage <= clipped * advantage ? advantage : 0.0;
}

inline bool clip_active(double ratio, double advantage, double clip_epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return ratio * advantage > clipped * advantage;
}

// Per-token k3 estimator exp(ref - new) - (ref - new) - 1 (non-negative).
inline double kl_k3(double logprob_new, double logprob_ref) {
  const double d = logprob_ref - logprob_new;
  return std::max(0.0, std::expm1(d) - d);
}

inline double kl_penalty(std::span<const double> logprobs_new,
                         std::span<const double> logprobs_ref) {
  if (logprobs_new.size() != logprobs_ref.size()) throw Error("logprob length mismatch");
  if (logprobs_new.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < logprobs_new.size(); ++i) s += kl_k3(logprobs_new[i], logprobs_ref[i]);
  return s / static_cast<double>(logprobs_new.size());
}

// Exact per-position KL(pi || ref) summed over the vocabulary, averaged over
// the positions of `tokens`. Toy policies only.
inline double exact_kl(const Policy& policy, const Policy& ref, const Context& c,
                       std::span<const TokenId> tokens) {
  const auto& p = require_toy(policy);
  const auto& q = require_toy(ref);
  if (tokens.empty()) return 0.0;
  const auto tp = p.trace(c, tokens);
  const auto tq = q.trace(c, tokens);
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t)
    for (std::size_t v = 0; v < tp.probs[t].size(); ++v) {
      const double pv = tp.probs[t][v];
      if (pv > 0.0) total += pv * (std::log(pv) - std::log(tq.probs[t][v]));
    }
  return total / static_cast<double>(tokens.size());
}

struct GroupBatch {
  Context context;
  std::vector<Rollout> rollouts;
  std::vector<RewardBreakdown> breakdowns;
  AdvantageSet advantages;
  std::vector<std::vector<double>> ref_logprobs;
  std::vector<std::optional<double>> p_corr;  // listener confidence, when queried
};

struct LossResult {
  double loss = 0.0;
  Matrix grad;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
};

// Loss (negated clipped objective plus KL) averaged over the groups, with its
// analytic gradient. Ratio denominators are treated as constants.
inline LossResult grpo_loss(std::span<const GroupBatch> groups, const Policy& policy,
                            const GrpoConfig& cfg) {
  const auto& toy = require_toy(policy);
  if (groups.empty()) throw Error("empty batch");
  LossResult out;
  out.grad = Matrix(toy.weights().rows, toy.weights().cols);
  const double inv_groups = 1.0 / static_cast<double>(groups.size());
  std::size_t tokens_seen = 0, tokens_clipped = 0;
  double kl_sum = 0.0;
  std::size_t rollouts_seen = 0;

  for (const auto& g : groups) {
    const std::size_t G = g.rollouts.size();
    if (G == 0 || g.advantages.advantages.size() != G || g.ref_logprobs.size() != G)
      throw Error("incomplete group batch");
    const double inv_g = inv_groups / static_cast<double>(G);
    for (std::size_t i = 0; i < G; ++i) {
      const auto& r = g.rollouts[i];
      if (r.context != g.context) throw Error("rollouts in a group must share a context");
      const std::size_t T = r.tokens.size();
      if (T == 0) continue;
      const auto lp_new = policy.logprobs(r.context, r.tokens);
      const auto& lp_old = r.logprobs_old;
      const auto& lp_ref = g.ref_logprobs[i];
      if (lp_old.size() != T || lp_ref.size() != T) throw Error("logprob length mismatch");
      const double A = g.advantages.advantages[i];
      const double inv_t = 1.0 / static_cast<double>(T);
      std::vector<double> coef(T, 0.0);

      if (cfg.ratio_level == RatioLevel::token) {
        double s = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          const double rho = std::exp(lp_new[t] - lp_old[t]);
          s += clipped_surrogate(rho, A, cfg.clip_epsilon);
          coef[t] -= inv_g * inv_t * clipped_surrogate_slope(rho, A, cfg.clip_epsilon) * rho;
          tokens_clipped += clip_active(rho, A, cfg.clip_epsilon) ? 1 : 0;
        }
        out.loss -= inv_g * inv_t * s;
        tokens_seen += T;
      } else {
        double d = 0.0;
        for (std::size_t t = 0; t < T; ++t) d += lp_new[t] - lp_old[t];
        const double rho = std::exp(d);
        out.loss -= inv_g * clipped_surrogate(rho, A, cfg.clip_epsilon);
        const double c = -inv_g * clipped_surrogate_slope(rho, A, cfg.clip_epsilon) * rho;
        for (std::size_t t = 0; t < T; ++t) coef[t] += c;
        tokens_clipped += clip_active(rho, A, cfg.clip_epsilon) ? T : 0;
        tokens_seen += T;
      }

      const double k = kl_penalty(lp_new, lp_ref);
      kl_sum += k;
      ++rollouts_seen;
      out.loss += cfg.kl_coeff * inv_g * k;
      if (cfg.kl_coeff != 0.0)
        for (std::size_t t = 0; t < T; ++t)
          coef[t] += cfg.kl_coeff * inv_g * inv_t * (-std::expm1(lp_ref[t] - lp_new[t]));

      out.grad += toy.grad_weighted(r.context, r.tokens, coef);
    }
  }
  out.mean_kl = rollouts_seen ? kl_sum / static_cast<double>(rollouts_seen) : 0.0;
  out.clip_fraction = tokens_seen ? static_cast<double>(tokens_clipped) / tokens_seen : 0.0;
  return out;
}

inline LossResult grpo_loss(const GroupBatch& group, const Policy& policy,
                            const GrpoConfig& cfg) {
  return grpo_loss(std::span<const GroupBatch>(&group, 1), policy, cfg);
}

// ---------------------------------------------------------------------------
// Training

struct ListenerOptions {
  enum class OnFailure { fail, zero };
  StripMode strip = StripMode::answer_block;
  OnFailure on_failure = OnFailure::fail;
};

struct TrainerConfig {
  GrpoConfig grpo;
  RewardConfig reward;
  ListenerOptions listener;
};

struct TrainState {
  std::int64_t step = 0;
  Rng rng;
  ToyPolicy policy;
  ToyPolicy reference;
  std::int64_t listener_failures = 0;

  TrainState(ToyPolicy init, std::uint64_t seed)
      : rng(derive_seed(seed, 0x7a1)), policy(init), reference(std::move(init)) {}
  TrainState(std::int64_t s, Rng r, ToyPolicy p, ToyPolicy ref, std::int64_t failures)
      : step(s), rng(std::move(r)), policy(std::move(p)), reference(std::move(ref)),
        listener_failures(failures) {}
};

struct TrainMetrics {
  std::int64_t step = 0;
  double mean_reward = 0.0;
  double mean_r_fmt = 0.0;
  double mean_r_acc = 0.0;
  double mean_r_list = 0.0;
  std::optional<double> mean_p_corr;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  std::int64_t listener_failures = 0;
  std::optional<double> eval_accuracy;
};

inline nlohmann::ordered_json to_json(const TrainMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["mean_reward"] = m.mean_reward;
  j["mean_r_fmt"] = m.mean_r_fmt;
  j["mean_r_acc"] = m.mean_r_acc;
  j["mean_r_list"] = m.mean_r_list;
  j["mean_p_corr"] = m.mean_p_corr ? nlohmann::ordered_json(*m.mean_p_corr) : nlohmann::ordered_json(nullptr);
  j["mean_kl"] = m.mean_kl;
  j["clip_fraction"] = m.clip_fraction;
  j["listener_failures"] = m.listener_failures;
  j["eval_accuracy"] = m.eval_accuracy ? nlohmann::ordered_json(*m.eval_accuracy) : nlohmann::ordered_json(nullptr);
  return j;
}

struct ScoredRollout {
  RewardBreakdown breakdown;
  std::optional<double> p_corr;
  bool listener_failed = false;
};

// Rewards one rollout against the known winner, querying the listener only
// for parseable outputs when shaping is on.
inline ScoredRollout score_rollout(const Rollout& r, Winner winner, const Policy* listener,
                                   const TrainerConfig& cfg) {
  ScoredRollout out;
  auto parsed = parse_answer(r.text);
  const int r_fmt = parsed ? 1 : 0;
  const int r_acc = exact_match_reward(parsed, winner);
  double r_list = 0.0;
  const auto shaping = cfg.reward.shaping;
  if (parsed && listener && shaping != ListenerShaping::off) {
    try {
      auto lc = strip_answer(r, listener->vocab(), cfg.listener.strip);
      auto verdict = listener_confidence(*listener, lc, winner);
      out.p_corr = verdict.p_corr;
      r_list = verdict.r_list;
    } catch (const TransportError&) {
      if (cfg.listener.on_failure == ListenerOptions::OnFailure::fail) throw;
      out.listener_failed = true;
    } catch (const SchemaError&) {
      if (cfg.listener.on_failure == ListenerOptions::OnFailure::fail) throw;
      out.listener_failed = true;
    } catch (const ServerError&) {
      if (cfg.listener.on_failure == ListenerOptions::OnFailure::fail) throw;
      out.listener_failed = true;
    }
  }
  if (shaping == ListenerShaping::setup_variant && out.p_corr)
    out.breakdown = setup_variant_reward(r_fmt, r_acc, *out.p_corr);
  else
    out.breakdown = combined_reward(r_fmt, r_acc, r_list, cfg.reward.weights);
  return out;
}

// Samples a group for one pair and fills rewards, advantages and reference
// log-probabilities. Seeds are drawn from the state RNG up front so the
// result is independent of worker scheduling.
inline GroupBatch build_group(TrainState& state, const PreferencePair& pair,
                              const Policy* listener, const TrainerConfig& cfg,
                              std::int64_t& failures) {
  const auto& g = cfg.grpo;
  GroupBatch b;
  b.context = pair_context(pair);
  std::vector<std::uint64_t> seeds(g.group_size);
  for (auto& s : seeds) s = state.rng();
  b.rollouts.resize(g.group_size);
  b.breakdowns.resize(g.group_size);
  b.ref_logprobs.resize(g.group_size);
  b.p_corr.resize(g.group_size);
  std::vector<char> failed(g.group_size, 0);
  parallel_for(g.group_size, g.workers, [&](std::size_t i) {
    b.rollouts[i] = sample_rollout(state.policy, b.context, g.temperature, g.max_seq_len, seeds[i]);
    auto scored = score_rollout(b.rollouts[i], pair.winner, listener, cfg);
    b.breakdowns[i] = scored.breakdown;
    b.p_corr[i] = scored.p_corr;
    failed[i] = scored.listener_failed;
    b.ref_logprobs[i] = state.reference.logprobs(b.context, b.rollouts[i].tokens);
  });
  failures += std::count(failed.begin(), failed.end(), 1);
  std::vector<double> rewards;
  for (const auto& br : b.breakdowns) rewards.push_back(br.total);
  b.advantages = group_advantages(rewards, g.adv_epsilon);
  return b;
}

// One optimizer update: grad_accum_steps micro-batches of batch_size groups,
// averaged gradient, constant-rate step. The sampling snapshot is refreshed
// by the update itself.
inline TrainMetrics train_step(TrainState& state, const PreferenceDataset& dataset,
                               const Policy* listener, const TrainerConfig& cfg) {
  const auto& g = cfg.grpo;
  g.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset[i].winner != Winner::unknown) usable.push_back(i);
  if (usable.empty()) throw Error("training needs at least one pair with a known winner");

  Matrix grad(state.policy.weights().rows, state.policy.weights().cols);
  TrainMetrics m;
  double reward = 0, fmt = 0, acc = 0, list = 0, pc = 0, kl = 0, clip = 0;
  std::size_t n_rollouts = 0, n_pc = 0;
  for (int micro = 0; micro < g.grad_accum_steps; ++micro) {
    std::vector<GroupBatch> groups;
    for (int b = 0; b < g.batch_size; ++b) {
      const auto& pair = dataset[usable[state.rng() % usable.size()]];
      groups.push_back(build_group(state, pair, listener, cfg, state.listener_failures));
    }
    auto loss = grpo_loss(groups, state.policy, g);
    grad += loss.grad;
    kl += loss.mean_kl;
    clip += loss.clip_fraction;
    for (const auto& grp : groups) {
      for (std::size_t i = 0; i < grp.breakdowns.size(); ++i) {
        const auto& br = grp.breakdowns[i];
        reward += br.total;
        fmt += br.r_fmt;
        acc += br.r_acc;
        list += br.r_list;
        if (grp.p_corr[i]) {
          pc += *grp.p_corr[i];
          ++n_pc;
        }
        ++n_rollouts;
      }
    }
  }
  grad *= 1.0 / g.grad_accum_steps;
  if (g.max_grad_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > g.max_grad_norm) grad *= g.max_grad_norm / norm;
  }
  state.policy.weights().axpy(-g.learning_rate, grad);
  ++state.step;

  m.step = state.step;
  m.mean_reward = reward / n_rollouts;
  m.mean_r_fmt = fmt / n_rollouts;
  m.mean_r_acc = acc / n_rollouts;
  m.mean_r_list = list / n_rollouts;
  if (n_pc) m.mean_p_corr = pc / n_pc;
  m.mean_kl = kl / g.grad_accum_steps;
  m.clip_fraction = clip / g.grad_accum_steps;
  m.listener_failures = state.listener_failures;
  return m;
}

struct LoopHooks {
  std::function<void(const TrainMetrics&)> on_metrics;
  // Called every eval_every steps; its value lands in eval_accuracy.
  std::function<double(const ToyPolicy&)> evaluate;
  std::int64_t eval_every = 0;
  std::function<void(const TrainState&)> on_checkpoint;
};

// Runs train_step until state.step reaches total_steps. Resuming from a
// restored state continues the same trajectory.
inline std::vector<TrainMetrics> train_loop(TrainState& state, const PreferenceDataset& dataset,
                                            const Policy* listener, const TrainerConfig& cfg,
                                            const LoopHooks& hooks = {}) {
  std::vector<TrainMetrics> trace;
  while (state.step < cfg.grpo.total_steps) {
    auto m = train_step(state, dataset, listener, cfg);
    if (hooks.evaluate && hooks.eval_every > 0 &&
        (state.step % hooks.eval_every == 0 || state.step == cfg.grpo.total_steps))
      m.eval_accuracy = hooks.evaluate(state.policy);
    if (hooks.on_metrics) hooks.on_metrics(m);
    trace.push_back(m);
    if (hooks.on_checkpoint && cfg.grpo.checkpoint_every > 0 &&
        state.step % cfg.grpo.checkpoint_every == 0)
      hooks.on_checkpoint(state);
  }
  return trace;
}

// Per-rollout (advantage, reward) export for policies optimized elsewhere.
inline std::vector<nlohmann::ordered_json> advantage_records(const GroupBatch& b,
                                                             const std::string& pair_id) {
  std::vector<nlohmann::ordered_json> out;
  for (std::size_t i = 0; i < b.rollouts.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = pair_id;
    j["rollout"] = i;
    j["text"] = b.rollouts[i].text;
    j["reward"] = b.breakdowns[i].total;
    j["advantage"] = b.advantages.advantages[i];
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace lgrpo
