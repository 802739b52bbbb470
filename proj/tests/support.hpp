#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "lgrpo/data.hpp"
#include "lgrpo/grpo.hpp"
#include "lgrpo/policy.hpp"

namespace lgrpo_test {

using namespace lgrpo;

// Reference weights plus N(0, scale) noise on every entry.
inline ToyPolicy random_toy(const Vocabulary& v, int payload_dim, std::uint64_t seed,
                            double scale = 0.5) {
  auto p = ToyPolicy::reference(v, payload_dim);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& w : p.weights().data) w += n(rng);
  return p;
}

inline ToyPolicy perturbed(const ToyPolicy& p, std::uint64_t seed, double scale) {
  ToyPolicy q = p;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& w : q.weights().data) w += n(rng);
  return q;
}

inline Context random_pair_context(int payload_dim, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(payload_dim), b(payload_dim);
  for (auto& x : a) x = n(rng);
  for (auto& x : b) x = n(rng);
  return {{encode_synth_item(a), encode_synth_item(b)}, "rate these", {}, {}};
}

// Central finite differences of f over every weight of p.
template <class F>
Matrix fd_gradient(const ToyPolicy& p, F&& f, double h) {
  Matrix g(p.weights().rows, p.weights().cols);
  ToyPolicy q = p;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    const double w = p.weights().data[i];
    q.weights().data[i] = w + h;
    const double up = f(q);
    q.weights().data[i] = w - h;
    const double down = f(q);
    q.weights().data[i] = w;
    g.data[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max |a - b| relative to max |b|; 0 when both vanish.
inline double rel_error(const Matrix& a, const Matrix& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    diff = std::max(diff, std::abs(a.data[i] - b.data[i]));
    scale = std::max(scale, std::abs(b.data[i]));
  }
  if (diff == 0.0) return 0.0;
  return scale > 0.0 ? diff / scale : diff;
}

// One GRPO group sampled from `old`, with random rewards.
inline GroupBatch random_group(const ToyPolicy& old, const ToyPolicy& ref, const Context& c,
                               int G, int max_len, Rng& rng) {
  GroupBatch b;
  b.context = c;
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> rewards;
  for (int i = 0; i < G; ++i) {
    b.rollouts.push_back(old.sample(c, 1.0, max_len, rng()));
    b.ref_logprobs.push_back(ref.logprobs(c, b.rollouts.back().tokens));
    b.breakdowns.emplace_back();
    b.p_corr.emplace_back();
    rewards.push_back(n(rng));
  }
  b.advantages = group_advantages(rewards, 0.0);
  return b;
}

// Policy whose answer head reads the hidden rule directly. Tag logits are
// high and structural misuse far down so every rollout follows the grammar.
inline ToyPolicy rule_reader(const Vocabulary& v, int payload_dim,
                             const std::vector<double>& rule, double gain) {
  auto p = ToyPolicy::reference(v, payload_dim, 30.0, 1.5, -30.0);
  for (std::size_t i = 0; i < rule.size(); ++i) {
    p.weights()(v.first(), p.diff_col(static_cast<int>(i))) = 0.5 * gain * rule[i];
    p.weights()(v.second(), p.diff_col(static_cast<int>(i))) = -0.5 * gain * rule[i];
  }
  return p;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  auto d = std::filesystem::temp_directory_path() /
           ("lgrpo-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace lgrpo_test
