#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hetroute/config.hpp"
#include "hetroute/rng.hpp"
#include "hetroute/state.hpp"
#include "hetroute/transition.hpp"

namespace hetroute {

/// Soft threshold actor: one real threshold per server 2..k (the fastest
/// server routes unconditionally, its threshold is identically 0) and a
/// sharpness that controls the decision slope.
struct SoftThresholdParams {
  std::vector<double> thresholds;  // theta_2 .. theta_k
  double sharpness = 1.0;

  double threshold_for(int server) const {
    return server == 1 ? 0.0 : thresholds.at(server - 2);
  }
};

inline void to_json(nlohmann::json& j, const SoftThresholdParams& p) {
  j = nlohmann::json{{"thresholds", p.thresholds}, {"sharpness", p.sharpness}};
}

inline SoftThresholdParams soft_params_from_json(const nlohmann::json& j) {
  SoftThresholdParams p;
  p.thresholds = j.at("thresholds").get<std::vector<double>>();
  p.sharpness = j.at("sharpness").get<double>();
  if (!(p.sharpness > 0)) throw std::invalid_argument("sharpness must be positive");
  return p;
}

/// Distribution over actions, supported on the feasible set. Entries are
/// kept in canonical order (wait first, then routes by server index).
struct ActionDist {
  std::vector<std::pair<Action, double>> entries;

  double prob_of(Action a) const {
    for (const auto& [act, p] : entries)
      if (act == a) return p;
    return 0.0;
  }

  double total() const {
    double s = 0;
    for (const auto& [act, p] : entries) s += p;
    return s;
  }
};

inline ActionDist point_mass(Action a) { return ActionDist{{{a, 1.0}}}; }

/// Numerically stable logistic, exact for large |x| where exp saturates.
inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// Probability that the soft threshold policy routes to server `server`
/// when `queue_len` jobs are waiting.
inline double routing_prob(const SoftThresholdParams& params, int queue_len, int server) {
  return logistic(params.sharpness * (queue_len - params.threshold_for(server)));
}

/// Exact complement logistic(-x); avoids the cancellation of 1 - p when the
/// routing probability saturates.
inline double waiting_prob(const SoftThresholdParams& params, int queue_len, int server) {
  return logistic(-params.sharpness * (queue_len - params.threshold_for(server)));
}

/// The actor's action distribution. Only the fastest available server is
/// ever a routing candidate: server 1 deterministically, slower servers with
/// the logistic probability against their threshold.
inline ActionDist soft_threshold_dist(const SoftThresholdParams& params, const State& s,
                                      const SystemConfig& config) {
  auto f = fastest_available(s, config);
  if (s.queue_len == 0 || !f) return point_mass(Action::wait());
  if (*f == 1) return point_mass(Action::route(1));
  double p = routing_prob(params, s.queue_len, *f);
  double w = waiting_prob(params, s.queue_len, *f);
  return ActionDist{{{Action::wait(), w}, {Action::route(*f), p}}};
}

/// Gradient of log pi_theta(action | state) in the k-1 threshold
/// coordinates. Nonzero only in the coordinate of the fastest available
/// server, and only when that server is slower than server 1.
inline std::vector<double> grad_log_pi(const SoftThresholdParams& params, const State& s,
                                       Action action, const SystemConfig& config) {
  int k = config.server_count();
  std::vector<double> grad(static_cast<std::size_t>(k > 0 ? k - 1 : 0), 0.0);
  auto f = fastest_available(s, config);

  if (s.queue_len == 0 || !f) {
    if (!action.is_wait()) throw std::invalid_argument("action has zero probability");
    return grad;
  }
  if (*f == 1) {
    if (action.is_wait() || action.server() != 1)
      throw std::invalid_argument("action has zero probability");
    return grad;
  }
  if (!action.is_wait() && action.server() != *f)
    throw std::invalid_argument("action has zero probability");

  double sigma = params.sharpness;
  grad[*f - 2] = action.is_wait() ? sigma * routing_prob(params, s.queue_len, *f)
                                  : -sigma * waiting_prob(params, s.queue_len, *f);
  return grad;
}

/// Fastest-available-server baseline: route at the first opportunity.
inline Action fas_action(const State& s, const SystemConfig& config) {
  auto f = fastest_available(s, config);
  if (s.queue_len > 0 && f) return Action::route(*f);
  return Action::wait();
}

/// Light-traffic break-even thresholds theta_f = sum_{i<f} mu_i / mu_f.
inline std::vector<double> rsrt_thresholds(const SystemConfig& config) {
  int k = config.server_count();
  std::vector<double> thresholds(k, 0.0);
  double prefix = 0.0;
  for (int f = 2; f <= k; ++f) {
    prefix += config.rate_of(f - 1);
    thresholds[f - 1] = prefix / config.rate_of(f);
  }
  return thresholds;
}

/// Hard threshold rule over a full k-vector of thresholds (thresholds[0]
/// is theta_1 = 0): route to the fastest available server f iff the queue
/// length strictly exceeds thresholds[f-1].
inline Action hard_threshold_action(const std::vector<double>& thresholds, const State& s,
                                    const SystemConfig& config) {
  auto f = fastest_available(s, config);
  if (s.queue_len > 0 && f && s.queue_len > thresholds.at(*f - 1)) return Action::route(*f);
  return Action::wait();
}

/// Power-of-d view: samples d servers without replacement (d draws from
/// rng) and renders the rest busy, so any policy composed with the view
/// routes only among sampled idle servers.
inline State pod_restrict(const State& s, int d, const SystemConfig& config, Rng& rng) {
  int k = config.server_count();
  if (d < 1 || d > k) throw std::invalid_argument("pod sample size out of range");
  std::vector<int> servers(k);
  std::iota(servers.begin(), servers.end(), 1);
  std::uint32_t sampled = 0;
  for (int i = 0; i < d; ++i) {
    auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(k - i)));
    std::swap(servers[i], servers[j]);
    sampled |= 1u << (servers[i] - 1);
  }
  std::uint32_t all = (k == 32) ? 0xffffffffu : ((1u << k) - 1);
  return State{s.queue_len, s.busy_mask | (all & ~sampled)};
}

/// One action draw in canonical entry order; consumes exactly one uniform.
inline Action sample(const ActionDist& dist, Rng& rng) {
  double u = rng.uniform();
  double acc = 0;
  for (const auto& [a, p] : dist.entries) {
    acc += p;
    if (u < acc) return a;
  }
  return dist.entries.back().first;
}

template <class P>
concept DistPolicy = requires(const P& p, const State& s) {
  { p(s) } -> std::convertible_to<ActionDist>;
};

template <class P>
concept SamplingPolicy = requires(P& p, const State& s, Rng& rng) {
  { p(s, rng) } -> std::convertible_to<Action>;
};

/// Lifts a distribution policy into a sampler (one uniform per epoch).
template <DistPolicy P>
auto make_sampler(P policy) {
  return [policy = std::move(policy)](const State& s, Rng& rng) { return sample(policy(s), rng); };
}

/// Wraps a sampler so it only sees a power-of-d masked state each epoch.
template <SamplingPolicy P>
auto pod_sampler(P inner, int d, const SystemConfig& config) {
  return [inner = std::move(inner), d, config](const State& s, Rng& rng) mutable {
    return inner(pod_restrict(s, d, config, rng), rng);
  };
}

}  // namespace hetroute
