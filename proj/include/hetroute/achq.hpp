#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "hetroute/config.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/rng.hpp"
#include "hetroute/state.hpp"
#include "hetroute/transition.hpp"

namespace hetroute {

/// Normalized state features for the linear critic: the raw state vector
/// scaled by 1/(capacity + k), which keeps every feature norm below 1.
inline std::vector<double> features(const State& s, const SystemConfig& config) {
  int k = config.server_count();
  double scale = config.buffer_capacity + k;
  std::vector<double> phi(static_cast<std::size_t>(k) + 1);
  phi[0] = s.queue_len / scale;
  for (int i = 1; i <= k; ++i) phi[i] = s.busy(i) ? 1.0 / scale : 0.0;
  return phi;
}

/// phi(s)^T w without materializing the feature vector. Term order matches
/// features(), so the result is bit-identical to the explicit dot product.
inline double feature_dot(const State& s, std::span<const double> weights,
                          const SystemConfig& config) {
  int k = config.server_count();
  double scale = config.buffer_capacity + k;
  double acc = (s.queue_len / scale) * weights[0];
  for (int i = 1; i <= k; ++i) acc += (s.busy(i) ? 1.0 / scale : 0.0) * weights[i];
  return acc;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// One-step temporal-difference residual c - eta + phi(s')^T w - phi(s)^T w.
inline double td_error(double cost, double eta, std::span<const double> phi_next,
                       std::span<const double> phi_now, std::span<const double> weights) {
  return cost - eta + dot(phi_next, weights) - dot(phi_now, weights);
}

/// Step size, either constant or base / (1+t)^exponent.
struct StepSchedule {
  double base = 0;
  double exponent = 0;

  static StepSchedule constant(double value) {
    if (!(value > 0)) throw std::invalid_argument("step size must be positive");
    return StepSchedule{value, 0.0};
  }
  static StepSchedule decay(double base, double exponent) {
    if (!(base > 0)) throw std::invalid_argument("step base must be positive");
    if (!(exponent >= 0 && exponent < 1))
      throw std::invalid_argument("decay exponent must be in [0,1)");
    return StepSchedule{base, exponent};
  }
};

inline double step_value(const StepSchedule& schedule, long long t) {
  if (t < 0) throw std::invalid_argument("step index must be non-negative");
  if (schedule.exponent == 0) return schedule.base;
  return schedule.base / std::pow(1.0 + static_cast<double>(t), schedule.exponent);
}

/// Mutable learner state: critic weights inside a Euclidean ball of radius
/// projection_radius, the running average-cost estimate, and the step count.
struct CriticState {
  std::vector<double> weights;  // k+1
  double projection_radius = 0;
  double avg_cost_estimate = 0;
  long long step = 0;
};

inline double default_projection_radius(const SystemConfig& config) {
  return 10.0 * (config.buffer_capacity + config.server_count());
}

inline CriticState make_critic(const SystemConfig& config, double projection_radius = 0) {
  CriticState c;
  c.weights.assign(static_cast<std::size_t>(config.server_count()) + 1, 0.0);
  c.projection_radius =
      projection_radius > 0 ? projection_radius : default_projection_radius(config);
  return c;
}

/// Radial rescaling onto the ball of radius `radius`.
inline void project_to_ball(std::vector<double>& w, double radius) {
  double n = norm2(w);
  if (n > radius)
    for (double& v : w) v *= radius / n;
}

struct Schedules {
  StepSchedule actor;     // alpha
  StepSchedule critic;    // beta
  StepSchedule avg_cost;  // zeta
};

struct AchqStepResult {
  State next_state;
  double cost = 0;
  double delta = 0;
};

namespace detail {

// Shared body of the average-cost and discounted updates. `gamma` empty
// selects the average-cost TD error and enables the eta tracker. The actor
// observation is the state the action was drawn from (a masked view under
// power-of-d); the critic observations may independently be masked or true.
inline AchqStepResult achq_update(SoftThresholdParams& actor, CriticState& critic, const State& s,
                                  const State& actor_obs, const State& critic_now,
                                  const State& critic_next, Action action,
                                  const SystemConfig& config, const Schedules& schedules,
                                  std::optional<double> gamma, const State& true_next) {
  double c = cost(s);
  double v_now = feature_dot(critic_now, critic.weights, config);
  double v_next = feature_dot(critic_next, critic.weights, config);
  double delta = gamma ? c + *gamma * v_next - v_now
                       : c - critic.avg_cost_estimate + v_next - v_now;

  long long t = critic.step;
  if (!gamma) {
    double zeta = step_value(schedules.avg_cost, t);
    critic.avg_cost_estimate += zeta * (c - critic.avg_cost_estimate);
  }

  double beta = step_value(schedules.critic, t);
  int k = config.server_count();
  double scale = config.buffer_capacity + k;
  critic.weights[0] += beta * delta * (critic_now.queue_len / scale);
  for (int i = 1; i <= k; ++i)
    if (critic_now.busy(i)) critic.weights[i] += beta * delta * (1.0 / scale);
  project_to_ball(critic.weights, critic.projection_radius);

  auto f = fastest_available(actor_obs, config);
  if (actor_obs.queue_len > 0 && f && *f >= 2) {
    double g = action.is_wait()
                   ? actor.sharpness * routing_prob(actor, actor_obs.queue_len, *f)
                   : -actor.sharpness * waiting_prob(actor, actor_obs.queue_len, *f);
    double alpha = step_value(schedules.actor, t);
    actor.thresholds[*f - 2] -= alpha * delta * g;
  }

  critic.step += 1;
  return AchqStepResult{true_next, c, delta};
}

}  // namespace detail

/// One epoch of the average-cost actor-critic: draw an action from the
/// actor, observe the cost, sample the next state, then update eta, the
/// projected critic, and the actor threshold along -delta * grad log pi.
/// Consumes one uniform for the action draw and one for the event draw.
inline AchqStepResult achq_step(SoftThresholdParams& actor, CriticState& critic, const State& s,
                                const SystemConfig& config, const Schedules& schedules, Rng& rng) {
  Action a = sample(soft_threshold_dist(actor, s, config), rng);
  State next = sample_next(s, a, config, rng);
  return detail::achq_update(actor, critic, s, s, s, next, a, config, schedules, std::nullopt,
                             next);
}

/// Discounted variant: delta = c + gamma phi(s')^T w - phi(s)^T w and no
/// average-cost tracker.
inline AchqStepResult achq_step_discounted(SoftThresholdParams& actor, CriticState& critic,
                                           const State& s, const SystemConfig& config,
                                           const Schedules& schedules, double gamma, Rng& rng) {
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("gamma must be in (0,1)");
  Action a = sample(soft_threshold_dist(actor, s, config), rng);
  State next = sample_next(s, a, config, rng);
  return detail::achq_update(actor, critic, s, s, s, next, a, config, schedules, gamma, next);
}

/// Per-interval training snapshots.
struct TrainRecord {
  struct Row {
    long long step;
    double avg_cost_running;
    double eta;
    std::vector<double> thresholds;
    double omega_norm;
  };
  std::vector<Row> rows;
};

enum class ThetaInit { Rsrt, Zero, Random };

struct TrainOptions {
  Schedules schedules{StepSchedule::constant(1e-3), StepSchedule::constant(1e-3),
                      StepSchedule::constant(1e-2)};
  double projection_radius = 0;  // 0 resolves to default_projection_radius
  long long horizon = 0;
  std::uint64_t seed = 1;
  long long log_interval = 10'000;
  std::optional<State> initial_state;  // default: empty system
  int pod_d = 0;                       // 0 = full observation
  bool pod_mask_critic = true;         // critic sees the masked state too
};

struct TrainResult {
  SoftThresholdParams actor;
  CriticState critic;
  TrainRecord record;
};

/// Warm-start thresholds from the RSRT rule, clipped to the buffer range.
inline SoftThresholdParams initial_actor(const SystemConfig& config, double sharpness,
                                         ThetaInit init, Rng* rng = nullptr) {
  SoftThresholdParams actor;
  actor.sharpness = sharpness;
  int k = config.server_count();
  actor.thresholds.assign(static_cast<std::size_t>(k > 0 ? k - 1 : 0), 0.0);
  if (init == ThetaInit::Rsrt) {
    auto rsrt = rsrt_thresholds(config);
    for (int f = 2; f <= k; ++f)
      actor.thresholds[f - 2] =
          std::min(rsrt[f - 1], static_cast<double>(config.buffer_capacity));
  } else if (init == ThetaInit::Random) {
    if (!rng) throw std::invalid_argument("random init needs an rng");
    for (double& t : actor.thresholds) t = rng->uniform() * config.buffer_capacity;
  }
  return actor;
}

namespace detail {

template <class StepFn>
TrainResult train_loop(const SystemConfig& config, SoftThresholdParams actor,
                       const TrainOptions& options, StepFn&& do_step) {
  if (options.horizon < 0) throw std::invalid_argument("horizon must be non-negative");
  if (actor.thresholds.size() + 1 != static_cast<std::size_t>(config.server_count()))
    throw std::invalid_argument("actor dimension does not match server count");

  TrainResult result;
  result.critic = make_critic(config, options.projection_radius);
  Rng rng(options.seed);
  State s = options.initial_state.value_or(State{});

  // Under partial observation the next state's features come from the view
  // the router will hold at the next epoch, so each epoch's subset draw is
  // reused as that epoch's observation.
  State observed = s;
  if (options.pod_d > 0) observed = pod_restrict(s, options.pod_d, config, rng);

  double cost_sum = 0;
  for (long long t = 0; t < options.horizon; ++t) {
    Action a = sample(soft_threshold_dist(actor, observed, config), rng);
    State next = sample_next(s, a, config, rng);
    State observed_next = next;
    if (options.pod_d > 0) observed_next = pod_restrict(next, options.pod_d, config, rng);

    const State& critic_now = options.pod_d > 0 && !options.pod_mask_critic ? s : observed;
    const State& critic_next =
        options.pod_d > 0 && !options.pod_mask_critic ? next : observed_next;
    AchqStepResult step =
        do_step(result.critic, actor, s, observed, critic_now, critic_next, a, next);

    cost_sum += step.cost;
    if (options.log_interval > 0 && (t + 1) % options.log_interval == 0) {
      TrainRecord::Row row;
      row.step = t + 1;
      row.avg_cost_running = cost_sum / static_cast<double>(t + 1);
      row.eta = result.critic.avg_cost_estimate;
      row.thresholds = actor.thresholds;
      row.omega_norm = norm2(result.critic.weights);
      result.record.rows.push_back(row);
    }
    s = next;
    observed = observed_next;
  }
  result.actor = std::move(actor);
  return result;
}

}  // namespace detail

/// Runs the average-cost actor-critic for `horizon` epochs from the empty
/// system. Deterministic given the seed; the log interval only affects the
/// returned record, never the trajectory.
inline TrainResult train(const SystemConfig& config, SoftThresholdParams actor0,
                         const TrainOptions& options) {
  return detail::train_loop(
      config, std::move(actor0), options,
      [&](CriticState& critic, SoftThresholdParams& actor, const State& s, const State& actor_obs,
          const State& critic_now, const State& critic_next, Action a, const State& next) {
        return detail::achq_update(actor, critic, s, actor_obs, critic_now, critic_next, a,
                                   config, options.schedules, std::nullopt, next);
      });
}

/// Discounted-cost variant of the same loop.
inline TrainResult train_discounted(const SystemConfig& config, SoftThresholdParams actor0,
                                    const TrainOptions& options, double gamma) {
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("gamma must be in (0,1)");
  return detail::train_loop(
      config, std::move(actor0), options,
      [&, gamma](CriticState& critic, SoftThresholdParams& actor, const State& s,
                 const State& actor_obs, const State& critic_now, const State& critic_next,
                 Action a, const State& next) {
        return detail::achq_update(actor, critic, s, actor_obs, critic_now, critic_next, a,
                                   config, options.schedules, gamma, next);
      });
}

}  // namespace hetroute
