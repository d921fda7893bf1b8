#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hetroute/config.hpp"
#include "hetroute/exact.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/state.hpp"
#include "hetroute/transition.hpp"

namespace hetroute {

/// Discounted evaluation of a soft threshold policy on the two-server
/// chain: state values satisfying V = c + gamma P_pi V, and action values
/// Q(s,a) = c(s) + gamma sum P(s'|s,a) V(s') for every feasible action.
struct DiscountedEval {
  double gamma = 0;
  std::vector<double> values;
  std::vector<double> q_values;  // flat [state][action raw 0..k], NaN if infeasible
  int action_stride = 0;

  double q(std::size_t state_index, Action a) const {
    return q_values[state_index * action_stride + a.raw()];
  }
};

/// `cost_override`, when given, replaces the jobs-in-system cost; used by
/// tests to validate the solve against closed forms.
inline DiscountedEval discounted_policy_eval(const SoftThresholdParams& actor,
                                             const SystemConfig& config, double gamma,
                                             const std::vector<double>* cost_override = nullptr) {
  if (config.server_count() != 2)
    throw std::invalid_argument("discounted evaluation is defined for two servers");
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("gamma must be in (0,1)");

  TransitionTable table(config);
  int n = static_cast<int>(table.state_count());
  if (cost_override && cost_override->size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("cost override size mismatch");

  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd costs(n);
  for (int i = 0; i < n; ++i) {
    State s = table.space().state_of(static_cast<std::size_t>(i));
    costs[i] = cost_override ? (*cost_override)[static_cast<std::size_t>(i)] : cost(s);
    ActionDist dist = soft_threshold_dist(actor, s, config);
    for (const auto& [a, p] : dist.entries) {
      if (p == 0) continue;
      for (std::size_t slot = 0; slot < table.action_count(i); ++slot) {
        if (table.action(i, slot) == a) {
          table.for_each_arc(i, slot, [&](std::uint32_t j, double q) {
            system(i, static_cast<int>(j)) -= gamma * p * q;
          });
          break;
        }
      }
    }
  }

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  Eigen::VectorXd v = lu.solve(costs);
  if (!v.allFinite()) throw std::runtime_error("discounted evaluation solve failed");

  DiscountedEval eval;
  eval.gamma = gamma;
  eval.values.assign(v.data(), v.data() + n);
  eval.action_stride = config.server_count() + 1;
  eval.q_values.assign(static_cast<std::size_t>(n) * eval.action_stride,
                       std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < n; ++i) {
    for (std::size_t slot = 0; slot < table.action_count(i); ++slot) {
      Action a = table.action(i, slot);
      double acc = 0;
      table.for_each_arc(i, slot, [&](std::uint32_t j, double p) { acc += p * v[j]; });
      eval.q_values[static_cast<std::size_t>(i) * eval.action_stride + a.raw()] =
          costs[i] + gamma * acc;
    }
  }
  return eval;
}

/// The value of a state seen as "no decision pending": waiting leaves the
/// state unchanged, so Q(s, wait) plays the role of the post-decision value
/// that the h differences below compare.
inline double after_state_value(const DiscountedEval& eval, const StateSpace& space,
                                const State& s) {
  return eval.q(space.index_of(s), Action::wait());
}

/// Differences h_0 = V(0,1,0) - V(0,0,1) and h_l = V(l,1,0) - V(l-1,1,1)
/// over post-decision values. A negative h_l says waiting beats routing to
/// the slow server at queue length l.
inline std::vector<double> h_sequence(const SoftThresholdParams& actor,
                                      const SystemConfig& config, double gamma) {
  DiscountedEval eval = discounted_policy_eval(actor, config, gamma);
  StateSpace space(config);
  int cap = config.buffer_capacity;
  std::vector<double> h(static_cast<std::size_t>(cap) + 1);
  h[0] = after_state_value(eval, space, State{0, 0b01}) -
         after_state_value(eval, space, State{0, 0b10});
  for (int l = 1; l <= cap; ++l)
    h[static_cast<std::size_t>(l)] = after_state_value(eval, space, State{l, 0b01}) -
                                     after_state_value(eval, space, State{l - 1, 0b11});
  return h;
}

/// Shape summary of an h sequence: whether it is negative up to some l*
/// and non-negative after, and whether the negative prefix rises strictly.
struct HStructure {
  bool single_sign_change = false;
  bool prefix_strictly_increasing = false;
  int l_star = -1;  // last negative index
};

inline HStructure analyze_h(const std::vector<double>& h) {
  HStructure out;
  int last_negative = -1;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h[i] < 0) last_negative = static_cast<int>(i);
  out.l_star = last_negative;
  if (last_negative < 0) return out;  // never negative: no sign change
  bool split = true;
  for (int i = 0; i <= last_negative; ++i)
    if (!(h[static_cast<std::size_t>(i)] < 0)) split = false;
  out.single_sign_change = split;
  bool increasing = true;
  for (int i = 1; i <= last_negative; ++i)
    if (!(h[static_cast<std::size_t>(i)] > h[static_cast<std::size_t>(i - 1)])) increasing = false;
  out.prefix_strictly_increasing = increasing;
  return out;
}

/// Weighted policy-improvement objective: the base policy's discounted
/// action values averaged over its own stationary distribution, with
/// actions drawn from a candidate soft threshold policy at `candidate_theta`
/// and sharpness `sigma`.
inline double weighted_pi_objective(double candidate_theta, const SoftThresholdParams& base,
                                    const SystemConfig& config, double gamma, double sigma) {
  if (config.server_count() != 2)
    throw std::invalid_argument("weighted PI objective is defined for two servers");
  DiscountedEval eval = discounted_policy_eval(base, config, gamma);
  std::vector<double> nu =
      stationary_distribution([&](const State& s) { return soft_threshold_dist(base, s, config); },
                              config);
  StateSpace space(config);
  SoftThresholdParams candidate{{candidate_theta}, sigma};
  double acc = 0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    if (nu[i] == 0) continue;
    State s = space.state_of(i);
    ActionDist dist = soft_threshold_dist(candidate, s, config);
    double q = 0;
    for (const auto& [a, p] : dist.entries) q += p * eval.q(i, a);
    acc += nu[i] * q;
  }
  return acc;
}

namespace detail {

/// Objective over a whole grid with the evaluation and stationary
/// distribution computed once.
inline std::vector<double> weighted_pi_curve(const SoftThresholdParams& base,
                                             const SystemConfig& config, double gamma,
                                             double sigma, const std::vector<double>& grid) {
  DiscountedEval eval = discounted_policy_eval(base, config, gamma);
  std::vector<double> nu =
      stationary_distribution([&](const State& s) { return soft_threshold_dist(base, s, config); },
                              config);
  StateSpace space(config);
  std::vector<double> curve;
  curve.reserve(grid.size());
  for (double theta : grid) {
    SoftThresholdParams candidate{{theta}, sigma};
    double acc = 0;
    for (std::size_t i = 0; i < nu.size(); ++i) {
      if (nu[i] == 0) continue;
      State s = space.state_of(i);
      ActionDist dist = soft_threshold_dist(candidate, s, config);
      double q = 0;
      for (const auto& [a, p] : dist.entries) q += p * eval.q(i, a);
      acc += nu[i] * q;
    }
    curve.push_back(acc);
  }
  return curve;
}

/// True when the sequence weakly decreases to a single minimal plateau and
/// weakly increases after it.
inline bool is_unimodal_sequence(const std::vector<double>& values, std::size_t* argmin_index) {
  std::size_t n = values.size();
  std::size_t lo = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (values[i] < values[lo]) lo = i;
  if (argmin_index) *argmin_index = lo;
  std::size_t first = lo;
  while (first > 0 && values[first - 1] == values[lo]) --first;
  std::size_t last = lo;
  while (last + 1 < n && values[last + 1] == values[lo]) ++last;
  for (std::size_t i = 1; i <= first; ++i)
    if (!(values[i] <= values[i - 1])) return false;
  for (std::size_t i = last + 1; i < n; ++i)
    if (!(values[i] >= values[i - 1])) return false;
  return true;
}

}  // namespace detail

struct UnimodalResult {
  bool is_unimodal = false;
  double argmin = 0;
};

/// Scans the weighted PI objective over a sorted grid of candidate
/// thresholds (candidates share the base policy's sharpness).
inline UnimodalResult check_unimodality(const SoftThresholdParams& base,
                                        const SystemConfig& config, double gamma,
                                        const std::vector<double>& grid) {
  if (grid.size() < 3) throw std::invalid_argument("grid needs at least 3 points");
  if (!std::is_sorted(grid.begin(), grid.end()))
    throw std::invalid_argument("grid must be sorted");
  std::vector<double> curve =
      detail::weighted_pi_curve(base, config, gamma, base.sharpness, grid);
  std::size_t argmin_index = 0;
  UnimodalResult out;
  out.is_unimodal = detail::is_unimodal_sequence(curve, &argmin_index);
  out.argmin = grid[argmin_index];
  return out;
}

/// Default candidate grid [0, 3 * reference threshold] at 0.25 resolution,
/// widened to at least [0, 6] so the minimum stays interior on instances
/// with small thresholds.
inline std::vector<double> default_theta_grid(double reference_threshold, double step = 0.25) {
  double hi = std::max({3.0 * reference_threshold, reference_threshold + 2.0, 6.0});
  std::vector<double> grid;
  for (double x = 0; x <= hi + 1e-12; x += step) grid.push_back(x);
  return grid;
}

/// One verification point: h-sequence shape plus unimodality and argmin of
/// the weighted PI objective for a base actor at the given threshold.
struct VerifierRow {
  double gamma = 0;
  double sigma = 0;
  double theta_base = 0;
  int l_star = -1;
  bool single_sign_change = false;
  bool prefix_strictly_increasing = false;
  bool unimodal = false;
  double argmin = 0;
};

inline VerifierRow verify_point(const SystemConfig& config, double gamma, double sigma,
                                double theta_base, const std::vector<double>& grid) {
  SoftThresholdParams base{{theta_base}, sigma};
  HStructure h = analyze_h(h_sequence(base, config, gamma));
  UnimodalResult u = check_unimodality(base, config, gamma, grid);
  VerifierRow row;
  row.gamma = gamma;
  row.sigma = sigma;
  row.theta_base = theta_base;
  row.l_star = h.l_star;
  row.single_sign_change = h.single_sign_change;
  row.prefix_strictly_increasing = h.prefix_strictly_increasing;
  row.unimodal = u.is_unimodal;
  row.argmin = u.argmin;
  return row;
}

}  // namespace hetroute
