#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "hetroute/config.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/state.hpp"
#include "hetroute/transition.hpp"

namespace hetroute {

/// Value function over the enumerated state space, pinned to 0 at the
/// reference state after each relative-value-iteration sweep.
struct ValueTable {
  std::vector<double> values;
  std::size_t reference_state = 0;
};

/// One action per enumerated state.
struct TabularPolicy {
  std::vector<Action> actions;
};

/// Flattened successor lists for every (state, feasible action) pair;
/// shared by the tabular solvers so transitions are enumerated once.
class TransitionTable {
public:
  struct Arc {
    std::uint32_t next;
    double prob;
  };

  explicit TransitionTable(const SystemConfig& config) : space_(config) {
    std::size_t n = space_.size();
    state_begin_.reserve(n + 1);
    state_begin_.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
      State s = space_.state_of(i);
      for (Action a : valid_actions(s, config)) {
        actions_.push_back(a);
        TransitionDist dist = transition(s, a, config);
        arc_begin_.push_back(static_cast<std::uint32_t>(arcs_.size()));
        for (const auto& [next, p] : dist.entries)
          arcs_.push_back(Arc{static_cast<std::uint32_t>(space_.index_of(next)), p});
      }
      state_begin_.push_back(static_cast<std::uint32_t>(actions_.size()));
    }
    arc_begin_.push_back(static_cast<std::uint32_t>(arcs_.size()));
  }

  const StateSpace& space() const { return space_; }
  std::size_t state_count() const { return space_.size(); }

  std::size_t action_count(std::size_t state) const {
    return state_begin_[state + 1] - state_begin_[state];
  }
  Action action(std::size_t state, std::size_t a) const {
    return actions_[state_begin_[state] + a];
  }

  /// Expected value of the successor distribution under `values`.
  double successor_value(std::size_t state, std::size_t a, const std::vector<double>& values) const {
    std::uint32_t slot = state_begin_[state] + static_cast<std::uint32_t>(a);
    double acc = 0;
    for (std::uint32_t e = arc_begin_[slot]; e < arc_begin_[slot + 1]; ++e)
      acc += arcs_[e].prob * values[arcs_[e].next];
    return acc;
  }

  template <class Fn>
  void for_each_arc(std::size_t state, std::size_t a, Fn&& fn) const {
    std::uint32_t slot = state_begin_[state] + static_cast<std::uint32_t>(a);
    for (std::uint32_t e = arc_begin_[slot]; e < arc_begin_[slot + 1]; ++e)
      fn(arcs_[e].next, arcs_[e].prob);
  }

private:
  StateSpace space_;
  std::vector<std::uint32_t> state_begin_;  // per state, offset into actions_
  std::vector<Action> actions_;
  std::vector<std::uint32_t> arc_begin_;  // per (state, action) slot, offset into arcs_
  std::vector<Arc> arcs_;
};

namespace detail {

// Greedy argmin with ties broken wait-first then smallest server index.
// The tolerance absorbs float noise between states that are exactly
// symmetric in the model (equal-rate servers) but summed in different
// orders.
inline constexpr double kGreedyTieRel = 1e-9;

struct BackupOut {
  double value;
  Action greedy;
};

inline BackupOut backup_state(const TransitionTable& table, std::size_t i, double cost_i,
                              const std::vector<double>& old_values) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t na = table.action_count(i);
  for (std::size_t a = 0; a < na; ++a)
    best = std::min(best, cost_i + table.successor_value(i, a, old_values));
  double tie = kGreedyTieRel * (1.0 + std::abs(best));
  for (std::size_t a = 0; a < na; ++a) {
    double q = cost_i + table.successor_value(i, a, old_values);
    if (q <= best + tie) return BackupOut{best, table.action(i, a)};
  }
  return BackupOut{best, Action::wait()};  // unreachable
}

}  // namespace detail

struct BackupResult {
  ValueTable values;
  TabularPolicy policy;
};

/// One synchronous Bellman sweep T(V) with the greedy policy it induces.
inline BackupResult bellman_backup(const ValueTable& v, const TransitionTable& table) {
  std::size_t n = table.state_count();
  if (v.values.size() != n) throw std::invalid_argument("value table size mismatch");
  BackupResult out;
  out.values.values.resize(n);
  out.values.reference_state = v.reference_state;
  out.policy.actions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [value, greedy] =
        detail::backup_state(table, i, cost(table.space().state_of(i)), v.values);
    out.values.values[i] = value;
    out.policy.actions.push_back(greedy);
  }
  return out;
}

inline BackupResult bellman_backup(const ValueTable& v, const SystemConfig& config) {
  return bellman_backup(v, TransitionTable(config));
}

struct RviResult {
  ValueTable values;
  TabularPolicy policy;
  long long iterations = 0;
  double average_cost = 0;  // T(V) at the reference state on the final sweep
  double final_span = 0;
  bool span_monotone = true;  // non-increasing successive-difference span after sweep 10
};

/// Relative value iteration: V <- T(V) - T(V)(reference), stopping when the
/// span (max - min) of successive differences drops to `tolerance`.
inline RviResult relative_value_iteration(const SystemConfig& config, double tolerance = 1e-9,
                                          std::size_t reference_state = 0,
                                          long long max_iterations = 1'000'000) {
  if (!(tolerance > 0)) throw std::invalid_argument("tolerance must be positive");
  TransitionTable table(config);
  std::size_t n = table.state_count();
  if (reference_state >= n) throw std::out_of_range("reference state out of range");

  std::vector<int> costs(n);
  for (std::size_t i = 0; i < n; ++i) costs[i] = cost(table.space().state_of(i));

  RviResult result;
  result.values.values.assign(n, 0.0);
  result.values.reference_state = reference_state;
  result.policy.actions.assign(n, Action::wait());
  std::vector<double> next(n);

  double prev_span = std::numeric_limits<double>::infinity();
  for (long long iter = 1; iter <= max_iterations; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      auto [value, greedy] = detail::backup_state(table, i, costs[i], result.values.values);
      next[i] = value;
      result.policy.actions[i] = greedy;
    }
    double at_ref = next[reference_state];
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      double diff = next[i] - at_ref - result.values.values[i];
      lo = std::min(lo, diff);
      hi = std::max(hi, diff);
      result.values.values[i] = next[i] - at_ref;
    }
    double span = hi - lo;
    result.iterations = iter;
    result.average_cost = at_ref;
    result.final_span = span;
    if (iter > 10 && span > prev_span + 1e-12) result.span_monotone = false;
    prev_span = span;
    if (span <= tolerance) return result;
  }
  throw std::runtime_error("relative value iteration did not converge within the iteration cap");
}

struct DiscountedViResult {
  std::vector<double> values;
  TabularPolicy policy;
  long long iterations = 0;
};

/// Plain discounted value iteration to sup-norm tolerance; used by the
/// two-server verification as the optimal-policy oracle.
inline DiscountedViResult discounted_value_iteration(const SystemConfig& config, double gamma,
                                                     double tolerance = 1e-10,
                                                     long long max_iterations = 10'000'000) {
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("gamma must be in (0,1)");
  TransitionTable table(config);
  std::size_t n = table.state_count();
  std::vector<int> costs(n);
  for (std::size_t i = 0; i < n; ++i) costs[i] = cost(table.space().state_of(i));

  DiscountedViResult result;
  result.values.assign(n, 0.0);
  result.policy.actions.assign(n, Action::wait());
  std::vector<double> next(n);
  for (long long iter = 1; iter <= max_iterations; ++iter) {
    double diff = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t na = table.action_count(i);
      for (std::size_t a = 0; a < na; ++a)
        best = std::min(best, costs[i] + gamma * table.successor_value(i, a, result.values));
      double tie = detail::kGreedyTieRel * (1.0 + std::abs(best));
      for (std::size_t a = 0; a < na; ++a) {
        double q = costs[i] + gamma * table.successor_value(i, a, result.values);
        if (q <= best + tie) {
          result.policy.actions[i] = table.action(i, a);
          break;
        }
      }
      next[i] = best;
      diff = std::max(diff, std::abs(best - result.values[i]));
    }
    result.values.swap(next);
    result.iterations = iter;
    if (diff <= tolerance) return result;
  }
  throw std::runtime_error("discounted value iteration did not converge within the iteration cap");
}

/// Per-busy-pattern threshold extracted from a tabular policy: the pattern
/// conforms when waits come before routes to the fastest idle server as the
/// queue grows, with a single switch point.
struct ThresholdEntry {
  std::uint32_t busy_mask;
  int fastest_idle;
  double threshold;     // queue length above which the policy routes; +inf if never
  bool threshold_form;  // false if the column is not wait-then-route to f
};

struct ThresholdReport {
  std::vector<ThresholdEntry> entries;
  bool is_threshold_type = true;

  const ThresholdEntry& entry_for(std::uint32_t mask) const {
    for (const auto& e : entries)
      if (e.busy_mask == mask) return e;
    throw std::out_of_range("no threshold entry for busy pattern");
  }
};

inline ThresholdReport extract_thresholds(const TabularPolicy& policy, const SystemConfig& config) {
  StateSpace space(config);
  int k = space.server_count();
  int cap = space.buffer_capacity();
  ThresholdReport report;
  std::uint32_t full = (1u << k) - 1;
  for (std::uint32_t mask = 0; mask <= full; ++mask) {
    if (mask == full) continue;  // no idle server, nothing to extract
    State probe{0, mask};
    int f = *fastest_available(probe, config);
    bool conforms = true;
    int first_route = -1;
    bool routed = false;
    for (int queue = 0; queue <= cap; ++queue) {
      Action a = policy.actions[space.index_of(State{queue, mask})];
      bool routes_to_f = !a.is_wait() && a.raw() == f;
      if (!a.is_wait() && a.raw() != f) conforms = false;
      if (routes_to_f && !routed) {
        routed = true;
        first_route = queue;
      } else if (!routes_to_f && routed) {
        conforms = false;  // route column must stay routed once it switches
      }
    }
    ThresholdEntry e;
    e.busy_mask = mask;
    e.fastest_idle = f;
    e.threshold_form = conforms;
    // Routing can only start at queue length 1, so an always-routing column
    // reports threshold 0.
    e.threshold = !routed ? std::numeric_limits<double>::infinity()
                          : static_cast<double>(first_route - 1);
    report.entries.push_back(e);
    if (!conforms) report.is_threshold_type = false;
  }
  return report;
}

/// Threshold of server i read from the canonical pattern where exactly
/// servers 1..i-1 are busy.
inline double canonical_server_threshold(const ThresholdReport& report, int server) {
  std::uint32_t mask = (server == 1) ? 0u : ((1u << (server - 1)) - 1);
  return report.entry_for(mask).threshold;
}

/// Point-mass distribution policy induced by a tabular policy.
inline auto greedy_dist_policy(const TabularPolicy& policy, const SystemConfig& config) {
  StateSpace space(config);
  return [actions = policy.actions, space](const State& s) {
    return point_mass(actions[space.index_of(s)]);
  };
}

namespace detail {

template <DistPolicy P>
Eigen::SparseMatrix<double> policy_kernel(P&& policy, const TransitionTable& table) {
  std::size_t n = table.state_count();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    State s = table.space().state_of(i);
    ActionDist dist = policy(s);
    double total = 0;
    for (const auto& [a, p] : dist.entries) total += p;
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("policy distribution does not sum to 1");
    for (const auto& [a, p] : dist.entries) {
      if (p == 0) continue;
      std::size_t slot_count = table.action_count(i);
      bool found = false;
      for (std::size_t slot = 0; slot < slot_count; ++slot) {
        if (table.action(i, slot) == a) {
          table.for_each_arc(i, slot, [&](std::uint32_t j, double q) {
            triplets.emplace_back(static_cast<int>(i), static_cast<int>(j), p * q);
          });
          found = true;
          break;
        }
      }
      if (!found) throw std::invalid_argument("policy assigns probability to an infeasible action");
    }
  }
  Eigen::SparseMatrix<double> kernel(static_cast<int>(n), static_cast<int>(n));
  kernel.setFromTriplets(triplets.begin(), triplets.end());
  return kernel;
}

}  // namespace detail

/// Stationary distribution of the chain induced by a distribution policy,
/// from a direct sparse solve of nu P = nu with one balance equation
/// replaced by normalization. States unreachable from the recurrent class
/// come out at probability 0.
template <DistPolicy P>
std::vector<double> stationary_distribution(P&& policy, const SystemConfig& config) {
  TransitionTable table(config);
  Eigen::SparseMatrix<double> kernel = detail::policy_kernel(policy, table);
  int n = kernel.rows();

  // Rows of (P^T - I) sum to zero, so dropping the last one keeps full rank
  // for a unichain kernel and the system below is nonsingular.
  Eigen::SparseMatrix<double> pt = kernel.transpose();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(pt.nonZeros() + 2 * n);
  for (int col = 0; col < pt.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(pt, col); it; ++it)
      if (it.row() < n - 1) triplets.emplace_back(it.row(), it.col(), it.value());
  for (int i = 0; i < n - 1; ++i) triplets.emplace_back(i, i, -1.0);
  for (int i = 0; i < n; ++i) triplets.emplace_back(n - 1, i, 1.0);
  Eigen::SparseMatrix<double> system(n, n);
  system.setFromTriplets(triplets.begin(), triplets.end());
  system.makeCompressed();

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs[n - 1] = 1.0;

  // Direct factorization is cheap on small chains; on large ones the fill-in
  // explodes for mixed policies, so prefer ILUT-preconditioned BiCGSTAB and
  // fall back to the factorization if the iteration stalls.
  Eigen::VectorXd nu;
  auto residual_of = [&](const Eigen::VectorXd& v) {
    return (kernel.transpose() * v - v).lpNorm<1>();
  };
  bool solved = false;
  if (n > 4096) {
    Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::IncompleteLUT<double>> iterative;
    iterative.setTolerance(1e-14);
    iterative.compute(system);
    if (iterative.info() == Eigen::Success) {
      nu = iterative.solve(rhs);
      solved = iterative.info() == Eigen::Success && residual_of(nu) <= 1e-10;
    }
  }
  if (!solved) {
    Eigen::SparseLU<Eigen::SparseMatrix<double>> direct;
    direct.analyzePattern(system);
    direct.factorize(system);
    if (direct.info() != Eigen::Success)
      throw std::runtime_error("stationary distribution solve failed (singular chain?)");
    nu = direct.solve(rhs);
  }

  if (residual_of(nu) > 1e-10)
    throw std::runtime_error("stationary distribution residual exceeds tolerance");

  std::vector<double> out(static_cast<std::size_t>(n));
  double total = 0;
  for (int i = 0; i < n; ++i) {
    double v = nu[i];
    if (v < 0) {
      if (v < -1e-9) throw std::runtime_error("stationary distribution has a negative mass");
      v = 0;
    }
    out[static_cast<std::size_t>(i)] = v;
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

/// Long-run mean jobs in system under the policy's stationary distribution.
template <DistPolicy P>
double exact_average_cost(P&& policy, const SystemConfig& config) {
  StateSpace space(config);
  std::vector<double> nu = stationary_distribution(policy, config);
  double acc = 0;
  for (std::size_t i = 0; i < nu.size(); ++i) acc += nu[i] * cost(space.state_of(i));
  return acc;
}

/// Little's law: mean jobs = arrival rate x response time. Blocking at the
/// buffer cap is ignored, matching the loads this model runs at.
inline double expected_response_time(double avg_jobs, const SystemConfig& config) {
  if (avg_jobs < 0) throw std::invalid_argument("average job count must be non-negative");
  return avg_jobs / config.arrival_rate;
}

/// Average-cost policy evaluation: the gain eta and the differential value
/// (bias) h solving h = c - eta + P h with h pinned to 0 at the reference.
struct PoissonEval {
  double average_cost = 0;
  std::vector<double> bias;
};

template <DistPolicy P>
PoissonEval average_cost_bias(P&& policy, const SystemConfig& config,
                              std::size_t reference_state = 0) {
  TransitionTable table(config);
  std::size_t n = table.state_count();
  std::vector<double> nu = stationary_distribution(policy, config);
  double eta = 0;
  for (std::size_t i = 0; i < n; ++i) eta += nu[i] * cost(table.space().state_of(i));

  Eigen::SparseMatrix<double> kernel = detail::policy_kernel(policy, table);
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd rhs(static_cast<int>(n));
  for (int i = 0; i < static_cast<int>(n); ++i)
    rhs[i] = cost(table.space().state_of(static_cast<std::size_t>(i))) - eta;
  for (int col = 0; col < kernel.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(kernel, col); it; ++it)
      if (static_cast<std::size_t>(it.row()) != reference_state)
        triplets.emplace_back(it.row(), it.col(), -it.value());
  for (int i = 0; i < static_cast<int>(n); ++i)
    if (static_cast<std::size_t>(i) != reference_state) triplets.emplace_back(i, i, 1.0);
  triplets.emplace_back(static_cast<int>(reference_state), static_cast<int>(reference_state), 1.0);
  rhs[static_cast<int>(reference_state)] = 0.0;

  Eigen::SparseMatrix<double> system(static_cast<int>(n), static_cast<int>(n));
  system.setFromTriplets(triplets.begin(), triplets.end());
  system.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
  solver.compute(system);
  if (solver.info() != Eigen::Success) throw std::runtime_error("bias solve failed");
  Eigen::VectorXd h = solver.solve(rhs);

  PoissonEval out;
  out.average_cost = eta;
  out.bias.assign(h.data(), h.data() + n);
  return out;
}

/// Ordinary least squares of the value table against the raw state vector
/// (queue length and busy flags) plus an intercept.
struct LinearFit {
  std::vector<double> weights;  // one per state coordinate
  double intercept = 0;
  double r_squared = 0;
};

inline LinearFit linear_fit_value(const ValueTable& v, const SystemConfig& config) {
  StateSpace space(config);
  std::size_t n = space.size();
  if (v.values.size() != n) throw std::invalid_argument("value table size mismatch");
  int k = space.server_count();
  int cols = k + 2;
  Eigen::MatrixXd x(static_cast<int>(n), cols);
  Eigen::VectorXd y(static_cast<int>(n));
  for (std::size_t i = 0; i < n; ++i) {
    State s = space.state_of(i);
    int row = static_cast<int>(i);
    x(row, 0) = 1.0;
    x(row, 1) = s.queue_len;
    for (int srv = 1; srv <= k; ++srv) x(row, 1 + srv) = s.busy(srv) ? 1.0 : 0.0;
    y[row] = v.values[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < cols) throw std::runtime_error("rank-deficient design matrix");
  Eigen::VectorXd beta = qr.solve(y);

  double mean = y.mean();
  double ss_tot = (y.array() - mean).square().sum();
  double ss_res = (y - x * beta).squaredNorm();
  LinearFit fit;
  fit.intercept = beta[0];
  fit.weights.assign(beta.data() + 1, beta.data() + cols);
  fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
  return fit;
}

}  // namespace hetroute
