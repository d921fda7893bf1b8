#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetroute/config.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/rng.hpp"
#include "hetroute/state.hpp"
#include "hetroute/transition.hpp"

namespace hetroute {

/// Point estimate of a long-run simulation: mean jobs in system over the
/// post-burn-in epochs, the response time it implies through Little's law,
/// and a 95% batch-means confidence halfwidth in avg_jobs units (divide by
/// the arrival rate for the response-time halfwidth).
struct TrajectoryStats {
  long long epochs = 0;  // counted (post-burn-in) epochs
  double avg_jobs = 0;
  double response_time = 0;
  double ci_halfwidth = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline constexpr int kBatchCount = 30;
inline constexpr double kT975Df29 = 2.0452296421327034;

inline double batch_means_halfwidth(const std::vector<double>& batch_means) {
  int b = static_cast<int>(batch_means.size());
  if (b < 2) return 0;
  double mean = 0;
  for (double m : batch_means) mean += m;
  mean /= b;
  double var = 0;
  for (double m : batch_means) var += (m - mean) * (m - mean);
  var /= (b - 1);
  return kT975Df29 * std::sqrt(var / b);
}

}  // namespace detail

/// Runs the epoch loop (observe, act, sample one event) from the empty
/// system. `occupancy`, when given, receives visit counts per state index
/// over the counted window.
template <SamplingPolicy P>
TrajectoryStats simulate(P&& policy, const SystemConfig& config, long long horizon,
                         long long burn_in, std::uint64_t seed,
                         std::vector<double>* occupancy = nullptr) {
  if (!(horizon > burn_in && burn_in >= 0))
    throw std::invalid_argument("need horizon > burn_in >= 0");

  Rng rng(seed);
  State s{};
  long long counted = horizon - burn_in;
  long long batch_size = counted / detail::kBatchCount;
  std::vector<double> batch_means;
  if (batch_size > 0) batch_means.reserve(detail::kBatchCount);

  StateSpace space(config);
  if (occupancy) occupancy->assign(space.size(), 0.0);

  double total = 0;
  double batch_acc = 0;
  long long in_batch = 0;
  for (long long t = 0; t < horizon; ++t) {
    if (t >= burn_in) {
      double c = cost(s);
      total += c;
      if (occupancy) (*occupancy)[space.index_of(s)] += 1.0;
      if (batch_size > 0 && static_cast<long long>(batch_means.size()) < detail::kBatchCount) {
        batch_acc += c;
        if (++in_batch == batch_size) {
          batch_means.push_back(batch_acc / static_cast<double>(batch_size));
          batch_acc = 0;
          in_batch = 0;
        }
      }
    }
    Action a = policy(s, rng);
    s = sample_next(s, a, config, rng);
  }

  TrajectoryStats stats;
  stats.epochs = counted;
  stats.avg_jobs = total / static_cast<double>(counted);
  stats.response_time = stats.avg_jobs / config.arrival_rate;
  stats.ci_halfwidth = detail::batch_means_halfwidth(batch_means);
  stats.seed = seed;
  return stats;
}

/// Named policy handle for comparisons; the sampler must be reusable across
/// seeds (it owns no trajectory state).
struct NamedPolicy {
  std::string name;
  std::function<Action(const State&, Rng&)> sampler;
};

struct ComparisonRow {
  std::string policy_name;
  int seed_count = 0;
  double response_time_mean = 0;
  double response_time_se = 0;
  double improvement_vs_reference_pct = 0;
};

/// Simulates every policy for every seed and reports the mean response time
/// per policy with its standard error across seeds, plus the relative
/// improvement against the named reference policy.
inline std::vector<ComparisonRow> compare(const std::vector<NamedPolicy>& policies,
                                          const SystemConfig& config, long long horizon,
                                          long long burn_in,
                                          const std::vector<std::uint64_t>& seeds,
                                          const std::string& reference) {
  if (policies.empty() || seeds.empty())
    throw std::invalid_argument("compare needs at least one policy and one seed");

  std::vector<ComparisonRow> rows;
  rows.reserve(policies.size());
  for (const auto& p : policies) {
    std::vector<double> samples;
    samples.reserve(seeds.size());
    for (auto seed : seeds)
      samples.push_back(simulate(p.sampler, config, horizon, burn_in, seed).response_time);
    double mean = 0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(samples.size());
    double se = 0;
    if (samples.size() > 1) {
      double var = 0;
      for (double v : samples) var += (v - mean) * (v - mean);
      var /= static_cast<double>(samples.size() - 1);
      se = std::sqrt(var / static_cast<double>(samples.size()));
    }
    rows.push_back(ComparisonRow{p.name, static_cast<int>(seeds.size()), mean, se, 0});
  }

  const ComparisonRow* ref = nullptr;
  for (const auto& r : rows)
    if (r.policy_name == reference) ref = &r;
  if (!ref) throw std::invalid_argument("reference policy not in comparison list");
  for (auto& r : rows)
    r.improvement_vs_reference_pct =
        100.0 * (ref->response_time_mean - r.response_time_mean) / ref->response_time_mean;
  return rows;
}

}  // namespace hetroute
