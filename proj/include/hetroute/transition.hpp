#pragma once

#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hetroute/config.hpp"
#include "hetroute/rng.hpp"
#include "hetroute/state.hpp"

namespace hetroute {

/// Event probabilities of the uniformized chain: sampling at every arrival
/// or departure instant, with idle servers emitting fictitious departures,
/// makes each epoch an independent draw over k+1 events.
struct EventProbs {
  double arrival;
  std::vector<double> departures;
};

inline EventProbs event_probs(const SystemConfig& config) {
  double total = config.total_rate();
  EventProbs p;
  p.arrival = config.arrival_rate / total;
  p.departures.reserve(config.service_rates.size());
  for (double mu : config.service_rates) p.departures.push_back(mu / total);
  return p;
}

/// Sparse successor distribution. Entries are sorted by state index and
/// merged, so there are at most k+1 of them and probabilities are strictly
/// positive.
struct TransitionDist {
  std::vector<std::pair<State, double>> entries;

  double total() const {
    double s = 0;
    for (const auto& [st, p] : entries) s += p;
    return s;
  }
};

/// State after the routing decision, before any event. Throws on an
/// infeasible action.
inline State apply_action(const State& s, Action a, const SystemConfig& config) {
  if (!is_valid_action(s, a, config)) throw std::invalid_argument("infeasible action");
  if (a.is_wait()) return s;
  State next = s.with_busy(a.server());
  next.queue_len -= 1;
  return next;
}

/// Successor after one event from the post-action state. Arrivals at a full
/// buffer are dropped; departures at idle servers are fictitious no-ops.
inline State apply_event_arrival(const State& post, const SystemConfig& config) {
  State next = post;
  if (next.queue_len < config.buffer_capacity) next.queue_len += 1;
  return next;
}

inline State apply_event_departure(const State& post, int server) {
  return post.with_idle(server);
}

inline TransitionDist transition(const State& s, Action a, const SystemConfig& config) {
  State post = apply_action(s, a, config);
  EventProbs ev = event_probs(config);
  int k = config.server_count();

  std::vector<std::pair<State, double>> raw;
  raw.reserve(k + 1);
  raw.emplace_back(apply_event_arrival(post, config), ev.arrival);
  for (int i = 1; i <= k; ++i)
    raw.emplace_back(apply_event_departure(post, i), ev.departures[i - 1]);

  auto key = [&](const State& st) {
    return (static_cast<std::uint64_t>(st.queue_len) << k) + st.busy_mask;
  };
  std::sort(raw.begin(), raw.end(),
            [&](const auto& x, const auto& y) { return key(x.first) < key(y.first); });

  TransitionDist dist;
  for (const auto& [st, p] : raw) {
    if (!dist.entries.empty() && dist.entries.back().first == st)
      dist.entries.back().second += p;
    else
      dist.entries.emplace_back(st, p);
  }
  return dist;
}

/// One successor draw. Consumes exactly one uniform; the event walk
/// (arrival, then departures in server order) realizes the merged
/// distribution of transition().
inline State sample_next(const State& s, Action a, const SystemConfig& config, Rng& rng) {
  State post = apply_action(s, a, config);
  double u = rng.uniform();
  double total = config.total_rate();
  double acc = config.arrival_rate / total;
  if (u < acc) return apply_event_arrival(post, config);
  int k = config.server_count();
  for (int i = 1; i <= k; ++i) {
    acc += config.service_rates[i - 1] / total;
    if (u < acc) return apply_event_departure(post, i);
  }
  return apply_event_departure(post, k);  // guard against rounding at u ~ 1
}

}  // namespace hetroute
