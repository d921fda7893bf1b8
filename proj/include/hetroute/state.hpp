#pragma once

#include <bit>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetroute/config.hpp"

namespace hetroute {

/// System state: jobs waiting in the queue plus a busy bit per server.
/// Bit i-1 of busy_mask is server i (servers are 1-based, fastest first).
struct State {
  int queue_len = 0;
  std::uint32_t busy_mask = 0;

  bool busy(int server) const { return (busy_mask >> (server - 1)) & 1u; }

  State with_busy(int server) const {
    return State{queue_len, busy_mask | (1u << (server - 1))};
  }

  State with_idle(int server) const {
    return State{queue_len, busy_mask & ~(1u << (server - 1))};
  }

  int busy_count() const { return std::popcount(busy_mask); }

  friend bool operator==(const State&, const State&) = default;
};

/// Routing decision: wait for the next event, or send the head-of-queue job
/// to an idle server.
class Action {
public:
  static constexpr Action wait() { return Action(0); }

  static Action route(int server) {
    if (server < 1) throw std::invalid_argument("route target must be a 1-based server index");
    return Action(server);
  }

  constexpr bool is_wait() const { return target_ == 0; }

  int server() const {
    if (is_wait()) throw std::logic_error("wait action has no target server");
    return target_;
  }

  /// 0 for wait, server index otherwise.
  constexpr int raw() const { return target_; }

  friend constexpr auto operator<=>(const Action&, const Action&) = default;

private:
  explicit constexpr Action(int target) : target_(target) {}
  int target_;
};

/// Jobs in the system: queue plus in-service.
inline int cost(const State& s) { return s.queue_len + s.busy_count(); }

/// Lowest idle index, which under the sorted-rate invariant is the fastest
/// available server (rate ties resolve to the smaller index). Empty when all
/// servers are busy.
inline std::optional<int> fastest_available(const State& s, const SystemConfig& config) {
  int k = config.server_count();
  for (int i = 1; i <= k; ++i)
    if (!s.busy(i)) return i;
  return std::nullopt;
}

/// Wait is always allowed; routing needs a waiting job and an idle target.
inline std::vector<Action> valid_actions(const State& s, const SystemConfig& config) {
  std::vector<Action> actions;
  actions.push_back(Action::wait());
  if (s.queue_len > 0) {
    for (int i = 1; i <= config.server_count(); ++i)
      if (!s.busy(i)) actions.push_back(Action::route(i));
  }
  return actions;
}

inline bool is_valid_action(const State& s, Action a, const SystemConfig& config) {
  if (a.is_wait()) return true;
  int i = a.raw();
  return s.queue_len > 0 && i <= config.server_count() && !s.busy(i);
}

/// Enumeration of the (capacity+1) * 2^k states with the flat index
/// queue_len * 2^k + busy_mask.
class StateSpace {
public:
  explicit StateSpace(const SystemConfig& config)
      : k_(config.server_count()), capacity_(config.buffer_capacity) {
    if (k_ > 24) throw std::invalid_argument("state space too large to enumerate (k > 24)");
  }

  std::size_t size() const {
    return static_cast<std::size_t>(capacity_ + 1) << k_;
  }

  std::size_t index_of(const State& s) const {
    if (s.queue_len < 0 || s.queue_len > capacity_ || s.busy_mask >= (1u << k_))
      throw std::out_of_range("state outside enumerated space");
    return (static_cast<std::size_t>(s.queue_len) << k_) + s.busy_mask;
  }

  State state_of(std::size_t index) const {
    if (index >= size()) throw std::out_of_range("state index out of range");
    return State{static_cast<int>(index >> k_),
                 static_cast<std::uint32_t>(index & ((1u << k_) - 1))};
  }

  int server_count() const { return k_; }
  int buffer_capacity() const { return capacity_; }

private:
  int k_;
  int capacity_;
};

/// Busy mask rendered as "b1b2...bk" for reports.
inline std::string busy_bits_string(std::uint32_t mask, int k) {
  std::string out(k, '0');
  for (int i = 0; i < k; ++i)
    if ((mask >> i) & 1u) out[i] = '1';
  return out;
}

}  // namespace hetroute
