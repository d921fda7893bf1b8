#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <vector>

#include "hetroute/config.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/rng.hpp"
#include "hetroute/state.hpp"
#include "hetroute/transition.hpp"

using namespace hetroute;

namespace {

SystemConfig config_a() { return SystemConfig::with_load(0.4, {100, 25, 5, 1}, 100); }

// chi-square 0.001 critical values for df = 1..8
constexpr double kChi2Crit[] = {10.828, 13.816, 16.266, 18.467, 20.515, 22.458, 24.322, 26.125};

}  // namespace

TEST_CASE("config invariants are enforced") {
  CHECK_THROWS_AS(SystemConfig(1.0, {}, 10), std::invalid_argument);
  CHECK_THROWS_AS(SystemConfig(-1.0, {2.0}, 10), std::invalid_argument);
  CHECK_THROWS_AS(SystemConfig(1.0, {2.0, 3.0}, 10), std::invalid_argument);  // unsorted
  CHECK_THROWS_AS(SystemConfig(1.0, {2.0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(SystemConfig(5.0, {2.0, 1.0}, 10), std::invalid_argument);  // unstable
  SystemConfig ok = SystemConfig::with_load(0.4, {100, 25, 5, 1}, 100);
  CHECK(ok.arrival_rate == Catch::Approx(52.4));
  CHECK(ok.server_count() == 4);
}

TEST_CASE("config json round trip accepts load or arrival rate") {
  nlohmann::json j = config_a();
  SystemConfig back = system_config_from_json(j);
  CHECK(back.arrival_rate == Catch::Approx(52.4));
  nlohmann::json via_load{{"load", 0.4}, {"service_rates", {100, 25, 5, 1}}, {"buffer_capacity", 100}};
  CHECK(system_config_from_json(via_load).arrival_rate == Catch::Approx(52.4));
  nlohmann::json both = via_load;
  both["arrival_rate"] = 52.4;
  CHECK_THROWS_AS(system_config_from_json(both), std::invalid_argument);
}

TEST_CASE("event probabilities") {
  SystemConfig cfg = config_a();  // lambda = 52.4, Lambda = 183.4
  EventProbs ev = event_probs(cfg);
  CHECK(ev.arrival == Catch::Approx(52.4 / 183.4).epsilon(1e-12));
  CHECK(ev.arrival == Catch::Approx(2.0 / 7.0).epsilon(1e-12));  // rho/(1+rho)
  CHECK(ev.departures[0] == Catch::Approx(0.54526).margin(5e-6));

  SystemConfig single(0.5, {1.0}, 10);
  EventProbs ev1 = event_probs(single);
  CHECK(ev1.arrival == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(ev1.departures[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));

  double total = ev.arrival;
  for (double d : ev.departures) total += d;
  CHECK(total == Catch::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("fastest available server") {
  SystemConfig cfg = config_a();
  CHECK(fastest_available(State{2, 0b1001}, cfg) == 2);  // busy 1 and 4
  CHECK_FALSE(fastest_available(State{2, 0b1111}, cfg).has_value());
  SystemConfig twins = SystemConfig::with_load(0.4, {100, 100, 1, 1}, 100);
  CHECK(fastest_available(State{1, 0b0101}, twins) == 2);  // tie broken to smaller index
}

TEST_CASE("valid actions") {
  SystemConfig cfg = SystemConfig::with_load(0.4, {100, 25}, 100);
  auto acts = valid_actions(State{0, 0b00}, cfg);
  REQUIRE(acts.size() == 1);
  CHECK(acts[0].is_wait());
  acts = valid_actions(State{3, 0b11}, cfg);
  REQUIRE(acts.size() == 1);
  acts = valid_actions(State{2, 0b01}, cfg);
  REQUIRE(acts.size() == 2);
  CHECK(acts[1] == Action::route(2));
}

TEST_CASE("cost counts queue plus busy servers") {
  CHECK(cost(State{3, 0b0101}) == 5);
  CHECK(cost(State{0, 0}) == 0);
  SystemConfig cfg = config_a();
  CHECK(cost(State{cfg.buffer_capacity, 0b1111}) == cfg.buffer_capacity + 4);
}

TEST_CASE("transition merges fictitious departures") {
  // Two idle servers, wait: both departures are no-ops and merge.
  SystemConfig cfg(3.0, {2.0, 2.0}, 5);
  TransitionDist dist = transition(State{0, 0b00}, Action::wait(), cfg);
  REQUIRE(dist.entries.size() == 2);
  CHECK(dist.entries[0].first == State{0, 0b00});
  CHECK(dist.entries[0].second == Catch::Approx(4.0 / 7.0));
  CHECK(dist.entries[1].first == State{1, 0b00});
  CHECK(dist.entries[1].second == Catch::Approx(3.0 / 7.0));
}

TEST_CASE("transition after routing") {
  SystemConfig cfg(50.0, {100.0, 25.0}, 100);
  TransitionDist dist = transition(State{1, 0b01}, Action::route(2), cfg);
  REQUIRE(dist.entries.size() == 3);
  std::map<std::pair<int, unsigned>, double> got;
  for (const auto& [s, p] : dist.entries) got[{s.queue_len, s.busy_mask}] = p;
  CHECK(got[{0, 0b10}] == Catch::Approx(100.0 / 175.0));  // departure at server 1
  CHECK(got[{0, 0b01}] == Catch::Approx(25.0 / 175.0));   // departure at server 2
  CHECK(got[{1, 0b11}] == Catch::Approx(50.0 / 175.0));   // arrival
}

TEST_CASE("transition rejects infeasible actions") {
  SystemConfig cfg(50.0, {100.0, 25.0}, 100);
  CHECK_THROWS_AS(transition(State{0, 0b00}, Action::route(1), cfg), std::invalid_argument);
  CHECK_THROWS_AS(transition(State{2, 0b01}, Action::route(1), cfg), std::invalid_argument);
}

TEST_CASE("transition probabilities sum to one across the space") {
  SystemConfig cfg = SystemConfig::with_load(0.45, {10, 4, 1}, 6);
  StateSpace space(cfg);
  for (std::size_t i = 0; i < space.size(); ++i) {
    State s = space.state_of(i);
    for (Action a : valid_actions(s, cfg)) {
      TransitionDist dist = transition(s, a, cfg);
      CHECK(std::abs(dist.total() - 1.0) < 1e-12);
      CHECK(dist.entries.size() <= static_cast<std::size_t>(cfg.server_count()) + 1);
      for (const auto& [next, p] : dist.entries) CHECK(p > 0);
    }
  }
}

TEST_CASE("arrivals at a full buffer are dropped") {
  SystemConfig cfg(3.0, {2.0, 1.5}, 2);
  TransitionDist dist = transition(State{2, 0b11}, Action::wait(), cfg);
  // arrival keeps the state, so it merges with nothing else here
  double stay = 0;
  for (const auto& [s, p] : dist.entries)
    if (s == State{2, 0b11}) stay = p;
  CHECK(stay == Catch::Approx(3.0 / 6.5));
}

TEST_CASE("state enumeration is the documented bijection") {
  SystemConfig cfg = SystemConfig::with_load(0.4, {100, 25}, 100);
  StateSpace space(cfg);
  CHECK(space.size() == 101u * 4u);
  CHECK(space.index_of(State{0, 0b00}) == 0);
  CHECK(space.index_of(State{1, 0b01}) == 5);
  for (std::size_t i = 0; i < space.size(); ++i) CHECK(space.index_of(space.state_of(i)) == i);
  CHECK_THROWS_AS(space.state_of(space.size()), std::out_of_range);
  CHECK_THROWS_AS(space.index_of(State{101, 0}), std::out_of_range);
}

TEST_CASE("sample_next is deterministic and consumes one draw per call") {
  SystemConfig cfg = config_a();
  State s{3, 0b0011};
  Rng a(42), b(42);
  for (int i = 0; i < 200; ++i) {
    State na = sample_next(s, Action::wait(), cfg, a);
    State nb = sample_next(s, Action::wait(), cfg, b);
    CHECK(na == nb);
  }
  Rng counter(7);
  auto before = counter.engine();
  (void)sample_next(s, Action::wait(), cfg, counter);
  before.discard(1);
  CHECK(before == counter.engine());
}

TEST_CASE("sample_next from the empty idle state waits out departures") {
  SystemConfig cfg(0.001, {100.0, 25.0}, 10);  // departures dominate
  Rng rng(1);
  State s{0, 0b00};
  for (int i = 0; i < 100; ++i) {
    State next = sample_next(s, Action::wait(), cfg, rng);
    CHECK((next == s || next == State{1, 0b00}));
  }
}

TEST_CASE("sample_next frequencies match the exact distribution") {
  SystemConfig cfg(50.0, {100.0, 25.0}, 100);
  State s{1, 0b01};
  Action a = Action::route(2);
  TransitionDist dist = transition(s, a, cfg);
  StateSpace space(cfg);

  const int n = 1'000'000;
  std::map<std::size_t, int> counts;
  Rng rng(2024);
  for (int i = 0; i < n; ++i) counts[space.index_of(sample_next(s, a, cfg, rng))] += 1;

  double chi2 = 0;
  for (const auto& [next, p] : dist.entries) {
    double expected = p * n;
    double observed = counts[space.index_of(next)];
    chi2 += (observed - expected) * (observed - expected) / expected;
    // each bin within 3.5 standard errors
    double se = std::sqrt(p * (1 - p) * n);
    CHECK(std::abs(observed - expected) < 3.5 * se);
  }
  int df = static_cast<int>(dist.entries.size()) - 1;
  REQUIRE(df >= 1);
  CHECK(chi2 < kChi2Crit[df - 1]);
}

TEST_CASE("chain is irreducible and aperiodic under a mixed policy") {
  SystemConfig cfg = SystemConfig::with_load(0.4, {4.0, 1.0}, 3);
  StateSpace space(cfg);
  SoftThresholdParams actor{{1.5}, 1.0};

  // forward adjacency under the soft threshold policy
  std::vector<std::set<std::size_t>> adj(space.size()), radj(space.size());
  bool self_loop = false;
  for (std::size_t i = 0; i < space.size(); ++i) {
    State s = space.state_of(i);
    ActionDist pi = soft_threshold_dist(actor, s, cfg);
    for (const auto& [a, prob] : pi.entries) {
      if (prob <= 0) continue;
      for (const auto& [next, p] : transition(s, a, cfg).entries) {
        std::size_t j = space.index_of(next);
        adj[i].insert(j);
        radj[j].insert(i);
        if (i == j) self_loop = true;
      }
    }
  }

  auto bfs = [&](std::size_t start, const std::vector<std::set<std::size_t>>& graph) {
    std::set<std::size_t> seen{start};
    std::queue<std::size_t> frontier;
    frontier.push(start);
    while (!frontier.empty()) {
      std::size_t v = frontier.front();
      frontier.pop();
      for (std::size_t w : graph[v])
        if (seen.insert(w).second) frontier.push(w);
    }
    return seen;
  };

  std::set<std::size_t> reachable = bfs(0, adj);
  std::set<std::size_t> coreachable = bfs(0, radj);
  for (std::size_t v : reachable) CHECK(coreachable.count(v) == 1);  // strongly connected
  CHECK(self_loop);                                                  // aperiodic
}

TEST_CASE("pod masking hides unsampled servers") {
  SystemConfig cfg = SystemConfig::with_load(0.4, {100, 25, 5, 1}, 100);
  Rng rng(5);
  State s{3, 0b0000};
  State full = pod_restrict(s, 4, cfg, rng);
  CHECK(full == s);

  CHECK_THROWS_AS(pod_restrict(s, 0, cfg, rng), std::invalid_argument);
  CHECK_THROWS_AS(pod_restrict(s, 5, cfg, rng), std::invalid_argument);

  // d = 1 with an all-busy true state leaves only wait
  State busy{3, 0b1111};
  State masked = pod_restrict(busy, 1, cfg, rng);
  CHECK(masked.busy_mask == 0b1111);

  // sampling frequency d/k per server, checked on an all-idle state
  const int trials = 200'000;
  int d = 2;
  std::vector<int> visible(cfg.server_count(), 0);
  for (int t = 0; t < trials; ++t) {
    State m = pod_restrict(s, d, cfg, rng);
    for (int i = 1; i <= cfg.server_count(); ++i)
      if (!m.busy(i)) visible[i - 1] += 1;
  }
  double expect = static_cast<double>(d) / cfg.server_count();
  double se = std::sqrt(expect * (1 - expect) / trials);
  for (int i = 0; i < cfg.server_count(); ++i) {
    double freq = static_cast<double>(visible[i]) / trials;
    CHECK(std::abs(freq - expect) < 3.5 * se);
  }
}
