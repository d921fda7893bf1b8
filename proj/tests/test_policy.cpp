#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hetroute/config.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/rng.hpp"
#include "hetroute/state.hpp"

using namespace hetroute;

namespace {

SystemConfig two_server() { return SystemConfig::with_load(0.4, {100, 25}, 100); }

double log_prob(const SoftThresholdParams& p, const State& s, Action a,
                const SystemConfig& cfg) {
  return std::log(soft_threshold_dist(p, s, cfg).prob_of(a));
}

}  // namespace

TEST_CASE("soft threshold distribution matches the logistic rule") {
  SystemConfig cfg = two_server();
  SoftThresholdParams p{{5.0}, 1.0};

  ActionDist at_threshold = soft_threshold_dist(p, State{5, 0b01}, cfg);
  CHECK(at_threshold.prob_of(Action::route(2)) == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(at_threshold.prob_of(Action::wait()) == Catch::Approx(0.5).epsilon(1e-12));

  ActionDist above = soft_threshold_dist(p, State{7, 0b01}, cfg);
  CHECK(above.prob_of(Action::route(2)) ==
        Catch::Approx(std::exp(2.0) / (1.0 + std::exp(2.0))).epsilon(1e-12));
  CHECK(above.prob_of(Action::route(2)) == Catch::Approx(0.880797).margin(1e-6));

  // fastest server free: route immediately regardless of the queue
  ActionDist fast = soft_threshold_dist(p, State{3, 0b10}, cfg);
  CHECK(fast.prob_of(Action::route(1)) == 1.0);

  ActionDist empty = soft_threshold_dist(p, State{0, 0b00}, cfg);
  CHECK(empty.prob_of(Action::wait()) == 1.0);

  ActionDist all_busy = soft_threshold_dist(p, State{4, 0b11}, cfg);
  CHECK(all_busy.prob_of(Action::wait()) == 1.0);
}

TEST_CASE("action distribution normalizes over feasible actions") {
  SystemConfig cfg = SystemConfig::with_load(0.5, {9, 4, 2, 1}, 20);
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    SoftThresholdParams p{{rng.uniform() * 20 - 5, rng.uniform() * 20 - 5, rng.uniform() * 20 - 5},
                          0.25 + rng.uniform() * 10};
    State s{static_cast<int>(rng.below(21)), static_cast<std::uint32_t>(rng.below(16))};
    ActionDist dist = soft_threshold_dist(p, s, cfg);
    CHECK(std::abs(dist.total() - 1.0) < 1e-12);
    for (const auto& [a, prob] : dist.entries) {
      CHECK(prob >= 0);
      CHECK(is_valid_action(s, a, cfg));
    }
  }
}

TEST_CASE("routing probability is monotone in queue length and threshold") {
  SystemConfig cfg = two_server();
  SoftThresholdParams p{{6.0}, 0.7};
  double prev = -1;
  for (int queue = 1; queue <= 50; ++queue) {
    double prob = soft_threshold_dist(p, State{queue, 0b01}, cfg).prob_of(Action::route(2));
    CHECK(prob >= prev);
    prev = prob;
  }
  prev = 2;
  for (double theta = -5; theta <= 30; theta += 0.5) {
    SoftThresholdParams q{{theta}, 0.7};
    double prob = soft_threshold_dist(q, State{10, 0b01}, cfg).prob_of(Action::route(2));
    CHECK(prob <= prev);
    prev = prob;
  }
}

TEST_CASE("sharp policies converge to the hard threshold rule") {
  SystemConfig cfg = two_server();
  std::vector<double> hard{0.0, 7.0};
  SoftThresholdParams soft{{7.0}, 1e3};
  for (int queue = 0; queue <= 20; ++queue) {
    if (queue == 7) continue;  // boundary: the hard rule is strict there
    State s{queue, 0b01};
    Action expected = hard_threshold_action(hard, s, cfg);
    double p_route = soft_threshold_dist(soft, s, cfg).prob_of(Action::route(2));
    CHECK(std::abs(p_route - (expected.is_wait() ? 0.0 : 1.0)) < 1e-6);
  }
}

TEST_CASE("grad log pi closed form") {
  SystemConfig cfg = two_server();
  SoftThresholdParams p{{5.0}, 1.0};
  State s{5, 0b01};  // p = 0.5

  auto g_route = grad_log_pi(p, s, Action::route(2), cfg);
  REQUIRE(g_route.size() == 1);
  CHECK(g_route[0] == Catch::Approx(-0.5).epsilon(1e-12));
  auto g_wait = grad_log_pi(p, s, Action::wait(), cfg);
  CHECK(g_wait[0] == Catch::Approx(0.5).epsilon(1e-12));

  // fastest server idle: nothing to differentiate
  auto g_fast = grad_log_pi(p, State{3, 0b10}, Action::route(1), cfg);
  CHECK(g_fast[0] == 0.0);

  CHECK_THROWS_AS(grad_log_pi(p, State{3, 0b10}, Action::wait(), cfg), std::invalid_argument);
  CHECK_THROWS_AS(grad_log_pi(p, s, Action::route(1), cfg), std::invalid_argument);
}

TEST_CASE("grad log pi matches central finite differences") {
  SystemConfig cfg = SystemConfig::with_load(0.5, {50, 20, 4}, 40);
  Rng rng(7);
  const double h = 1e-5;
  for (int trial = 0; trial < 500; ++trial) {
    double sigma = 0.5 + rng.uniform() * 10;
    SoftThresholdParams p{{rng.uniform() * 30 - 5, rng.uniform() * 30 - 5}, sigma};
    int queue = 1 + static_cast<int>(rng.below(40));
    std::uint32_t mask = trial % 2 ? 0b001 : 0b011;  // fastest idle is 2 or 3
    State s{queue, mask};
    int f = *fastest_available(s, cfg);
    Action a = rng.uniform() < 0.5 ? Action::wait() : Action::route(f);

    auto grad = grad_log_pi(p, s, a, cfg);
    for (int coord = 0; coord < 2; ++coord) {
      SoftThresholdParams up = p, dn = p;
      up.thresholds[coord] += h;
      dn.thresholds[coord] -= h;
      double fd = (log_prob(up, s, a, cfg) - log_prob(dn, s, a, cfg)) / (2 * h);
      double scale = std::max(1.0, std::abs(grad[coord]));
      CHECK(std::abs(fd - grad[coord]) / scale < 1e-6);
    }
    // bounded by sigma componentwise
    for (double g : grad) CHECK(std::abs(g) <= sigma + 1e-12);
  }
}

TEST_CASE("fas routes greedily") {
  SystemConfig cfg = SystemConfig::with_load(0.4, {100, 25, 5, 1}, 100);
  CHECK(fas_action(State{2, 0b1001}, cfg) == Action::route(2));
  CHECK(fas_action(State{0, 0b0000}, cfg).is_wait());
  CHECK(fas_action(State{5, 0b1111}, cfg).is_wait());
}

TEST_CASE("rsrt thresholds") {
  SystemConfig a = SystemConfig::with_load(0.4, {100, 25, 5, 1}, 100);
  CHECK(rsrt_thresholds(a) == std::vector<double>{0, 4, 25, 130});
  SystemConfig c = SystemConfig::with_load(0.4, {100, 100, 1, 1}, 100);
  CHECK(rsrt_thresholds(c) == std::vector<double>{0, 1, 200, 201});
  SystemConfig single(0.5, {1.0}, 5);
  CHECK(rsrt_thresholds(single) == std::vector<double>{0});
}

TEST_CASE("hard threshold comparison is strict") {
  SystemConfig cfg = two_server();
  std::vector<double> thresholds{0, 4};
  CHECK(hard_threshold_action(thresholds, State{5, 0b01}, cfg) == Action::route(2));
  CHECK(hard_threshold_action(thresholds, State{4, 0b01}, cfg).is_wait());
  CHECK(hard_threshold_action(thresholds, State{1, 0b10}, cfg) == Action::route(1));
}

TEST_CASE("sampling follows the distribution") {
  SystemConfig cfg = two_server();
  SoftThresholdParams p{{5.0}, 1.0};
  State s{6, 0b01};
  double expect = soft_threshold_dist(p, s, cfg).prob_of(Action::route(2));
  Rng rng(11);
  const int n = 400'000;
  int routed = 0;
  for (int i = 0; i < n; ++i)
    if (sample(soft_threshold_dist(p, s, cfg), rng) == Action::route(2)) routed += 1;
  double se = std::sqrt(expect * (1 - expect) / n);
  CHECK(std::abs(static_cast<double>(routed) / n - expect) < 3.5 * se);
}

TEST_CASE("soft params serialize to json") {
  SoftThresholdParams p{{4.0, 25.0, 130.0}, 2.5};
  nlohmann::json j = p;
  SoftThresholdParams back = soft_params_from_json(j);
  CHECK(back.thresholds == p.thresholds);
  CHECK(back.sharpness == p.sharpness);
  nlohmann::json bad{{"thresholds", {1.0}}, {"sharpness", -1.0}};
  CHECK_THROWS_AS(soft_params_from_json(bad), std::invalid_argument);
}
