#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace hetroute {

/// Parameters of a single-queue system with k heterogeneous servers:
/// Poisson arrivals at `arrival_rate`, exponential service at per-server
/// `service_rates` (sorted fastest first), and a central queue holding at
/// most `buffer_capacity` waiting jobs.
///
/// Constructed instances always satisfy the model invariants: positive
/// rates, non-increasing rate order, stability (arrival < total service),
/// capacity >= 1.
struct SystemConfig {
  double arrival_rate;
  std::vector<double> service_rates;
  int buffer_capacity;

  SystemConfig(double arrival, std::vector<double> rates, int capacity)
      : arrival_rate(arrival),
        service_rates(std::move(rates)),
        buffer_capacity(capacity) {
    validate();
  }

  /// Builds a config from the load rho = arrival / sum(service rates).
  static SystemConfig with_load(double load, std::vector<double> rates, int capacity) {
    double total = std::accumulate(rates.begin(), rates.end(), 0.0);
    return SystemConfig(load * total, std::move(rates), capacity);
  }

  int server_count() const { return static_cast<int>(service_rates.size()); }

  double total_service_rate() const {
    return std::accumulate(service_rates.begin(), service_rates.end(), 0.0);
  }

  /// Total event rate, arrivals plus all (possibly fictitious) departures.
  double total_rate() const { return arrival_rate + total_service_rate(); }

  double load() const { return arrival_rate / total_service_rate(); }

  /// Rate of server `i` (1-based, fastest first).
  double rate_of(int server) const { return service_rates.at(server - 1); }

private:
  void validate() const {
    if (service_rates.empty()) throw std::invalid_argument("service_rates must be nonempty");
    if (!(arrival_rate > 0)) throw std::invalid_argument("arrival_rate must be positive");
    for (std::size_t i = 0; i < service_rates.size(); ++i) {
      if (!(service_rates[i] > 0)) throw std::invalid_argument("service rates must be positive");
      if (i > 0 && service_rates[i] > service_rates[i - 1])
        throw std::invalid_argument("service_rates must be sorted non-increasing");
    }
    if (buffer_capacity < 1) throw std::invalid_argument("buffer_capacity must be >= 1");
    if (!(arrival_rate < total_service_rate()))
      throw std::invalid_argument("unstable system: arrival_rate must be < total service rate");
  }
};

inline void to_json(nlohmann::json& j, const SystemConfig& c) {
  j = nlohmann::json{{"arrival_rate", c.arrival_rate},
                     {"service_rates", c.service_rates},
                     {"buffer_capacity", c.buffer_capacity}};
}

/// Accepts either {"arrival_rate": ...} or {"load": ...} plus service_rates
/// and buffer_capacity.
inline SystemConfig system_config_from_json(const nlohmann::json& j) {
  auto rates = j.at("service_rates").get<std::vector<double>>();
  int cap = j.at("buffer_capacity").get<int>();
  bool has_lambda = j.contains("arrival_rate");
  bool has_load = j.contains("load");
  if (has_lambda == has_load)
    throw std::invalid_argument("config needs exactly one of arrival_rate or load");
  if (has_lambda) return SystemConfig(j.at("arrival_rate").get<double>(), std::move(rates), cap);
  return SystemConfig::with_load(j.at("load").get<double>(), std::move(rates), cap);
}

}  // namespace hetroute
