#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetroute/achq.hpp"
#include "hetroute/exact.hpp"
#include "hetroute/simulate.hpp"
#include "hetroute/state.hpp"
#include "hetroute/two_server.hpp"

namespace hetroute {

/// Deterministic "%.12g" rendering so reruns produce byte-identical files.
inline std::string csv_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

class CsvWriter {
public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open " + path);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

inline void write_value_policy_csv(const std::string& path, const SystemConfig& config,
                                   const ValueTable& values, const TabularPolicy& policy) {
  StateSpace space(config);
  CsvWriter csv(path);
  csv.row({"state_index", "queue_len", "busy_bits", "value", "greedy_action"});
  for (std::size_t i = 0; i < space.size(); ++i) {
    State s = space.state_of(i);
    csv.row({std::to_string(i), std::to_string(s.queue_len),
             busy_bits_string(s.busy_mask, space.server_count()), csv_num(values.values[i]),
             std::to_string(policy.actions[i].raw())});
  }
}

inline void write_threshold_csv(const std::string& path, const SystemConfig& config,
                                const ThresholdReport& report) {
  CsvWriter csv(path);
  csv.row({"busy_pattern", "fastest_idle", "threshold"});
  for (const auto& e : report.entries) {
    std::string threshold = e.threshold_form
                                ? (std::isinf(e.threshold) ? "inf" : csv_num(e.threshold))
                                : "non-threshold";
    csv.row({busy_bits_string(e.busy_mask, config.server_count()),
             std::to_string(e.fastest_idle), threshold});
  }
}

inline void write_train_record_csv(const std::string& path, const TrainRecord& record) {
  CsvWriter csv(path);
  std::vector<std::string> header{"step", "avg_cost_running", "eta"};
  std::size_t k_minus_1 = record.rows.empty() ? 0 : record.rows.front().thresholds.size();
  for (std::size_t i = 0; i < k_minus_1; ++i) header.push_back("theta_" + std::to_string(i + 2));
  header.push_back("omega_norm");
  csv.row(header);
  for (const auto& r : record.rows) {
    std::vector<std::string> cells{std::to_string(r.step), csv_num(r.avg_cost_running),
                                   csv_num(r.eta)};
    for (double t : r.thresholds) cells.push_back(csv_num(t));
    cells.push_back(csv_num(r.omega_norm));
    csv.row(cells);
  }
}

inline void write_comparison_csv(const std::string& path, const std::vector<ComparisonRow>& rows) {
  CsvWriter csv(path);
  csv.row({"policy_name", "seed_count", "response_time_mean", "response_time_se",
           "improvement_vs_reference_pct"});
  for (const auto& r : rows)
    csv.row({r.policy_name, std::to_string(r.seed_count), csv_num(r.response_time_mean),
             csv_num(r.response_time_se), csv_num(r.improvement_vs_reference_pct)});
}

inline void write_stats_csv(const std::string& path, const std::vector<TrajectoryStats>& stats) {
  CsvWriter csv(path);
  csv.row({"seed", "epochs", "avg_jobs", "response_time", "ci_halfwidth"});
  for (const auto& s : stats)
    csv.row({std::to_string(s.seed), std::to_string(s.epochs), csv_num(s.avg_jobs),
             csv_num(s.response_time), csv_num(s.ci_halfwidth)});
}

inline void write_verifier_csv(const std::string& path, const std::vector<VerifierRow>& rows) {
  CsvWriter csv(path);
  csv.row({"gamma", "sigma", "theta_base", "l_star", "single_sign_change", "unimodal", "argmin"});
  for (const auto& r : rows)
    csv.row({csv_num(r.gamma), csv_num(r.sigma), csv_num(r.theta_base), std::to_string(r.l_star),
             r.single_sign_change ? "1" : "0", r.unimodal ? "1" : "0", csv_num(r.argmin)});
}

}  // namespace hetroute
