#pragma once

// Scenario runs and one-at-a-time parameter sweeps, with their file outputs.

#include <filesystem>
#include <string>
#include <vector>

#include "mpolice/metrics.hpp"
#include "mpolice/scenario.hpp"

namespace mpolice {

struct RunResult {
  MetricsLog log;
  Summary summary;
};

RunResult run_experiment(const Scenario& scenario);

/// Writes metrics.csv, summary.csv, run.meta and the auxiliary tables into
/// `dir`. Files are first written to a sibling temporary directory which is
/// then renamed into place; nothing is left behind on failure.
void write_outputs(const RunResult& run, const std::filesystem::path& dir);

struct SweepAxis {
  std::string param;
  std::vector<std::string> values;
};

/// Parses "param=v1,v2,..." specifications.
SweepAxis parse_sweep_axis(const std::string& spec);

struct SweepRow {
  std::string param;
  std::string value;
  Summary summary;
  double client_window_ratio = 0.0;  // mean client window / baseline
  double fairness_ratio = 0.0;       // fairness index / baseline
};

struct SweepResult {
  Summary baseline;
  std::vector<SweepRow> rows;
};

/// Runs the baseline and every (param, value) variant, varying one
/// parameter at a time. Runs are independent and spread over `workers`
/// threads (0: one per hardware thread).
SweepResult run_sweep(const std::string& scenario, const std::vector<std::string>& overrides,
                      const std::vector<SweepAxis>& axes, unsigned workers = 0);

void write_sweep_csv(const SweepResult& result, std::ostream& out);
void write_sweep_outputs(const SweepResult& result, const std::filesystem::path& dir);

}  // namespace mpolice
