#include "mpolice/experiment.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "mpolice/simulator.hpp"

namespace mpolice {

namespace fs = std::filesystem;

RunResult run_experiment(const Scenario& scenario) {
  RunResult r;
  r.log = run_simulation(scenario);
  r.summary = summarize(r.log);
  return r;
}

namespace {

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  body(out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Writes into a temporary sibling and renames it over `dir`.
void atomic_dir(const fs::path& dir, const std::function<void(const fs::path&)>& fill) {
  const fs::path target = fs::absolute(dir).lexically_normal();
  const fs::path parent = target.parent_path();
  fs::create_directories(parent);
  const fs::path tmp = parent / fmt::format(".{}.tmp-{}", target.filename().string(),
                                            std::hash<std::thread::id>{}(std::this_thread::get_id()));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    fill(tmp);
    if (fs::exists(target)) fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

}  // namespace

void write_outputs(const RunResult& run, const fs::path& dir) {
  atomic_dir(dir, [&](const fs::path& tmp) {
    write_file(tmp / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(run.log, o); });
    write_file(tmp / "summary.csv", [&](std::ostream& o) { write_summary_csv(run.summary, o); });
    write_file(tmp / "run.meta", [&](std::ostream& o) { write_run_meta(run.log, run.summary, o); });
    write_file(tmp / "slr.csv", [&](std::ostream& o) { write_slr_csv(run.log, o); });
    write_file(tmp / "rates.csv", [&](std::ostream& o) { write_rates_csv(run.log, o); });
    write_file(tmp / "links.csv", [&](std::ostream& o) { write_links_csv(run.log, o); });
    if (!run.log.correlations.empty() || !run.log.detections.empty()) {
      write_file(tmp / "correlations.csv",
                 [&](std::ostream& o) { write_correlations_csv(run.log, o); });
    }
  });
}

SweepAxis parse_sweep_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw std::invalid_argument("sweep must look like param=v1,v2: " + spec);
  }
  SweepAxis axis{spec.substr(0, eq), {}};
  std::stringstream ss(spec.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) {
    if (!v.empty()) axis.values.push_back(v);
  }
  if (axis.values.empty()) throw std::invalid_argument("sweep has no values: " + spec);
  return axis;
}

SweepResult run_sweep(const std::string& scenario, const std::vector<std::string>& overrides,
                      const std::vector<SweepAxis>& axes, unsigned workers) {
  struct Job {
    std::string param, value;
    Scenario sc;
    Summary summary;
  };
  std::vector<Job> jobs;
  jobs.push_back(Job{"", "", load_scenario(scenario, overrides), {}});
  for (const auto& axis : axes) {
    for (const auto& v : axis.values) {
      auto ov = overrides;
      ov.push_back(axis.param + "=" + v);
      // Validation errors surface here, before any run starts.
      jobs.push_back(Job{axis.param, v, load_scenario(scenario, ov), {}});
    }
  }

  if (workers == 0) workers = std::max(1U, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(jobs.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i].summary = summarize(run_simulation(jobs[i].sc));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  SweepResult result;
  result.baseline = jobs.front().summary;
  const double base_window = result.baseline.mean_client_window;
  const double base_fi = result.baseline.fairness_index.value_or(0.0);
  for (std::size_t i = 1; i < jobs.size(); ++i) {
    SweepRow row{jobs[i].param, jobs[i].value, jobs[i].summary, 0.0, 0.0};
    if (base_window > 0.0) row.client_window_ratio = row.summary.mean_client_window / base_window;
    if (base_fi > 0.0) row.fairness_ratio = row.summary.fairness_index.value_or(0.0) / base_fi;
    result.rows.push_back(row);
  }
  return result;
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  out << "param,value,mean_client_window,client_window_ratio,fairness_index,fairness_ratio,"
         "attacker_share\n";
  auto fi = [](const Summary& s) {
    return s.fairness_index ? fmt::format("{}", *s.fairness_index) : std::string("NA");
  };
  fmt::print(out, "default,,{},1,{},1,{}\n", result.baseline.mean_client_window,
             fi(result.baseline), result.baseline.attacker_share);
  for (const auto& r : result.rows) {
    fmt::print(out, "{},{},{},{},{},{},{}\n", r.param, r.value, r.summary.mean_client_window,
               r.client_window_ratio, fi(r.summary), r.fairness_ratio, r.summary.attacker_share);
  }
}

void write_sweep_outputs(const SweepResult& result, const fs::path& dir) {
  atomic_dir(dir, [&](const fs::path& tmp) {
    write_file(tmp / "sweep.csv", [&](std::ostream& o) { write_sweep_csv(result, o); });
  });
}

}  // namespace mpolice
