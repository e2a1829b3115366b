// Command-line runner for mpolice scenarios.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mpolice/experiment.hpp"
#include "mpolice/scenario.hpp"

namespace {

struct Options {
  std::string scenario;
  std::string out;
  std::vector<std::string> params;
  std::vector<std::string> sweeps;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double duration = 0.0;
  unsigned workers = 0;
};

std::vector<std::string> overrides_of(const Options& o) {
  auto ov = o.params;
  if (o.seed_set) ov.push_back(fmt::format("seed={}", o.seed));
  if (o.duration > 0.0) ov.push_back(fmt::format("duration_s={}", o.duration));
  return ov;
}

void print_summary(const mpolice::Summary& s) {
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt::format("{:.4f}", *v) : std::string("NA");
  };
  fmt::print("fairness_index        {}\n", opt(s.fairness_index));
  fmt::print("mean_client_window    {:.4f}\n", s.mean_client_window);
  fmt::print("mean_attacker_window  {:.4f}\n", s.mean_attacker_window);
  fmt::print("client/attacker       {}\n", opt(s.client_attacker_ratio));
  fmt::print("attacker_share        {:.4f}\n", s.attacker_share);
  fmt::print("client_rate_mbps      {:.3f}\n", s.client_rate_mbps);
  fmt::print("goodput_mbps          {:.3f}\n", s.goodput_mbps);
}

int do_sweep(const Options& o) {
  std::vector<mpolice::SweepAxis> axes;
  for (const auto& s : o.sweeps) axes.push_back(mpolice::parse_sweep_axis(s));
  const auto result = mpolice::run_sweep(o.scenario, overrides_of(o), axes, o.workers);
  mpolice::write_sweep_csv(result, std::cout);
  if (!o.out.empty()) mpolice::write_sweep_outputs(result, o.out);
  return 0;
}

int do_run(const Options& o) {
  if (!o.sweeps.empty()) return do_sweep(o);
  const auto sc = mpolice::load_scenario(o.scenario, overrides_of(o));
  const auto run = mpolice::run_experiment(sc);
  fmt::print("scenario {} seed {} ({} events)\n", sc.name, sc.seed, run.log.meta.events);
  print_summary(run.summary);
  if (!o.out.empty()) {
    mpolice::write_outputs(run, o.out);
    fmt::print("wrote {}\n", o.out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MiddlePolice traffic-policing simulator"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool outputs) {
    sub->add_option("-s,--scenario", o.scenario, "Scenario file or bundled scenario name")
        ->required();
    sub->add_option("--param", o.params, "Override a parameter, key=value (repeatable)");
    if (outputs) {
      sub->add_option("--seed", o.seed, "Random seed")->each([&](const std::string&) {
        o.seed_set = true;
      });
      sub->add_option("--duration", o.duration, "Simulated seconds");
      sub->add_option("-o,--out", o.out, "Output directory");
      sub->add_option("--workers", o.workers, "Parallel runs in a sweep (0: all cores)");
    }
  };

  auto* run = app.add_subcommand("run", "Run one scenario (or a sweep with --sweep)");
  add_common(run, true);
  run->add_option("--sweep", o.sweeps, "Vary one parameter: param=v1,v2,... (repeatable)");

  auto* sweep = app.add_subcommand("sweep", "One-at-a-time parameter sweep");
  add_common(sweep, true);
  sweep->add_option("--sweep", o.sweeps, "param=v1,v2,... (repeatable)")->required();

  auto* validate = app.add_subcommand("validate", "Check a scenario file");
  add_common(validate, false);

  app.add_subcommand("list-scenarios", "List bundled scenarios");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return do_run(o);
    if (sweep->parsed()) return do_sweep(o);
    if (validate->parsed()) {
      const auto sc = mpolice::load_scenario(o.scenario, o.params);
      fmt::print("{}: ok ({} senders, {} s, policy {})\n", sc.name, sc.sender_count(),
                 sc.duration_s, sc.policy.name);
      return 0;
    }
    for (const auto& name : mpolice::bundled_scenarios()) {
      const auto sc = mpolice::load_scenario(name);
      fmt::print("{:<28} {}\n", name, sc.description);
    }
    return 0;
  } catch (const mpolice::ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
