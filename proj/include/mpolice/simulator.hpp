#pragma once

// Deterministic discrete-event simulation of senders, mboxes, the
// filtering point, the bottleneck router and the victim.

#include <cstdint>
#include <memory>
#include <random>

#include "mpolice/bypass_filter.hpp"
#include "mpolice/chm.hpp"
#include "mpolice/metrics.hpp"
#include "mpolice/policer.hpp"
#include "mpolice/scenario.hpp"

namespace mpolice {

inline constexpr std::size_t kMss = 1360;
inline constexpr std::size_t kTcpIpHeader = 40;
inline constexpr std::size_t kInnerPacket = kMss + kTcpIpHeader;  // 1400
inline constexpr std::size_t kCapabilityBytes = kCapabilityFrameSize;
inline constexpr std::size_t kAckPacket = kTcpIpHeader;

/// Seeded generator with a platform-independent uniform draw.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

class Simulator {
 public:
  /// The scenario must already be validated.
  explicit Simulator(const Scenario& scenario);
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  /// Processes every event strictly before `until`.
  void run_until(SimTime until);
  void run();
  SimTime now() const;
  std::uint64_t events() const;

  /// Assembles the run log. Call once, after run().
  MetricsLog finish();

  std::size_t mbox_count() const;
  const Policer& policer(std::size_t mbox) const;
  const CapabilityHandler& chm() const;
  const PortFilter* filter() const;

  /// Link counters with the in-flight column taken from a scan of live packets.
  std::vector<LinkRecord> link_counters() const;

  /// Largest frame an mbox put on the wire, in bytes.
  std::size_t max_mbox_frame() const;
  /// Best-effort departures observed while a privileged packet was queued.
  std::uint64_t priority_violations() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Runs a validated scenario to completion.
MetricsLog run_simulation(const Scenario& scenario);

}  // namespace mpolice
