#pragma once

// Declarative description of one simulation run, loaded from YAML.
// Unknown keys are rejected; errors carry the offending field path.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpolice/policer.hpp"

namespace mpolice {

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class SenderKind { legit_tcp, reactive_tcp, flat_udp, shrew, bypass_udp };

std::string to_string(SenderKind k);

struct SenderGroup {
  std::string label;
  SenderKind kind = SenderKind::legit_tcp;
  std::size_t count = 1;
  std::string as;              // AS label shared by the group
  bool as_per_sender = false;  // every sender gets its own AS "<label>#<i>"
  std::size_t flows = 1;       // TCP connections per sender
  double rate_mbps = 0.0;      // UDP sending rate per sender
  double on_s = 1.0;           // shrew on-period
  double off_s = 1.0;          // shrew off-period
  bool random_phase = false;   // shrew: random offset into the on/off cycle
  double start_s = 0.0;
  double start_jitter_s = 0.0;  // each sender starts uniformly in [start, start + jitter)
  double stop_s = -1.0;        // negative: until the end
  std::optional<std::size_t> mbox;  // pin to an mbox instead of the assignment rule
  double compromise_at_s = -1.0;    // bypass: secret stolen at this time
  bool direct = false;  // unpoliced cross traffic straight to the bottleneck

  bool is_tcp() const {
    return kind == SenderKind::legit_tcp || kind == SenderKind::reactive_tcp;
  }
  bool is_client() const { return kind == SenderKind::legit_tcp; }
};

struct TopologySpec {
  double bottleneck_mbps = 100.0;
  std::optional<std::size_t> buffer_packets;  // default: bandwidth-delay product
  double access_mbps = 1000.0;
  double access_delay_ms = 10.0;   // sender -> mbox
  double mbox_delay_ms = 15.0;     // mbox -> bottleneck router
  double victim_delay_ms = 25.0;   // router -> victim
  double reverse_delay_ms = 50.0;  // victim -> sender, via the mbox
  std::size_t mbox_count = 1;
  std::optional<double> mbox_egress_mbps;  // default: 4x the bottleneck
  std::size_t mbox_buffer_packets = 10000;
  std::string assignment = "round_robin";  // round_robin | random
  std::string bottlenecks = "shared";      // shared | per_mbox

  double egress_mbps() const { return mbox_egress_mbps.value_or(4.0 * bottleneck_mbps); }
  double rtt_ms() const {
    return access_delay_ms + mbox_delay_ms + victim_delay_ms + reverse_delay_ms;
  }
};

struct PolicySpec {
  std::string name = "natural";
  std::vector<std::string> premium_ases;
  double premium_fraction = 0.0;  // of bottleneck capacity, per premium sender
};

struct FilterSpec {
  bool enabled = false;
  double rotation_s = 300.0;
  double control_delay_ms = 5.0;
  double alarm_window_ms = 100.0;
  std::size_t alarm_threshold = 50;
};

struct CoordinationSpec {
  std::string mode = "none";  // none | forced | detect
  double interval_s = 1.0;
  double threshold = 0.5;
  std::size_t rounds = 3;
};

struct Scenario {
  std::string name;
  std::string description;
  double duration_s = 60.0;
  std::uint64_t seed = 1;
  TopologySpec topology;
  PolicySpec policy;
  PolicerParams policer;
  FilterSpec filter;
  CoordinationSpec coordination;
  std::vector<SenderGroup> senders;

  std::size_t sender_count() const;
  /// Throws ScenarioError naming the first invalid field.
  void validate() const;
};

/// Parses YAML text. `overrides` are "key=value" strings (see
/// canonical_param_path) applied before validation.
Scenario parse_scenario(const std::string& yaml_text,
                        const std::vector<std::string>& overrides = {});

Scenario load_scenario(const std::string& path_or_name,
                       const std::vector<std::string>& overrides = {});

/// Resolves a bundled scenario name to its file, or returns the path as is.
std::string resolve_scenario_path(const std::string& path_or_name);

/// Names of the bundled scenarios, sorted.
std::vector<std::string> bundled_scenarios();

/// Short parameter names accepted by --param / --sweep, mapped to YAML paths
/// (e.g. d_p -> policer.d_p_s). Dotted YAML paths are accepted as well;
/// "senders.<label>.<field>" addresses a sender group by label.
std::string canonical_param_path(const std::string& key);

/// Stable 64-bit hash of the canonical scenario (after overrides).
std::uint64_t scenario_hash(const Scenario& s);

}  // namespace mpolice
