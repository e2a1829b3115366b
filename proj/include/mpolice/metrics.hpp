#pragma once

// Run log and derived figures: per-sender-period window records, SLR
// cycles, delivered-rate bins, link counters, and the summary statistics
// computed over the second half of a run.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpolice/scenario.hpp"

namespace mpolice {

inline constexpr const char* kMetricsHeader = "# mpolice-metrics v1";

/// max(W_R, delivered packets).
inline std::uint64_t window_size(std::uint64_t w_r, std::uint64_t delivered) {
  return w_r > delivered ? w_r : delivered;
}

/// Packets of 1500 bytes a link of `capacity_bps` carries in one period.
inline double period_capacity_packets(double capacity_bps, double d_p_s) {
  return capacity_bps * d_p_s / (1500.0 * 8.0);
}

/// (sum x)^2 / (n sum x^2); nullopt for empty or all-zero input.
std::optional<double> jains_index(std::span<const double> values);

struct SenderInfo {
  std::uint32_t index = 0;
  std::string group;
  SenderKind kind = SenderKind::legit_tcp;
  std::string as;
  std::uint32_t mbox = 0;
  bool direct = false;  // reaches the bottleneck without an mbox

  bool is_client() const { return kind == SenderKind::legit_tcp; }
};

struct PeriodRecord {
  std::uint32_t sender = 0;
  std::uint32_t period = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::uint32_t w_r = 0;
  std::uint32_t n_r = 0;
  std::uint32_t n_d = 0;
  std::uint32_t p_id = 0;
  std::uint32_t v0 = 0;
  double recent_loss = 0.0;
  double l_r = 0.0;
  double n_h = 0.0;
  std::uint32_t next_w_r = 0;
  std::uint64_t delivered = 0;
  std::uint64_t window = 0;
  double normalized_window = 0.0;

  friend bool operator==(const PeriodRecord&, const PeriodRecord&) = default;
};

struct SlrRecord {
  std::uint32_t mbox = 0;
  std::uint64_t cycle = 0;
  double time_s = 0.0;
  double slr = 0.0;
};

struct RateRecord {
  std::uint32_t sender = 0;
  std::uint32_t second = 0;
  std::uint64_t packets = 0;
  std::uint64_t bytes = 0;
};

struct LinkRecord {
  std::string name;
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t in_flight = 0;
};

struct CorrelationRecord {
  std::uint32_t mbox_a = 0;
  std::uint32_t mbox_b = 0;
  std::uint32_t window = 0;
  double coefficient = 0.0;
};

struct DetectionRecord {
  std::uint32_t mbox_a = 0;
  std::uint32_t mbox_b = 0;
  bool shared = false;
  double detected_at_s = -1.0;  // first time the rule fired, -1 if never
};

struct RunMeta {
  std::string scenario;
  std::uint64_t scenario_hash = 0;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  double capacity_bps = 0.0;
  double d_p_s = 0.0;
  std::string policy;
  std::uint64_t events = 0;
  std::vector<std::pair<std::string, std::string>> params;
};

struct MetricsLog {
  RunMeta meta;
  std::vector<SenderInfo> senders;
  std::vector<PeriodRecord> periods;  // ordered by (sender, period)
  std::vector<SlrRecord> slr;
  std::vector<RateRecord> rates;      // ordered by (sender, second)
  std::vector<LinkRecord> links;
  std::vector<CorrelationRecord> correlations;
  std::vector<DetectionRecord> detections;
  std::map<std::string, std::uint64_t> counters;

  /// Window sizes of one sender, in period order.
  std::vector<std::uint64_t> windows_of(std::uint32_t sender) const;
  /// Delivered bytes of one sender per one-second bin over [from_s, to_s).
  std::uint64_t delivered_bytes(std::uint32_t sender, double from_s, double to_s) const;
};

struct Summary {
  double warmup_s = 0.0;  // statistics use [warmup_s, duration)
  std::optional<double> fairness_index;
  double mean_client_window = 0.0;    // normalized
  double mean_attacker_window = 0.0;  // normalized
  std::optional<double> client_attacker_ratio;
  double attacker_share = 0.0;  // of bytes delivered to the victim
  double client_rate_mbps = 0.0;
  double fair_share_mbps = 0.0;  // delivered total / policed senders
  double goodput_mbps = 0.0;
  std::size_t clients = 0;
  std::size_t attackers = 0;
};

/// Statistics over the final half of the run.
Summary summarize(const MetricsLog& log);

/// Per-sender delivered rate (Mbps) over [from_s, to_s), policed senders only.
std::vector<double> delivered_rates(const MetricsLog& log, double from_s, double to_s);

void write_metrics_csv(const MetricsLog& log, std::ostream& out);
std::vector<PeriodRecord> read_metrics_csv(std::istream& in);
void write_summary_csv(const Summary& s, std::ostream& out);
void write_run_meta(const MetricsLog& log, const Summary& s, std::ostream& out);
void write_slr_csv(const MetricsLog& log, std::ostream& out);
void write_rates_csv(const MetricsLog& log, std::ostream& out);
void write_links_csv(const MetricsLog& log, std::ostream& out);
void write_correlations_csv(const MetricsLog& log, std::ostream& out);

}  // namespace mpolice
