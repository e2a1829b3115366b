#pragma once

// Victim-side capability handling: trailer stripping, verification,
// feedback batching back to the issuing mbox, and the bypass alarm.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "mpolice/capability.hpp"
#include "mpolice/types.hpp"

namespace mpolice {

inline constexpr std::size_t kMaxCapabilitiesPerAck = 15;

struct ChmConfig {
  std::chrono::milliseconds replay_window{1000};
  SimTime flush_deadline = std::chrono::milliseconds{200};
  SimTime alarm_window = std::chrono::milliseconds{100};
  std::size_t alarm_threshold = 50;  // invalid arrivals per window
};

/// 1-byte header (count in the low nibble) followed by count capabilities,
/// addressed to the mbox that issued them.
struct FeedbackFrame {
  MboxAddr dest;
  std::vector<std::uint8_t> bytes;

  std::size_t count() const { return bytes.empty() ? 0 : (bytes[0] & 0x0fU); }
};

/// Builds a feedback frame; throws std::invalid_argument for more than 15.
FeedbackFrame make_feedback_frame(MboxAddr dest, std::span<const CapabilityFrame> caps);

/// Splits a feedback frame into its capability frames. Returns nullopt when
/// the length does not match the count field.
std::optional<std::vector<std::span<const std::uint8_t>>> parse_feedback_frame(
    std::span<const std::uint8_t> bytes);

enum class IngestVerdict { distinct_queued, common_accepted, invalid };

struct IngestResult {
  IngestVerdict verdict = IngestVerdict::invalid;
  std::span<const std::uint8_t> payload;  // empty unless accepted
  std::optional<Capability> capability;
};

struct ChmCounters {
  std::uint64_t distinct = 0;
  std::uint64_t common = 0;
  std::uint64_t invalid = 0;  // missing, malformed, forged or stale trailers
  std::uint64_t duplicates = 0;
  std::uint64_t returned = 0;
};

/// Counts events inside a trailing time window.
class SlidingWindowCounter {
 public:
  explicit SlidingWindowCounter(SimTime window) : window_(window) {}
  void record(SimTime now);
  std::size_t count(SimTime now);

 private:
  SimTime window_;
  std::deque<SimTime> events_;
};

/// True when the invalid arrivals inside the window exceed the threshold.
bool bypass_alarm(std::size_t invalid_in_window, std::size_t threshold);

class CapabilityHandler {
 public:
  CapabilityHandler(MacKey key, ChmConfig config = {});

  /// `packet` is the inner frame: payload followed by a 40-byte trailer.
  IngestResult ingest(std::span<const std::uint8_t> packet, SimTime now);

  /// Same checks for a packet whose trailer is carried out of band.
  IngestResult ingest_trailer(const std::optional<CapabilityFrame>& trailer, SimTime now);

  /// Packs every pending capability into frames of at most `ack_capacity`.
  std::vector<FeedbackFrame> flush_feedback(std::size_t ack_capacity, SimTime now);

  /// Standalone frames for mboxes that have a full frame pending or whose
  /// oldest capability has waited `flush_deadline`.
  std::vector<FeedbackFrame> flush_due(std::size_t ack_capacity, SimTime now);

  /// Up to `ack_capacity` pending capabilities for one mbox, to ride on an ACK.
  std::optional<FeedbackFrame> piggyback(MboxAddr mbox, std::size_t ack_capacity);

  bool bypass_alarm(SimTime now);
  std::size_t pending() const;
  std::size_t pending_for(MboxAddr mbox) const;
  const ChmCounters& counters() const { return counters_; }

  /// Forgets the alarm history (after the filter has been rekeyed).
  void clear_alarm() { invalid_window_ = SlidingWindowCounter(config_.alarm_window); }

 private:
  struct Pending {
    CapabilityFrame frame;
    SimTime queued_at;
  };
  struct Key {
    std::uint64_t f;
    std::uint32_t t_a;
    std::uint16_t p_id;
    std::uint32_t ip_mp;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return static_cast<std::size_t>(k.f ^ (std::uint64_t{k.t_a} << 20) ^
                                      (std::uint64_t{k.ip_mp} << 40) ^ k.p_id);
    }
  };

  FeedbackFrame take(MboxAddr mbox, std::size_t n);
  void expire_seen(SimTime now);

  MacKey key_;
  ChmConfig config_;
  std::map<MboxAddr, std::deque<Pending>> buffers_;
  std::unordered_set<Key, KeyHash> seen_;
  std::deque<std::pair<SimTime, Key>> seen_order_;
  SlidingWindowCounter invalid_window_;
  ChmCounters counters_;
};

}  // namespace mpolice
