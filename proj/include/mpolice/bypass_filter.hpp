#pragma once

// Port-secret filtering of traffic that bypasses the mboxes: mboxes wrap
// each packet in an outer IP/UDP header whose port pair carries a 32-bit
// secret, and the filtering point only admits frames with the current pair.

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "mpolice/cbc_mac.hpp"
#include "mpolice/types.hpp"

namespace mpolice {

inline constexpr std::size_t kOuterIpHeader = 20;
inline constexpr std::size_t kOuterUdpHeader = 8;
inline constexpr std::size_t kEncapOverhead = kOuterIpHeader + kOuterUdpHeader;
inline constexpr std::size_t kDefaultMtu = 1500;

struct PortSecret {
  std::uint32_t value = 0;
  std::uint32_t epoch = 0;
  friend bool operator==(const PortSecret&, const PortSecret&) = default;
};

struct PortPair {
  std::uint16_t src = 0;
  std::uint16_t dst = 0;
  friend bool operator==(const PortPair&, const PortPair&) = default;
};

/// Source port carries the high 16 bits, destination port the low 16 bits.
constexpr PortPair ports_for(std::uint32_t secret) {
  return PortPair{static_cast<std::uint16_t>(secret >> 16),
                  static_cast<std::uint16_t>(secret & 0xffffU)};
}

constexpr std::uint32_t secret_of(PortPair p) {
  return (std::uint32_t{p.src} << 16) | p.dst;
}

/// Keyed AES-based generator; never returns the same value twice in a run.
class SecretGenerator {
 public:
  explicit SecretGenerator(std::uint64_t seed);
  PortSecret next();

 private:
  AesCbcMac prf_;
  std::uint64_t counter_ = 0;
  std::uint32_t epoch_ = 0;
  std::unordered_set<std::uint32_t> issued_;
};

/// Wraps `inner` in a 20-byte IPv4 header (proto UDP, checksum 0) and an
/// 8-byte UDP header whose ports carry the secret. Returns nullopt if the
/// result would exceed the MTU.
std::optional<std::vector<std::uint8_t>> encapsulate(std::span<const std::uint8_t> inner,
                                                     PortSecret secret, std::uint32_t src_ip,
                                                     std::uint32_t dst_ip,
                                                     std::size_t mtu = kDefaultMtu);

/// Returns the inner frame, or nullopt if the outer headers are malformed.
std::optional<std::span<const std::uint8_t>> decapsulate(std::span<const std::uint8_t> frame);

/// Reads the outer port pair of an encapsulated frame.
std::optional<PortPair> outer_ports(std::span<const std::uint8_t> frame);

enum class AclVerdict { pass, drop };

AclVerdict acl_check(PortPair ports, PortSecret secret);
AclVerdict acl_check(std::span<const std::uint8_t> frame, PortSecret secret);

struct FilterConfig {
  SimTime control_delay = std::chrono::milliseconds{5};
  SimTime grace = std::chrono::milliseconds{100};  // one RTT
  SimTime rotation_period = std::chrono::seconds{300};
};

/// The filtering point's ACL plus secret rotation.
class PortFilter {
 public:
  PortFilter(std::uint64_t seed, FilterConfig config, SimTime now = SimTime{0});

  /// Admits frames carrying the current secret, and the previous one during
  /// the grace window after a rotation.
  AclVerdict check(PortPair ports, SimTime now) const;

  /// Rotates when `alarm` is set or the scheduled rotation is due. The new
  /// secret takes effect after the control delay. After an alarm rotation,
  /// further alarms are ignored until the grace window has passed. Returns
  /// the new secret.
  std::optional<PortSecret> rekey(bool alarm, SimTime now);

  /// Secret mboxes should stamp at `now`.
  PortSecret active(SimTime now) const;
  std::uint32_t epoch(SimTime now) const { return active(now).epoch; }
  bool rotation_pending(SimTime now) const { return next_ && now < activate_at_; }

 private:
  SecretGenerator generator_;
  FilterConfig config_;
  PortSecret current_;
  std::optional<PortSecret> previous_;
  SimTime grace_until_{};
  std::optional<PortSecret> next_;
  SimTime activate_at_{};
  SimTime alarm_holdoff_until_{};
  SimTime last_rotation_{};

  void settle(SimTime now);
};

}  // namespace mpolice
