#pragma once

// Capabilities stamped by an mbox on every accepted packet, and their
// 40-byte wire frame.
//
// Frame layout (big-endian fields):
//   byte  0      version (0x01)
//   byte  1      type tag (0x01 distinct, 0x02 common)
//   bytes 2..5   ip_mp
//   bytes 6..9   ts (ms)
//   bytes 10..11 p_id        (zero for common)
//   bytes 12..19 f           (zero for common)
//   bytes 20..23 t_a (ms)    (zero for common)
//   bytes 24..39 MAC tag

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <variant>

#include "mpolice/cbc_mac.hpp"
#include "mpolice/types.hpp"

namespace mpolice {

inline constexpr std::size_t kCapabilityFrameSize = 40;
inline constexpr std::uint8_t kCapabilityVersion = 0x01;
inline constexpr std::uint8_t kDistinctTag = 0x01;
inline constexpr std::uint8_t kCommonTag = 0x02;

using CapabilityFrame = std::array<std::uint8_t, kCapabilityFrameSize>;

/// Secret shared by every mbox and the victim's capability handler.
class MacKey {
 public:
  /// Builds an AES-128 CBC-MAC key. Throws std::invalid_argument on an
  /// all-zero key.
  explicit MacKey(std::span<const std::uint8_t, 16> key_bytes);

  /// Swaps in a different MAC primitive behind the same 16-byte tag contract.
  explicit MacKey(std::shared_ptr<const TagFunction> primitive);

  MacTag tag(std::span<const std::uint8_t> message) const {
    return primitive_->compute(message);
  }

 private:
  std::shared_ptr<const TagFunction> primitive_;
};

struct DistinctCapability {
  std::uint32_t ip_mp = 0;
  std::uint32_t ts = 0;
  std::uint16_t p_id = 0;
  std::uint64_t f = 0;
  std::uint32_t t_a = 0;
  MacTag mac{};

  friend bool operator==(const DistinctCapability&,
                         const DistinctCapability&) = default;
};

struct CommonCapability {
  std::uint32_t ip_mp = 0;
  std::uint32_t ts = 0;
  MacTag mac{};

  friend bool operator==(const CommonCapability&,
                         const CommonCapability&) = default;
};

using Capability = std::variant<DistinctCapability, CommonCapability>;

DistinctCapability generate_distinct(const MacKey& key, std::uint32_t ip_mp,
                                     std::uint32_t ts, std::uint16_t p_id,
                                     std::uint64_t f, std::uint32_t t_a);

CommonCapability generate_common(const MacKey& key, std::uint32_t ip_mp,
                                 std::uint32_t ts);

CapabilityFrame encode(const Capability& cap);

enum class DecodeError {
  wrong_length,
  bad_version,
  bad_tag,
  bad_padding,
  mac_mismatch,
};

std::string_view to_string(DecodeError e);

using DecodeResult = std::variant<Capability, DecodeError>;

/// Parses a frame and checks its MAC.
DecodeResult decode(std::span<const std::uint8_t> frame, const MacKey& key);

enum class Verdict { valid, stale, forged, malformed };

std::string_view to_string(Verdict v);

/// Full admission check: structure, MAC, then freshness against `now`.
Verdict verify(const MacKey& key, std::span<const std::uint8_t> frame,
               SimTime now, std::chrono::milliseconds replay_window);

inline std::uint32_t ip_mp_of(const Capability& cap) {
  return std::visit([](const auto& c) { return c.ip_mp; }, cap);
}

inline std::uint32_t ts_of(const Capability& cap) {
  return std::visit([](const auto& c) { return c.ts; }, cap);
}

}  // namespace mpolice
