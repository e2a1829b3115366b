#pragma once

#include <chrono>
#include <cstdint>
#include <functional>

namespace mpolice {

/// Simulated time. All event timestamps are integer nanoseconds.
using SimTime = std::chrono::nanoseconds;

constexpr SimTime from_seconds(double s) {
  return SimTime{static_cast<std::int64_t>(s * 1e9)};
}

constexpr double to_seconds(SimTime t) {
  return static_cast<double>(t.count()) * 1e-9;
}

/// Millisecond timestamp carried inside capabilities (wraps after ~49 days).
constexpr std::uint32_t to_wire_ms(SimTime t) {
  return static_cast<std::uint32_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(t).count());
}

/// 64-bit sender identifier `f`, derived from the source address.
struct SenderId {
  std::uint64_t value = 0;
  friend constexpr bool operator==(SenderId, SenderId) = default;
  friend constexpr auto operator<=>(SenderId, SenderId) = default;
};

/// 32-bit mbox address (IP_MP).
struct MboxAddr {
  std::uint32_t value = 0;
  friend constexpr bool operator==(MboxAddr, MboxAddr) = default;
  friend constexpr auto operator<=>(MboxAddr, MboxAddr) = default;
};

/// FNV-1a over the 4 bytes of an IPv4 source address (network order).
constexpr SenderId sender_id_from_ipv4(std::uint32_t addr) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int shift = 24; shift >= 0; shift -= 8) {
    h ^= (addr >> shift) & 0xffU;
    h *= 0x100000001b3ULL;
  }
  return SenderId{h};
}

}  // namespace mpolice

template <>
struct std::hash<mpolice::SenderId> {
  std::size_t operator()(mpolice::SenderId s) const noexcept {
    // FNV output is already well mixed.
    return static_cast<std::size_t>(s.value);
  }
};
