#pragma once

#include <bitset>
#include <cstdint>

#include "mpolice/types.hpp"

namespace mpolice {

inline constexpr std::size_t kVerificationBits = 128;

/// One iTable row: per-sender policing state for the current detection period.
struct FlowEntry {
  SenderId f;
  SimTime period_start{};                // T_A
  std::uint16_t p_id = 0;                // distinct capabilities issued
  std::uint32_t n_r = 0;                 // packets received this period
  std::uint32_t n_d = 0;                 // best-effort packets dropped by the mbox
  std::uint32_t w_r = 0;                 // privileged packets allowed per period
  std::bitset<kVerificationBits> w_v;    // bit i-1 set once capability i returns
  double l_r = 0.0;                      // long-term loss rate
  double n_h = 0.0;                      // delivered estimate from the previous period

  // Extra bookkeeping used by the simulator and policies.
  std::uint32_t as_id = 0;
  std::uint32_t period_index = 0;
  SimTime last_seen{};
};

/// Zero bits among the first p_id bits of W_V.
inline std::uint32_t missing_feedback(const FlowEntry& e) {
  std::uint32_t zeros = 0;
  for (std::size_t i = 0; i < e.p_id && i < kVerificationBits; ++i) {
    if (!e.w_v.test(i)) ++zeros;
  }
  return zeros;
}

/// Estimated downstream losses: (N_R - N_D) * V_0 / P_id, or 0 when no
/// distinct capability was issued.
inline double downstream_loss(const FlowEntry& e) {
  if (e.p_id == 0) return 0.0;
  return static_cast<double>(e.n_r - e.n_d) * missing_feedback(e) /
         static_cast<double>(e.p_id);
}

}  // namespace mpolice
