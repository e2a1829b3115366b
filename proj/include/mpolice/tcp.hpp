#pragma once

// Minimal Reno/NewReno sender and cumulative-ACK receiver in packet units.
// No SACK, no delayed ACKs. The sender has an unlimited backlog.

#include <cstdint>
#include <set>
#include <vector>

#include "mpolice/types.hpp"

namespace mpolice {

struct TcpConfig {
  double initial_cwnd = 2.0;
  double initial_ssthresh = 1e9;
  SimTime initial_rto = std::chrono::seconds{1};
  SimTime min_rto = std::chrono::seconds{1};
  SimTime max_rto = std::chrono::seconds{60};
  std::uint32_t dupack_threshold = 3;
};

struct TcpSegment {
  std::uint32_t seq = 0;
  bool retransmission = false;
};

class TcpSender {
 public:
  explicit TcpSender(TcpConfig config = {}) : config_(config), cwnd_(config.initial_cwnd),
                                              ssthresh_(config.initial_ssthresh),
                                              rto_(config.initial_rto) {}

  /// Segments the window allows right now. Arms the retransmission timer
  /// when something new is outstanding.
  std::vector<TcpSegment> transmit(SimTime now);

  /// Processes a cumulative ACK (`ack` = next expected sequence number).
  /// `echo` is the send time of the segment that triggered it.
  void on_ack(std::uint32_t ack, SimTime echo, SimTime now);

  /// Time at which the timer expires, or nullopt-like max() when idle.
  SimTime deadline() const { return deadline_; }
  bool timer_armed() const { return armed_; }

  /// Handles a timer expiry at `now`; no-op unless the deadline has passed.
  /// Returns true if a timeout was taken.
  bool on_timer(SimTime now);

  double cwnd() const { return cwnd_; }
  double ssthresh() const { return ssthresh_; }
  SimTime rto() const { return rto_; }
  std::uint32_t snd_una() const { return snd_una_; }
  std::uint32_t snd_nxt() const { return snd_nxt_; }
  std::uint64_t timeouts() const { return timeouts_; }
  std::uint64_t fast_retransmits() const { return fast_retransmits_; }
  bool in_recovery() const { return in_recovery_; }

 private:
  void arm(SimTime now) {
    deadline_ = now + rto_;
    armed_ = true;
  }
  void sample_rtt(SimTime rtt);
  double flight() const { return static_cast<double>(snd_nxt_ - snd_una_); }

  TcpConfig config_;
  double cwnd_;
  double ssthresh_;
  std::uint32_t snd_una_ = 0;
  std::uint32_t snd_nxt_ = 0;
  std::uint32_t high_water_ = 0;  // highest sequence ever sent + 1
  std::uint32_t recover_ = 0;
  std::uint32_t dupacks_ = 0;
  bool in_recovery_ = false;
  bool retransmit_head_ = false;
  bool have_rtt_ = false;
  SimTime srtt_{};
  SimTime rttvar_{};
  SimTime rto_;
  SimTime deadline_{};
  bool armed_ = false;
  std::uint64_t timeouts_ = 0;
  std::uint64_t fast_retransmits_ = 0;
};

class TcpReceiver {
 public:
  /// Records an arriving segment and returns the cumulative ACK number.
  std::uint32_t on_segment(std::uint32_t seq);
  std::uint32_t rcv_nxt() const { return rcv_nxt_; }
  std::uint64_t delivered() const { return rcv_nxt_; }

 private:
  std::uint32_t rcv_nxt_ = 0;
  std::set<std::uint32_t> out_of_order_;
};

}  // namespace mpolice
