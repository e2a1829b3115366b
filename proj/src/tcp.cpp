#include "mpolice/tcp.hpp"

#include <algorithm>
#include <cmath>

namespace mpolice {

std::vector<TcpSegment> TcpSender::transmit(SimTime now) {
  std::vector<TcpSegment> out;
  if (retransmit_head_) {
    out.push_back({snd_una_, true});
    retransmit_head_ = false;
  }
  const auto window = static_cast<std::uint32_t>(std::max(1.0, std::floor(cwnd_)));
  while (snd_nxt_ < snd_una_ + window) {
    out.push_back({snd_nxt_, snd_nxt_ < high_water_});
    ++snd_nxt_;
  }
  high_water_ = std::max(high_water_, snd_nxt_);
  if (!out.empty() && !armed_) arm(now);
  return out;
}

void TcpSender::sample_rtt(SimTime rtt) {
  if (rtt.count() < 0) return;
  if (!have_rtt_) {
    srtt_ = rtt;
    rttvar_ = rtt / 2;
    have_rtt_ = true;
  } else {
    const SimTime err = srtt_ > rtt ? srtt_ - rtt : rtt - srtt_;
    rttvar_ = (3 * rttvar_ + err) / 4;
    srtt_ = (7 * srtt_ + rtt) / 8;
  }
  rto_ = std::clamp(srtt_ + 4 * rttvar_, config_.min_rto, config_.max_rto);
}

void TcpSender::on_ack(std::uint32_t ack, SimTime echo, SimTime now) {
  if (ack > high_water_) return;  // cannot acknowledge what was never sent
  if (ack > snd_nxt_) snd_nxt_ = ack;  // go-back-N overtaken by earlier copies

  if (ack > snd_una_) {
    const auto newly = static_cast<double>(ack - snd_una_);
    sample_rtt(now - echo);
    snd_una_ = ack;
    if (in_recovery_) {
      if (ack >= recover_) {
        in_recovery_ = false;
        cwnd_ = ssthresh_;
        dupacks_ = 0;
      } else {
        // Partial ACK: the next hole is lost too.
        retransmit_head_ = true;
        cwnd_ = std::max(1.0, cwnd_ - newly + 1.0);
      }
    } else {
      dupacks_ = 0;
      if (cwnd_ < ssthresh_) {
        cwnd_ += newly;
      } else {
        cwnd_ += newly / cwnd_;
      }
    }
    if (snd_una_ == snd_nxt_ && !retransmit_head_) {
      armed_ = false;
    } else {
      arm(now);
    }
    return;
  }

  if (ack == snd_una_ && snd_nxt_ > snd_una_) {
    ++dupacks_;
    if (in_recovery_) {
      cwnd_ += 1.0;
    } else if (dupacks_ == config_.dupack_threshold && snd_una_ >= recover_) {
      ssthresh_ = std::max(flight() / 2.0, 2.0);
      cwnd_ = ssthresh_ + 3.0;
      recover_ = snd_nxt_;
      in_recovery_ = true;
      retransmit_head_ = true;
      ++fast_retransmits_;
    }
  }
}

bool TcpSender::on_timer(SimTime now) {
  if (!armed_ || now < deadline_) return false;
  ssthresh_ = std::max(flight() / 2.0, 2.0);
  cwnd_ = 1.0;
  snd_nxt_ = snd_una_;
  recover_ = high_water_;
  in_recovery_ = false;
  retransmit_head_ = false;
  dupacks_ = 0;
  rto_ = std::min(rto_ * 2, config_.max_rto);
  ++timeouts_;
  armed_ = false;
  return true;
}

std::uint32_t TcpReceiver::on_segment(std::uint32_t seq) {
  if (seq == rcv_nxt_) {
    ++rcv_nxt_;
    auto it = out_of_order_.begin();
    while (it != out_of_order_.end() && *it == rcv_nxt_) {
      ++rcv_nxt_;
      it = out_of_order_.erase(it);
    }
  } else if (seq > rcv_nxt_) {
    out_of_order_.insert(seq);
  }
  return rcv_nxt_;
}

}  // namespace mpolice
