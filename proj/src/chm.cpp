#include "mpolice/chm.hpp"

#include <stdexcept>

namespace mpolice {

FeedbackFrame make_feedback_frame(MboxAddr dest, std::span<const CapabilityFrame> caps) {
  if (caps.size() > kMaxCapabilitiesPerAck) {
    throw std::invalid_argument("a feedback frame carries at most 15 capabilities");
  }
  FeedbackFrame out{dest, {}};
  out.bytes.reserve(1 + caps.size() * kCapabilityFrameSize);
  out.bytes.push_back(static_cast<std::uint8_t>(caps.size() & 0x0fU));
  for (const auto& c : caps) out.bytes.insert(out.bytes.end(), c.begin(), c.end());
  return out;
}

std::optional<std::vector<std::span<const std::uint8_t>>> parse_feedback_frame(
    std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return std::nullopt;
  const std::size_t n = bytes[0] & 0x0fU;
  if (bytes.size() != 1 + n * kCapabilityFrameSize) return std::nullopt;
  std::vector<std::span<const std::uint8_t>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(bytes.subspan(1 + i * kCapabilityFrameSize, kCapabilityFrameSize));
  }
  return out;
}

void SlidingWindowCounter::record(SimTime now) {
  events_.push_back(now);
  count(now);
}

std::size_t SlidingWindowCounter::count(SimTime now) {
  while (!events_.empty() && now - events_.front() >= window_) events_.pop_front();
  return events_.size();
}

bool bypass_alarm(std::size_t invalid_in_window, std::size_t threshold) {
  return invalid_in_window > threshold;
}

CapabilityHandler::CapabilityHandler(MacKey key, ChmConfig config)
    : key_(std::move(key)), config_(config), invalid_window_(config.alarm_window) {
  if (config_.alarm_threshold == 0) throw std::invalid_argument("alarm threshold must be > 0");
}

IngestResult CapabilityHandler::ingest(std::span<const std::uint8_t> packet, SimTime now) {
  if (packet.size() < kCapabilityFrameSize) return ingest_trailer(std::nullopt, now);
  const std::size_t body = packet.size() - kCapabilityFrameSize;
  CapabilityFrame trailer{};
  std::copy(packet.begin() + static_cast<std::ptrdiff_t>(body), packet.end(), trailer.begin());
  IngestResult r = ingest_trailer(trailer, now);
  if (r.verdict != IngestVerdict::invalid) r.payload = packet.first(body);
  return r;
}

IngestResult CapabilityHandler::ingest_trailer(const std::optional<CapabilityFrame>& trailer,
                                               SimTime now) {
  IngestResult r;
  auto reject = [&] {
    ++counters_.invalid;
    invalid_window_.record(now);
    return r;
  };
  if (!trailer) return reject();
  const DecodeResult decoded = decode(*trailer, key_);
  if (std::holds_alternative<DecodeError>(decoded)) return reject();
  Capability cap = std::get<Capability>(decoded);
  const std::int64_t age = static_cast<std::int64_t>(to_wire_ms(now)) -
                           static_cast<std::int64_t>(ts_of(cap));
  if (age > config_.replay_window.count()) return reject();
  r.capability = cap;
  if (const auto* d = std::get_if<DistinctCapability>(&cap)) {
    r.verdict = IngestVerdict::distinct_queued;
    ++counters_.distinct;
    expire_seen(now);
    const Key k{d->f, d->t_a, d->p_id, d->ip_mp};
    if (seen_.insert(k).second) {
      seen_order_.emplace_back(now, k);
      buffers_[MboxAddr{d->ip_mp}].push_back(Pending{*trailer, now});
    } else {
      ++counters_.duplicates;
    }
  } else {
    r.verdict = IngestVerdict::common_accepted;
    ++counters_.common;
  }
  return r;
}

void CapabilityHandler::expire_seen(SimTime now) {
  const SimTime horizon = 2 * SimTime{config_.replay_window};
  while (!seen_order_.empty() && now - seen_order_.front().first > horizon) {
    seen_.erase(seen_order_.front().second);
    seen_order_.pop_front();
  }
}

FeedbackFrame CapabilityHandler::take(MboxAddr mbox, std::size_t n) {
  auto& q = buffers_[mbox];
  n = std::min(n, q.size());
  std::vector<CapabilityFrame> caps;
  caps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    caps.push_back(q.front().frame);
    q.pop_front();
  }
  counters_.returned += n;
  return make_feedback_frame(mbox, caps);
}

std::vector<FeedbackFrame> CapabilityHandler::flush_feedback(std::size_t ack_capacity,
                                                             SimTime) {
  if (ack_capacity == 0 || ack_capacity > kMaxCapabilitiesPerAck) {
    throw std::invalid_argument("ack capacity must be in [1, 15]");
  }
  std::vector<FeedbackFrame> out;
  for (auto& [mbox, q] : buffers_) {
    while (!q.empty()) out.push_back(take(mbox, ack_capacity));
  }
  return out;
}

std::vector<FeedbackFrame> CapabilityHandler::flush_due(std::size_t ack_capacity,
                                                        SimTime now) {
  if (ack_capacity == 0 || ack_capacity > kMaxCapabilitiesPerAck) {
    throw std::invalid_argument("ack capacity must be in [1, 15]");
  }
  std::vector<FeedbackFrame> out;
  for (auto& [mbox, q] : buffers_) {
    while (q.size() >= ack_capacity) out.push_back(take(mbox, ack_capacity));
    if (!q.empty() && now - q.front().queued_at >= config_.flush_deadline) {
      out.push_back(take(mbox, ack_capacity));
    }
  }
  return out;
}

std::optional<FeedbackFrame> CapabilityHandler::piggyback(MboxAddr mbox,
                                                          std::size_t ack_capacity) {
  auto it = buffers_.find(mbox);
  if (it == buffers_.end() || it->second.empty()) return std::nullopt;
  return take(mbox, std::min(ack_capacity, kMaxCapabilitiesPerAck));
}

bool CapabilityHandler::bypass_alarm(SimTime now) {
  return mpolice::bypass_alarm(invalid_window_.count(now), config_.alarm_threshold);
}

std::size_t CapabilityHandler::pending() const {
  std::size_t n = 0;
  for (const auto& [mbox, q] : buffers_) n += q.size();
  return n;
}

std::size_t CapabilityHandler::pending_for(MboxAddr mbox) const {
  auto it = buffers_.find(mbox);
  return it == buffers_.end() ? 0 : it->second.size();
}

}  // namespace mpolice
