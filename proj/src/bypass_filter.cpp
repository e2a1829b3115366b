#include "mpolice/bypass_filter.hpp"

#include <array>
#include <stdexcept>

namespace mpolice {

namespace {

std::array<std::uint8_t, 16> seed_key(std::uint64_t seed) {
  std::array<std::uint8_t, 16> k{};
  for (int i = 0; i < 8; ++i) {
    k[i] = static_cast<std::uint8_t>(seed >> (56 - 8 * i));
    k[8 + i] = static_cast<std::uint8_t>(0xa5U ^ static_cast<unsigned>(i));
  }
  return k;
}

void put16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v >> 8);
  p[1] = static_cast<std::uint8_t>(v);
}

void put32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}

std::uint16_t get16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

}  // namespace

SecretGenerator::SecretGenerator(std::uint64_t seed) : prf_(seed_key(seed)) {}

PortSecret SecretGenerator::next() {
  for (;;) {
    std::array<std::uint8_t, 8> block{};
    for (int i = 0; i < 8; ++i) block[i] = static_cast<std::uint8_t>(counter_ >> (56 - 8 * i));
    ++counter_;
    const MacTag t = prf_.compute(block);
    const std::uint32_t v = (std::uint32_t{t[0]} << 24) | (std::uint32_t{t[1]} << 16) |
                            (std::uint32_t{t[2]} << 8) | t[3];
    if (issued_.insert(v).second) return PortSecret{v, epoch_++};
  }
}

std::optional<std::vector<std::uint8_t>> encapsulate(std::span<const std::uint8_t> inner,
                                                     PortSecret secret, std::uint32_t src_ip,
                                                     std::uint32_t dst_ip, std::size_t mtu) {
  if (inner.size() + kEncapOverhead > mtu) return std::nullopt;
  std::vector<std::uint8_t> out(kEncapOverhead + inner.size());
  std::uint8_t* ip = out.data();
  ip[0] = 0x45;
  put16(ip + 2, static_cast<std::uint16_t>(out.size()));
  ip[8] = 64;
  ip[9] = 17;
  put32(ip + 12, src_ip);
  put32(ip + 16, dst_ip);
  std::uint8_t* udp = ip + kOuterIpHeader;
  const PortPair ports = ports_for(secret.value);
  put16(udp, ports.src);
  put16(udp + 2, ports.dst);
  put16(udp + 4, static_cast<std::uint16_t>(kOuterUdpHeader + inner.size()));
  std::copy(inner.begin(), inner.end(), out.begin() + kEncapOverhead);
  return out;
}

std::optional<std::span<const std::uint8_t>> decapsulate(std::span<const std::uint8_t> frame) {
  if (frame.size() < kEncapOverhead) return std::nullopt;
  if (frame[0] != 0x45 || frame[9] != 17) return std::nullopt;
  if (get16(frame.data() + 2) != frame.size()) return std::nullopt;
  if (get16(frame.data() + kOuterIpHeader + 4) != frame.size() - kOuterIpHeader) {
    return std::nullopt;
  }
  return frame.subspan(kEncapOverhead);
}

std::optional<PortPair> outer_ports(std::span<const std::uint8_t> frame) {
  if (frame.size() < kEncapOverhead) return std::nullopt;
  return PortPair{get16(frame.data() + kOuterIpHeader), get16(frame.data() + kOuterIpHeader + 2)};
}

AclVerdict acl_check(PortPair ports, PortSecret secret) {
  return secret_of(ports) == secret.value ? AclVerdict::pass : AclVerdict::drop;
}

AclVerdict acl_check(std::span<const std::uint8_t> frame, PortSecret secret) {
  const auto ports = outer_ports(frame);
  return ports ? acl_check(*ports, secret) : AclVerdict::drop;
}

PortFilter::PortFilter(std::uint64_t seed, FilterConfig config, SimTime now)
    : generator_(seed), config_(config), current_(generator_.next()), last_rotation_(now) {
  if (config_.rotation_period.count() <= 0) {
    throw std::invalid_argument("filter.rotation_s must be positive");
  }
}

PortSecret PortFilter::active(SimTime now) const {
  return next_ && now >= activate_at_ ? *next_ : current_;
}

AclVerdict PortFilter::check(PortPair ports, SimTime now) const {
  const std::uint32_t s = secret_of(ports);
  if (next_ && now >= activate_at_) {
    if (s == next_->value) return AclVerdict::pass;
    return s == current_.value && now < activate_at_ + config_.grace ? AclVerdict::pass
                                                                     : AclVerdict::drop;
  }
  if (s == current_.value) return AclVerdict::pass;
  return previous_ && s == previous_->value && now < grace_until_ ? AclVerdict::pass
                                                                  : AclVerdict::drop;
}

void PortFilter::settle(SimTime now) {
  if (next_ && now >= activate_at_) {
    previous_ = current_;
    grace_until_ = activate_at_ + config_.grace;
    current_ = *next_;
    next_.reset();
  }
}

std::optional<PortSecret> PortFilter::rekey(bool alarm, SimTime now) {
  settle(now);
  if (next_) return std::nullopt;
  if (!alarm && now - last_rotation_ < config_.rotation_period) return std::nullopt;
  // Invalid packets already past the filter keep arriving for about one RTT.
  if (alarm && now < alarm_holdoff_until_) return std::nullopt;
  next_ = generator_.next();
  activate_at_ = now + config_.control_delay;
  if (alarm) alarm_holdoff_until_ = activate_at_ + config_.grace;
  last_rotation_ = now;
  return next_;
}

}  // namespace mpolice
