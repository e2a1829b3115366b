#include "mpolice/capability.hpp"

#include <algorithm>
#include <stdexcept>

namespace mpolice {

namespace {

template <typename T>
void put_be(std::uint8_t* out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out[i] = static_cast<std::uint8_t>(v >> (8 * (sizeof(T) - 1 - i)));
  }
}

template <typename T>
T get_be(const std::uint8_t* in) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>((v << 8) | in[i]);
  return v;
}

std::array<std::uint8_t, 22> distinct_mac_input(std::uint32_t ip_mp, std::uint32_t ts,
                                                std::uint16_t p_id, std::uint64_t f,
                                                std::uint32_t t_a) {
  std::array<std::uint8_t, 22> m{};
  put_be(m.data(), ip_mp);
  put_be(m.data() + 4, ts);
  put_be(m.data() + 8, p_id);
  put_be(m.data() + 10, f);
  put_be(m.data() + 18, t_a);
  return m;
}

std::array<std::uint8_t, 8> common_mac_input(std::uint32_t ip_mp, std::uint32_t ts) {
  std::array<std::uint8_t, 8> m{};
  put_be(m.data(), ip_mp);
  put_be(m.data() + 4, ts);
  return m;
}

}  // namespace

MacKey::MacKey(std::span<const std::uint8_t, 16> key_bytes) {
  if (std::all_of(key_bytes.begin(), key_bytes.end(),
                  [](std::uint8_t b) { return b == 0; })) {
    throw std::invalid_argument("MAC key must not be all zero");
  }
  primitive_ = std::make_shared<AesCbcMac>(key_bytes);
}

MacKey::MacKey(std::shared_ptr<const TagFunction> primitive)
    : primitive_(std::move(primitive)) {
  if (!primitive_) throw std::invalid_argument("null MAC primitive");
}

DistinctCapability generate_distinct(const MacKey& key, std::uint32_t ip_mp,
                                     std::uint32_t ts, std::uint16_t p_id,
                                     std::uint64_t f, std::uint32_t t_a) {
  if (p_id == 0) throw std::invalid_argument("capability id must be >= 1");
  DistinctCapability c{ip_mp, ts, p_id, f, t_a, {}};
  c.mac = key.tag(distinct_mac_input(ip_mp, ts, p_id, f, t_a));
  return c;
}

CommonCapability generate_common(const MacKey& key, std::uint32_t ip_mp,
                                 std::uint32_t ts) {
  CommonCapability c{ip_mp, ts, {}};
  c.mac = key.tag(common_mac_input(ip_mp, ts));
  return c;
}

CapabilityFrame encode(const Capability& cap) {
  CapabilityFrame out{};
  out[0] = kCapabilityVersion;
  if (const auto* d = std::get_if<DistinctCapability>(&cap)) {
    out[1] = kDistinctTag;
    put_be(out.data() + 2, d->ip_mp);
    put_be(out.data() + 6, d->ts);
    put_be(out.data() + 10, d->p_id);
    put_be(out.data() + 12, d->f);
    put_be(out.data() + 20, d->t_a);
    std::copy(d->mac.begin(), d->mac.end(), out.begin() + 24);
  } else {
    const auto& c = std::get<CommonCapability>(cap);
    out[1] = kCommonTag;
    put_be(out.data() + 2, c.ip_mp);
    put_be(out.data() + 6, c.ts);
    std::copy(c.mac.begin(), c.mac.end(), out.begin() + 24);
  }
  return out;
}

DecodeResult decode(std::span<const std::uint8_t> frame, const MacKey& key) {
  if (frame.size() != kCapabilityFrameSize) return DecodeError::wrong_length;
  if (frame[0] != kCapabilityVersion) return DecodeError::bad_version;

  MacTag mac{};
  std::copy(frame.begin() + 24, frame.end(), mac.begin());
  const std::uint32_t ip_mp = get_be<std::uint32_t>(frame.data() + 2);
  const std::uint32_t ts = get_be<std::uint32_t>(frame.data() + 6);

  switch (frame[1]) {
    case kDistinctTag: {
      const auto p_id = get_be<std::uint16_t>(frame.data() + 10);
      const auto f = get_be<std::uint64_t>(frame.data() + 12);
      const auto t_a = get_be<std::uint32_t>(frame.data() + 20);
      if (key.tag(distinct_mac_input(ip_mp, ts, p_id, f, t_a)) != mac) {
        return DecodeError::mac_mismatch;
      }
      return Capability{DistinctCapability{ip_mp, ts, p_id, f, t_a, mac}};
    }
    case kCommonTag: {
      if (std::any_of(frame.begin() + 10, frame.begin() + 24,
                      [](std::uint8_t b) { return b != 0; })) {
        return DecodeError::bad_padding;
      }
      if (key.tag(common_mac_input(ip_mp, ts)) != mac) {
        return DecodeError::mac_mismatch;
      }
      return Capability{CommonCapability{ip_mp, ts, mac}};
    }
    default:
      return DecodeError::bad_tag;
  }
}

Verdict verify(const MacKey& key, std::span<const std::uint8_t> frame,
               SimTime now, std::chrono::milliseconds replay_window) {
  if (replay_window.count() <= 0) {
    throw std::invalid_argument("replay window must be positive");
  }
  const DecodeResult r = decode(frame, key);
  if (const auto* err = std::get_if<DecodeError>(&r)) {
    return *err == DecodeError::mac_mismatch ? Verdict::forged : Verdict::malformed;
  }
  const std::int64_t age =
      static_cast<std::int64_t>(to_wire_ms(now)) -
      static_cast<std::int64_t>(ts_of(std::get<Capability>(r)));
  return age > replay_window.count() ? Verdict::stale : Verdict::valid;
}

std::string_view to_string(DecodeError e) {
  switch (e) {
    case DecodeError::wrong_length: return "wrong-length";
    case DecodeError::bad_version: return "bad-version";
    case DecodeError::bad_tag: return "bad-tag";
    case DecodeError::bad_padding: return "bad-padding";
    case DecodeError::mac_mismatch: return "mac-mismatch";
  }
  return "unknown";
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::valid: return "valid";
    case Verdict::stale: return "stale";
    case Verdict::forged: return "forged";
    case Verdict::malformed: return "malformed";
  }
  return "unknown";
}

}  // namespace mpolice
