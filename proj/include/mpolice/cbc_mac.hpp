#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>

namespace mpolice {

using MacTag = std::array<std::uint8_t, 16>;

/// A keyed function producing a 16-byte tag. Implementations must be
/// immutable after construction so one instance can be shared freely.
class TagFunction {
 public:
  virtual ~TagFunction() = default;
  virtual MacTag compute(std::span<const std::uint8_t> message) const = 0;
};

/// AES-128 CBC-MAC with a zero IV. The message is zero-padded to a block
/// multiple and followed by one block holding its bit length (big-endian,
/// low 8 bytes), so messages of different lengths never share a padded form.
class AesCbcMac final : public TagFunction {
 public:
  explicit AesCbcMac(std::span<const std::uint8_t, 16> key);
  ~AesCbcMac() override;

  AesCbcMac(const AesCbcMac&) = delete;
  AesCbcMac& operator=(const AesCbcMac&) = delete;

  MacTag compute(std::span<const std::uint8_t> message) const override;

 private:
  struct Schedule;
  std::unique_ptr<Schedule> schedule_;
};

}  // namespace mpolice
