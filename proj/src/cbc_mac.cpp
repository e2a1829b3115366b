#include "mpolice/cbc_mac.hpp"

#define OPENSSL_SUPPRESS_DEPRECATED
#include <openssl/aes.h>

#include <algorithm>
#include <stdexcept>

namespace mpolice {

// The low-level AES_KEY schedule is read-only during encryption, which keeps
// compute() const and thread-safe.
struct AesCbcMac::Schedule {
  AES_KEY key;
};

AesCbcMac::AesCbcMac(std::span<const std::uint8_t, 16> key)
    : schedule_(std::make_unique<Schedule>()) {
  if (AES_set_encrypt_key(key.data(), 128, &schedule_->key) != 0) {
    throw std::runtime_error("AES key schedule failed");
  }
}

AesCbcMac::~AesCbcMac() = default;

MacTag AesCbcMac::compute(std::span<const std::uint8_t> message) const {
  MacTag state{};
  std::size_t pos = 0;
  while (pos < message.size()) {
    const std::size_t n = std::min<std::size_t>(16, message.size() - pos);
    for (std::size_t i = 0; i < n; ++i) state[i] ^= message[pos + i];
    AES_encrypt(state.data(), state.data(), &schedule_->key);
    pos += n;
  }
  const std::uint64_t bits = static_cast<std::uint64_t>(message.size()) * 8;
  for (int i = 0; i < 8; ++i) {
    state[8 + i] ^= static_cast<std::uint8_t>(bits >> (56 - 8 * i));
  }
  AES_encrypt(state.data(), state.data(), &schedule_->key);
  return state;
}

}  // namespace mpolice
