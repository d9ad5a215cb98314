#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace rrwave {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
class Crc32 {
 public:
  void update(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint32_t c = state_;
    for (size_t i = 0; i < n; ++i) c = table()[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    state_ = c;
  }

  uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

  static uint32_t of(const void* data, size_t n) {
    Crc32 c;
    c.update(data, n);
    return c.value();
  }

 private:
  static const std::array<uint32_t, 256>& table() {
    static const std::array<uint32_t, 256> t = [] {
      std::array<uint32_t, 256> out{};
      for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        out[i] = c;
      }
      return out;
    }();
    return t;
  }

  uint32_t state_ = 0xFFFFFFFFu;
};

}  // namespace rrwave
