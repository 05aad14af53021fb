#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>

namespace oocsvd {

/// 64-bit non-cryptographic payload hash: FNV-1a over little-endian 8-byte
/// words (bytewise for the tail), finished with a murmur-style avalanche.
/// Feeding the payload in arbitrary chunks gives the same digest.
class PayloadHash {
  public:
    void update(std::span<const std::byte> data) noexcept {
        std::size_t i = 0;
        while (pending_ > 0 && pending_ < 8 && i < data.size()) buf_[pending_++] = data[i++];
        if (pending_ == 8) {
            mix_word(buf_);
            pending_ = 0;
        }
        for (; i + 8 <= data.size(); i += 8) mix_word(data.data() + i);
        for (; i < data.size(); ++i) buf_[pending_++] = data[i];
        length_ += data.size();
    }

    std::uint64_t digest() const noexcept {
        std::uint64_t h = h_;
        for (std::size_t i = 0; i < pending_; ++i) h = (h ^ static_cast<std::uint64_t>(buf_[i])) * kPrime;
        std::uint64_t z = h ^ length_;
        z ^= z >> 33;
        z *= 0xff51afd7ed558ccdull;
        z ^= z >> 33;
        z *= 0xc4ceb9fe1a85ec53ull;
        z ^= z >> 33;
        return z;
    }

  private:
    void mix_word(const std::byte* p) noexcept {
        std::uint64_t w;
        std::memcpy(&w, p, 8);
        h_ = (h_ ^ w) * kPrime;
    }

    static constexpr std::uint64_t kPrime = 0x100000001b3ull;
    std::uint64_t h_ = 0xcbf29ce484222325ull;
    std::uint64_t length_ = 0;
    std::byte buf_[8]{};
    std::size_t pending_ = 0;
};

inline std::uint64_t payload_hash(std::span<const std::byte> data) noexcept {
    PayloadHash h;
    h.update(data);
    return h.digest();
}

}  // namespace oocsvd
