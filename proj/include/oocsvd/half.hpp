#pragma once

#include <bit>
#include <cstdint>

namespace oocsvd {

/// IEEE 754-2008 binary16 bit pattern of `value`, round-to-nearest-even.
/// Overflow saturates to signed infinity; NaN payloads keep their top bits
/// and stay quiet.
constexpr std::uint16_t half_encode(float value) noexcept {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
    const std::uint32_t exp = (x >> 23) & 0xffu;
    std::uint32_t mant = x & 0x7fffffu;

    if (exp == 0xffu) {
        if (mant == 0) return sign | 0x7c00u;
        return static_cast<std::uint16_t>(sign | 0x7e00u | (mant >> 13));
    }

    const int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 0x1f) return sign | 0x7c00u;

    if (e <= 0) {
        // subnormal or underflow to zero
        if (e < -10) return sign;
        mant |= 0x800000u;
        const int shift = 14 - e;
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
        return static_cast<std::uint16_t>(sign | half_mant);
    }

    std::uint32_t bits = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (bits & 1u))) ++bits;  // carry may roll into inf
    return static_cast<std::uint16_t>(sign | bits);
}

/// Exact widening of a binary16 bit pattern.
constexpr float half_decode(std::uint16_t bits) noexcept {
    const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
    const std::uint32_t exp = (bits >> 10) & 0x1fu;
    std::uint32_t mant = bits & 0x3ffu;

    if (exp == 0x1f) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
    if (exp == 0) {
        if (mant == 0) return std::bit_cast<float>(sign);
        int e = -1;
        do {
            ++e;
            mant <<= 1;
        } while ((mant & 0x400u) == 0);
        const std::uint32_t fexp = static_cast<std::uint32_t>(127 - 15 - e);
        return std::bit_cast<float>(sign | (fexp << 23) | ((mant & 0x3ffu) << 13));
    }
    return std::bit_cast<float>(sign | ((exp + 127 - 15) << 23) | (mant << 13));
}

/// Storage-only half precision scalar. Arithmetic goes through float.
struct Half {
    std::uint16_t bits = 0;

    constexpr Half() = default;
    constexpr Half(float v) noexcept : bits(half_encode(v)) {}
    constexpr Half(double v) noexcept : bits(half_encode(static_cast<float>(v))) {}
    constexpr operator float() const noexcept { return half_decode(bits); }

    static constexpr Half from_bits(std::uint16_t b) noexcept {
        Half h;
        h.bits = b;
        return h;
    }
    friend constexpr bool operator==(Half a, Half b) noexcept { return a.bits == b.bits; }
};

static_assert(sizeof(Half) == 2);

}  // namespace oocsvd
