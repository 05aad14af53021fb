#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>

#include "error.hpp"
#include "half.hpp"

namespace oocsvd {

enum class Precision : std::uint8_t { half = 0, single = 1, double_ = 2 };

constexpr std::size_t bytes_per_scalar(Precision p) noexcept {
    switch (p) {
        case Precision::half: return 2;
        case Precision::single: return 4;
        case Precision::double_: return 8;
    }
    return 0;
}

inline std::string_view to_string(Precision p) noexcept {
    switch (p) {
        case Precision::half: return "half";
        case Precision::single: return "single";
        case Precision::double_: return "double";
    }
    return "?";
}

inline Precision parse_precision(std::string_view s) {
    if (s == "half") return Precision::half;
    if (s == "single" || s == "float") return Precision::single;
    if (s == "double") return Precision::double_;
    throw Error("unknown precision '" + std::string(s) + "'");
}

template <class T>
concept StorageScalar = std::is_same_v<T, Half> || std::is_same_v<T, float> || std::is_same_v<T, double>;

template <StorageScalar T>
constexpr Precision precision_of() noexcept {
    if constexpr (std::is_same_v<T, Half>) return Precision::half;
    else if constexpr (std::is_same_v<T, float>) return Precision::single;
    else return Precision::double_;
}

// Arithmetic type for a storage type: half widens to single.
template <StorageScalar T>
using compute_t = std::conditional_t<std::is_same_v<T, double>, double, float>;

// Working precision of a mixed operation: the wider operand, half counted as single.
template <StorageScalar A, StorageScalar B>
using working_t = std::conditional_t<std::is_same_v<compute_t<A>, double> || std::is_same_v<compute_t<B>, double>,
                                     double, float>;

template <StorageScalar T>
constexpr compute_t<T> widen(T v) noexcept {
    return static_cast<compute_t<T>>(v);
}

template <StorageScalar T, class W>
constexpr T narrow(W v) noexcept {
    if constexpr (std::is_same_v<T, Half>) return Half(static_cast<float>(v));
    else return static_cast<T>(v);
}

/// Calls `fn.template operator()<T>()` with the storage type for `p`.
template <class Fn>
decltype(auto) dispatch_precision(Precision p, Fn&& fn) {
    switch (p) {
        case Precision::half: return fn.template operator()<Half>();
        case Precision::single: return fn.template operator()<float>();
        case Precision::double_: break;
    }
    return fn.template operator()<double>();
}

}  // namespace oocsvd
