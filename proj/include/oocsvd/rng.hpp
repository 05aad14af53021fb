#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "kernels/tile_ops.hpp"

namespace oocsvd {

/// Counter-based generator: every draw is a pure function of (seed, counter),
/// so tiles can be filled in any order with the same result.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) noexcept : key_(mix(seed ^ 0x6a09e667f3bcc909ull)) {}

    std::uint64_t bits(std::uint64_t counter) const noexcept { return mix(key_ + counter * 0x9e3779b97f4a7c15ull); }

    /// Uniform in (0, 1].
    double uniform(std::uint64_t counter) const noexcept {
        return (static_cast<double>(bits(counter) >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Standard normal; the pair (2p, 2p+1) shares one Box-Muller draw.
    double normal(std::uint64_t index) const noexcept {
        const std::uint64_t pair = index / 2;
        const double u1 = uniform(2 * pair), u2 = uniform(2 * pair + 1);
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 2.0 * std::numbers::pi * u2;
        return index % 2 == 0 ? rad * std::cos(ang) : rad * std::sin(ang);
    }

  private:
    static std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    std::uint64_t key_;
};

/// Dense rows x cols matrix of independent standard normals; entry (i, j)
/// depends only on the seed and i * cols + j.
template <StorageScalar T>
TiledMatrix<T> gaussian_matrix(ContextPtr ctx, std::uint32_t id, Index rows, Index cols, std::uint64_t seed,
                               MatrixRole role = MatrixRole::created) {
    const CounterRng rng(seed);
    auto m = TiledMatrix<T>::zeros(std::move(ctx), id, rows, cols, role);
    const auto& p = m.stored_partition();
    for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
            auto [r, c] = m.tile_ranges(ti, tj);
            DenseBlock<T> b(r, c);
            for (Index i = r.begin; i < r.end; ++i)
                for (Index j = c.begin; j < c.end; ++j) b.at(i, j) = narrow<T>(rng.normal(i * cols + j));
            m.put_tile(ti, tj, std::move(b));
        }
    return m;
}

}  // namespace oocsvd
