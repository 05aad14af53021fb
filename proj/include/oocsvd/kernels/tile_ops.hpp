#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "../tiled_matrix.hpp"

namespace oocsvd {

/// Visits every stored tile of a dense matrix with a mutable block.
template <StorageScalar T, class Fn>
void for_each_dense_tile(TiledMatrix<T>& m, Fn&& fn) {
    const auto& p = m.stored_partition();
    for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) fn(m.dense_tile(ti, tj));
}

template <StorageScalar T, class Fn>
void for_each_tile(const TiledMatrix<T>& m, Fn&& fn) {
    const auto& p = m.stored_partition();
    for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) fn(m.tile(ti, tj));
}

/// Copies the logical contents of `src` into dense `dst` (same logical
/// shape, any partitions, any precisions), applying `map(i, j, value)`.
template <StorageScalar TD, StorageScalar TS, class Map>
void convert_copy(const TiledMatrix<TS>& src, TiledMatrix<TD>& dst, Map&& map) {
    if (src.rows() != dst.rows() || src.cols() != dst.cols() || dst.is_transposed())
        throw DimensionError("copy shape mismatch");
    const auto& dp = dst.stored_partition();
    const auto& sp = src.stored_partition();
    const bool t = src.is_transposed();
    for (std::size_t ti = 0; ti < dp.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < dp.tile_cols(); ++tj) {
            auto [rows, cols] = dst.tile_ranges(ti, tj);
            DenseBlock<TD> out(rows, cols);
            // Stored ranges of src covering this logical rectangle.
            const Range srows = t ? cols : rows;
            const Range scols = t ? rows : cols;
            for (std::size_t si = sp.row_tile_of(srows.begin); si < sp.tile_rows() && sp.row_cuts[si] < srows.end; ++si)
                for (std::size_t sj = sp.col_tile_of(scols.begin); sj < sp.tile_cols() && sp.col_cuts[sj] < scols.end;
                     ++sj) {
                    const Block<TS>& b = src.tile(si, sj);
                    auto put = [&](Index r, Index c, TS v) {
                        const Index i = t ? c : r, j = t ? r : c;
                        out.at(i, j) = narrow<TD>(map(i, j, widen(v)));
                    };
                    if (auto* d = std::get_if<DenseBlock<TS>>(&b)) {
                        const Range rr = d->rows.intersect(srows), cc = d->cols.intersect(scols);
                        for (Index r = rr.begin; r < rr.end; ++r)
                            for (Index c = cc.begin; c < cc.end; ++c) put(r, c, d->at(r, c));
                    } else {
                        for_each_in_range(std::get<SparseBlock<TS>>(b), srows, scols, put);
                    }
                }
            dst.put_tile(ti, tj, std::move(out));
        }
}

template <StorageScalar TD, StorageScalar TS>
void convert_copy(const TiledMatrix<TS>& src, TiledMatrix<TD>& dst) {
    convert_copy(src, dst, [](Index, Index, auto v) { return v; });
}

/// Column sums of squares, each accumulated in ascending row order.
template <StorageScalar T>
std::vector<double> column_sumsq(const TiledMatrix<T>& m) {
    if (m.is_transposed()) throw DimensionError("column_sumsq expects a canonical matrix");
    std::vector<double> s(m.cols(), 0.0);
    const auto& p = m.stored_partition();
    for (std::size_t tj = 0; tj < p.tile_cols(); ++tj)
        for (std::size_t ti = 0; ti < p.tile_rows(); ++ti) {
            const Block<T>& b = m.tile(ti, tj);
            if (auto* d = std::get_if<DenseBlock<T>>(&b)) {
                for (Index i = d->rows.begin; i < d->rows.end; ++i)
                    for (Index j = d->cols.begin; j < d->cols.end; ++j) {
                        const double v = static_cast<double>(widen(d->at(i, j)));
                        s[j] += v * v;
                    }
            } else {
                const auto& sp = std::get<SparseBlock<T>>(b);
                for (std::size_t e = 0; e < sp.nnz(); ++e) {
                    const double v = static_cast<double>(widen(sp.values[e]));
                    s[sp.col_idx[e]] += v * v;
                }
            }
        }
    return s;
}

/// Frobenius norm with a partition-independent summation order.
template <StorageScalar T>
double frobenius_norm(const TiledMatrix<T>& m) {
    double total = 0.0;
    for (double v : column_sumsq(m.is_transposed() ? m.transposed() : m)) total += v;
    return std::sqrt(total);
}

template <StorageScalar T>
double max_abs(const TiledMatrix<T>& m) {
    double best = 0.0;
    for_each_tile(m, [&](const Block<T>& b) {
        if (auto* d = std::get_if<DenseBlock<T>>(&b)) {
            for (const T& v : d->values) best = std::max(best, std::abs(static_cast<double>(widen(v))));
        } else {
            for (const T& v : std::get<SparseBlock<T>>(b).values)
                best = std::max(best, std::abs(static_cast<double>(widen(v))));
        }
    });
    return best;
}

/// Multiplies every entry by 2^exponent (exact barring over/underflow).
template <StorageScalar T>
void scale_pow2(TiledMatrix<T>& m, int exponent) {
    if (exponent == 0) return;
    for_each_dense_tile(m, [&](DenseBlock<T>& d) {
        for (T& v : d.values) v = narrow<T>(std::ldexp(widen(v), exponent));
    });
}

/// New dense matrix holding the identity's leading rows x cols corner.
template <StorageScalar T>
TiledMatrix<T> identity_like(ContextPtr ctx, std::uint32_t id, Index rows, Index cols, const BlockPartition* part = nullptr,
                             MatrixRole role = MatrixRole::created) {
    TiledMatrix<T> m =
        part ? TiledMatrix<T>::with_partition(ctx, MatrixDescriptor(id, rows, cols, Density::dense, precision_of<T>(),
                                                                    IndexWidth::bits64),
                                              *part, role)
             : TiledMatrix<T>::zeros(ctx, id, rows, cols, role);
    const auto& p = m.stored_partition();
    for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
            auto [r, c] = m.tile_ranges(ti, tj);
            DenseBlock<T> b(r, c);
            for (Index i = std::max(r.begin, c.begin); i < std::min(r.end, c.end); ++i) b.at(i, i) = narrow<T>(1.0);
            m.put_tile(ti, tj, std::move(b));
        }
    return m;
}

/// Dense tiled copy of a small in-core row-major matrix.
template <StorageScalar T, class W>
TiledMatrix<T> from_small(ContextPtr ctx, std::uint32_t id, Index rows, Index cols, const std::vector<W>& values,
                          MatrixRole role = MatrixRole::created) {
    std::vector<double> v(values.begin(), values.end());
    return TiledMatrix<T>::from_dense(std::move(ctx), id, rows, cols, v, role);
}

}  // namespace oocsvd
