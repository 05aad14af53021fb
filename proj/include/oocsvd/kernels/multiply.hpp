#pragma once

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstdint>
#include <unordered_map>
#include <variant>
#include <vector>

#include "../block.hpp"
#include "../context.hpp"
#include "../planner.hpp"
#include "../tiled_matrix.hpp"

namespace oocsvd {

/// One tile-level product: logical rows `rows` of X times logical columns
/// `cols` of Y over the inner segment `inner`, accumulated into the output
/// tile whose origin is (out_rows.begin, out_cols.begin).
struct BlockProductTask {
    Range rows;
    Range inner;
    Range cols;
    bool accumulate = true;
};

namespace detail {

// Logical view of a stored tile: element (i, p) reads stored (p, i) when transposed.
template <StorageScalar T>
struct TileView {
    const Block<T>* block;
    bool transposed;

    const DenseBlock<T>& dense() const { return std::get<DenseBlock<T>>(*block); }
    const SparseBlock<T>& sparse() const { return std::get<SparseBlock<T>>(*block); }
    bool is_sparse() const { return std::holds_alternative<SparseBlock<T>>(*block); }

    compute_t<T> at(Index i, Index p) const {
        return widen(transposed ? dense().at(p, i) : dense().at(i, p));
    }

    // Entries with logical row in `rows`, logical col in `cols`, as
    // fn(row, col, value). For a fixed logical row, columns ascend; for a
    // fixed logical column, rows ascend.
    template <class Fn>
    void for_each(Range rows, Range cols, Fn&& fn) const {
        if (!transposed) for_each_in_range(sparse(), rows, cols, [&](Index r, Index c, T v) { fn(r, c, widen(v)); });
        else for_each_in_range(sparse(), cols, rows, [&](Index r, Index c, T v) { fn(c, r, widen(v)); });
    }
};

// Dense accumulator for one output tile.
template <class W>
struct DenseAcc {
    Range rows;
    Range cols;
    std::vector<W> v;
    W& at(Index i, Index j) noexcept { return v[(i - rows.begin) * cols.size() + (j - cols.begin)]; }
};

template <class TX, class TY, class W>
void dense_output_product(const TileView<TX>& x, const TileView<TY>& y, const BlockProductTask& t, DenseAcc<W>& acc,
                          ExecutionContext& ctx) {
    const Index h = t.rows.size(), kk = t.inner.size(), w = t.cols.size();
    std::uint64_t estimate = h * kk * w;
    if (x.is_sparse()) estimate = x.sparse().nnz() * w;
    else if (y.is_sparse()) estimate = y.sparse().nnz() * h;
    CostEstimate c;
    c.multiply_adds = estimate;
    const std::size_t threads = choose_threads(c, ctx.threads(), ctx.min_ops_per_thread());

    std::atomic<std::uint64_t> total{0};
    ctx.pool().parallel_for(h, threads, [&](std::size_t lo, std::size_t hi) {
        const Range mine{t.rows.begin + lo, t.rows.begin + hi};
        std::uint64_t count = 0;
        if (!x.is_sparse() && !y.is_sparse()) {
            for (Index i = mine.begin; i < mine.end; ++i) {
                W* out = &acc.at(i, t.cols.begin);
                for (Index p = t.inner.begin; p < t.inner.end; ++p) {
                    const W xv = static_cast<W>(x.at(i, p));
                    if (!y.transposed) {
                        const TY* yr = &y.dense().at(p, t.cols.begin);
                        for (Index j = 0; j < w; ++j) out[j] += xv * static_cast<W>(widen(yr[j]));
                    } else {
                        for (Index j = 0; j < w; ++j) out[j] += xv * static_cast<W>(y.at(p, t.cols.begin + j));
                    }
                }
                count += kk * w;
            }
        } else if (x.is_sparse() && !y.is_sparse()) {
            x.for_each(mine, t.inner, [&](Index i, Index p, auto xv) {
                W* out = &acc.at(i, t.cols.begin);
                const W xw = static_cast<W>(xv);
                if (!y.transposed) {
                    const TY* yr = &y.dense().at(p, t.cols.begin);
                    for (Index j = 0; j < w; ++j) out[j] += xw * static_cast<W>(widen(yr[j]));
                } else {
                    for (Index j = 0; j < w; ++j) out[j] += xw * static_cast<W>(y.at(p, t.cols.begin + j));
                }
                count += w;
            });
        } else {
            // dense x sparse: each Y entry (p, j) feeds column j of every row.
            y.for_each(t.inner, t.cols, [&](Index p, Index j, auto yv) {
                const W yw = static_cast<W>(yv);
                for (Index i = mine.begin; i < mine.end; ++i) acc.at(i, j) += static_cast<W>(x.at(i, p)) * yw;
                count += mine.size();
            });
        }
        total += count;
    });
    ctx.multiply_adds() += total.load();
}

template <class TX, class TY, class W>
void sparse_output_product(const TileView<TX>& x, const TileView<TY>& y, const BlockProductTask& t, Range out_rows,
                           Range out_cols, std::unordered_map<std::uint64_t, W>& acc, ExecutionContext& ctx) {
    std::uint64_t count = 0;
    const Index width = out_cols.size();
    // Logical rows of Y restricted to (inner, cols), sorted by (p, j).
    std::vector<SparseEntry<W>> yrows;
    if (y.transposed) {
        y.for_each(t.inner, t.cols, [&](Index p, Index j, auto v) { yrows.push_back({p, j, static_cast<W>(v)}); });
        std::stable_sort(yrows.begin(), yrows.end(), [](const auto& a, const auto& b) { return a.row < b.row; });
    }
    x.for_each(t.rows, t.inner, [&](Index i, Index p, auto xv) {
        const W xw = static_cast<W>(xv);
        const std::uint64_t base = (i - out_rows.begin) * width;
        if (!y.transposed) {
            for_each_in_range(y.sparse(), Range{p, p + 1}, t.cols, [&](Index, Index j, TY yv) {
                acc[base + (j - out_cols.begin)] += xw * static_cast<W>(widen(yv));
                ++count;
            });
        } else {
            auto lo = std::lower_bound(yrows.begin(), yrows.end(), p, [](const auto& e, Index v) { return e.row < v; });
            for (; lo != yrows.end() && lo->row == p; ++lo) {
                acc[base + (lo->col - out_cols.begin)] += xw * lo->value;
                ++count;
            }
        }
    });
    ctx.multiply_adds() += count;
}

// Logical tiling helpers for a (possibly transposed) tiled matrix.
template <StorageScalar T>
const std::vector<Index>& logical_row_cuts(const TiledMatrix<T>& m) {
    return m.is_transposed() ? m.stored_partition().col_cuts : m.stored_partition().row_cuts;
}
template <StorageScalar T>
const std::vector<Index>& logical_col_cuts(const TiledMatrix<T>& m) {
    return m.is_transposed() ? m.stored_partition().row_cuts : m.stored_partition().col_cuts;
}
template <StorageScalar T>
std::pair<std::size_t, std::size_t> stored_tile(const TiledMatrix<T>& m, std::size_t a, std::size_t b) {
    return m.is_transposed() ? std::pair{b, a} : std::pair{a, b};
}

inline std::size_t tile_of(const std::vector<Index>& cuts, Index v) {
    return static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), v) - cuts.begin()) - 1;
}

}  // namespace detail

/// Z (+)= X * Y over Z's own partition. Every output element is summed in
/// ascending inner index regardless of how X, Y and Z are tiled, so the
/// result is bitwise independent of partitions and thread counts. A nonzero
/// `exponent` stores 2^exponent times the sum (exact rescaling that keeps
/// narrow storage formats in range).
template <StorageScalar TZ, StorageScalar TX, StorageScalar TY>
void multiply_into(const TiledMatrix<TX>& X, const TiledMatrix<TY>& Y, TiledMatrix<TZ>& Z, bool accumulate = false,
                   int exponent = 0) {
    using W = working_t<TX, TY>;
    if (X.cols() != Y.rows()) throw DimensionError("inner dimensions differ");
    if (Z.rows() != X.rows() || Z.cols() != Y.cols() || Z.is_transposed())
        throw DimensionError("output shape does not match product");
    const bool sparse_out = X.is_sparse() && Y.is_sparse();
    if (sparse_out != Z.is_sparse()) throw DimensionError("output density does not match operand densities");
    ExecutionContext& ctx = *Z.context();
    const bool same_storage = X.storage_key() == Y.storage_key();
    auto store = [exponent](W v) { return narrow<TZ>(exponent == 0 ? v : static_cast<W>(std::ldexp(v, exponent))); };

    // Inner segments: union of X's logical column cuts and Y's logical row cuts.
    std::vector<Index> ksegs;
    std::merge(detail::logical_col_cuts(X).begin(), detail::logical_col_cuts(X).end(),
               detail::logical_row_cuts(Y).begin(), detail::logical_row_cuts(Y).end(), std::back_inserter(ksegs));
    ksegs.erase(std::unique(ksegs.begin(), ksegs.end()), ksegs.end());

    const auto& xr = detail::logical_row_cuts(X);
    const auto& yc = detail::logical_col_cuts(Y);
    const auto& zp = Z.stored_partition();

    for (std::size_t zi = 0; zi < zp.tile_rows(); ++zi)
        for (std::size_t zj = 0; zj < zp.tile_cols(); ++zj) {
            const auto [orows, ocols] = Z.tile_ranges(zi, zj);
            detail::DenseAcc<W> dacc{orows, ocols, {}};
            std::unordered_map<std::uint64_t, W> sacc;
            if (!sparse_out) {
                dacc.v.assign(orows.size() * ocols.size(), W{0});
                ctx.tracker().on_workspace(static_cast<std::int64_t>(dacc.v.size() * sizeof(W)));
                if (accumulate) {
                    const auto& zt = std::get<DenseBlock<TZ>>(Z.tile(zi, zj));
                    for (std::size_t e = 0; e < dacc.v.size(); ++e) dacc.v[e] = static_cast<W>(widen(zt.values[e]));
                }
            } else if (accumulate) {
                const auto& zt = std::get<SparseBlock<TZ>>(Z.tile(zi, zj));
                for (std::size_t e = 0; e < zt.nnz(); ++e)
                    sacc[(zt.row_idx[e] - orows.begin) * ocols.size() + (zt.col_idx[e] - ocols.begin)] =
                        static_cast<W>(widen(zt.values[e]));
            }

            const std::size_t a_lo = detail::tile_of(xr, orows.begin), a_hi = detail::tile_of(xr, orows.end - 1);
            const std::size_t b_lo = detail::tile_of(yc, ocols.begin), b_hi = detail::tile_of(yc, ocols.end - 1);
            for (std::size_t s = 0; s + 1 < ksegs.size(); ++s) {
                const Range inner{ksegs[s], ksegs[s + 1]};
                const std::size_t kx = detail::tile_of(detail::logical_col_cuts(X), inner.begin);
                const std::size_t ky = detail::tile_of(detail::logical_row_cuts(Y), inner.begin);
                for (std::size_t a = a_lo; a <= a_hi; ++a) {
                    const Range rows = Range{xr[a], xr[a + 1]}.intersect(orows);
                    const auto [xi, xj] = detail::stored_tile(X, a, kx);
                    if (X.is_sparse() && X.tile_nnz(xi, xj) == 0) continue;
                    const Block<TX>* xb = &X.tile(xi, xj);
                    Block<TX> xcopy;
                    detail::TileView<TX> xv{xb, X.is_transposed()};
                    if (X.is_sparse()) {
                        bool any = false;
                        xv.for_each(rows, inner, [&](Index, Index, auto) { any = true; });
                        if (!any) continue;
                    }
                    if (same_storage) {
                        xcopy = *xb;  // acquiring Y's tile may evict this one
                        xv.block = &xcopy;
                    }
                    for (std::size_t b = b_lo; b <= b_hi; ++b) {
                        const Range cols = Range{yc[b], yc[b + 1]}.intersect(ocols);
                        const auto [yi, yj] = detail::stored_tile(Y, ky, b);
                        if (Y.is_sparse() && Y.tile_nnz(yi, yj) == 0) continue;
                        detail::TileView<TY> yv{&Y.tile(yi, yj), Y.is_transposed()};
                        const BlockProductTask task{rows, inner, cols, true};
                        if (sparse_out) detail::sparse_output_product(xv, yv, task, orows, ocols, sacc, ctx);
                        else detail::dense_output_product(xv, yv, task, dacc, ctx);
                    }
                }
            }

            if (!sparse_out) {
                DenseBlock<TZ> out(orows, ocols);
                for (std::size_t e = 0; e < dacc.v.size(); ++e) out.values[e] = store(dacc.v[e]);
                ctx.tracker().on_workspace(-static_cast<std::int64_t>(dacc.v.size() * sizeof(W)));
                Z.put_tile(zi, zj, std::move(out));
            } else {
                std::vector<std::pair<std::uint64_t, W>> items(sacc.begin(), sacc.end());
                sacc.clear();
                std::sort(items.begin(), items.end(), [](const auto& p, const auto& q) { return p.first < q.first; });
                SparseBlock<TZ> out(orows, ocols, Z.descriptor().index_width());
                out.row_idx.reserve(items.size());
                out.col_idx.reserve(items.size());
                out.values.reserve(items.size());
                for (const auto& [key, v] : items)
                    out.push_back(orows.begin + key / ocols.size(), ocols.begin + key % ocols.size(), store(v));
                Z.put_tile(zi, zj, std::move(out));
            }
        }
}

/// Output matrix for X * Y, partitioned under the context's limit. Sparse
/// outputs are tiled for their worst-case fill.
template <StorageScalar TZ, StorageScalar TX, StorageScalar TY>
TiledMatrix<TZ> product_matrix(const TiledMatrix<TX>& X, const TiledMatrix<TY>& Y, std::uint32_t id,
                               MatrixRole role = MatrixRole::created) {
    const ContextPtr& ctx = X.context();
    const Index m = X.rows(), n = Y.cols();
    if (X.is_sparse() && Y.is_sparse()) {
        const IndexWidth w = required_index_width(m, n);
        MatrixDescriptor d(id, m, n, Density::sparse, precision_of<TZ>(), w);
        auto p = dense_partition(m, n, sizeof(TZ) + 2 * index_bytes(w), ctx->limit_for(role));
        return TiledMatrix<TZ>::with_partition(ctx, std::move(d), std::move(p), role);
    }
    return TiledMatrix<TZ>::zeros(ctx, id, m, n, role);
}

/// Z = X * Y as a new matrix with id `id`.
template <StorageScalar TZ, StorageScalar TX, StorageScalar TY>
TiledMatrix<TZ> block_multiply(const TiledMatrix<TX>& X, const TiledMatrix<TY>& Y, std::uint32_t id,
                               MatrixRole role = MatrixRole::created, int exponent = 0) {
    if (X.cols() != Y.rows()) throw DimensionError("inner dimensions differ");
    TiledMatrix<TZ> Z = product_matrix<TZ>(X, Y, id, role);
    multiply_into(X, Y, Z, false, exponent);
    return Z;
}

template <StorageScalar T>
TiledMatrix<T> block_multiply(const TiledMatrix<T>& X, const TiledMatrix<T>& Y, std::uint32_t id,
                              MatrixRole role = MatrixRole::created) {
    return block_multiply<T, T, T>(X, Y, id, role);
}

/// B^T B through the same block product path.
template <StorageScalar T>
TiledMatrix<T> gram(const TiledMatrix<T>& B, std::uint32_t id) {
    return block_multiply<T>(B.transposed(), B, id);
}

}  // namespace oocsvd
