#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tile_ops.hpp"

namespace oocsvd {

template <StorageScalar T>
struct QRResult {
    TiledMatrix<T> Q;         // m x r, orthonormal columns
    std::vector<double> R;    // r x r row-major, upper triangular, diag >= 0
    std::size_t r = 0;
    bool rank_deficient = false;
};

namespace detail {

/// Householder reflector for x = (alpha, tail): H x = beta e1, H = I - tau v v^T
/// with v(0) = 1. `tail_sumsq` is the sum of squares of the tail.
template <class W>
struct Reflector {
    W tau = 0, beta = 0, scale = 0;  // v_i = x_i * scale for the tail
};

template <class W>
Reflector<W> make_reflector(W alpha, W tail_sumsq) {
    Reflector<W> h;
    if (tail_sumsq == W(0)) {
        h.beta = alpha;
        return h;
    }
    const W norm = std::sqrt(alpha * alpha + tail_sumsq);
    h.beta = alpha >= W(0) ? -norm : norm;
    h.tau = (h.beta - alpha) / h.beta;
    h.scale = W(1) / (alpha - h.beta);
    return h;
}

// Applies one reflector, whose vector occupies column k of V (rows >= k,
// implicit 1 at row k), to columns [k0, cols) of M. Both share the row
// partition.
template <class W>
void apply_reflector(TiledMatrix<W>& V, TiledMatrix<W>& M, Index k, Index k0, W tau) {
    const auto& pv = V.stored_partition();
    const auto& pm = M.stored_partition();
    const Index cols = M.cols();
    if (tau == W(0) || k0 >= cols) return;
    const std::size_t tkv = pv.col_tile_of(k);
    const std::size_t tj0 = pm.col_tile_of(k0);
    std::vector<W> w(cols - k0, W(0));
    std::vector<W> seg;
    auto load_seg = [&](std::size_t ti) {
        const auto& vb = std::get<DenseBlock<W>>(V.tile(ti, tkv));
        const Index r0 = std::max<Index>(vb.rows.begin, k);
        seg.assign(vb.rows.end - r0, W(0));
        for (Index i = r0; i < vb.rows.end; ++i) seg[i - r0] = i == k ? W(1) : vb.at(i, k);
        return r0;
    };
    const std::size_t ti0 = pv.row_tile_of(k);
    for (std::size_t ti = ti0; ti < pv.tile_rows(); ++ti) {
        const Index r0 = load_seg(ti);
        for (std::size_t tj = tj0; tj < pm.tile_cols(); ++tj) {
            const auto& mb = std::get<DenseBlock<W>>(M.tile(ti, tj));
            const Index c0 = std::max(mb.cols.begin, k0);
            for (Index i = r0; i < mb.rows.end; ++i) {
                const W v = seg[i - r0];
                for (Index j = c0; j < mb.cols.end; ++j) w[j - k0] += v * mb.at(i, j);
            }
        }
    }
    for (W& x : w) x *= tau;
    for (std::size_t ti = ti0; ti < pv.tile_rows(); ++ti) {
        const Index r0 = load_seg(ti);
        for (std::size_t tj = tj0; tj < pm.tile_cols(); ++tj) {
            auto& mb = M.dense_tile(ti, tj);
            const Index c0 = std::max(mb.cols.begin, k0);
            for (Index i = r0; i < mb.rows.end; ++i) {
                const W v = seg[i - r0];
                for (Index j = c0; j < mb.cols.end; ++j) mb.at(i, j) -= v * w[j - k0];
            }
        }
    }
}

}  // namespace detail

/// Thin QR of a tall matrix (any density or view) by Householder reflections streamed over
/// tiles. Each inner product runs in ascending row order, so the result does
/// not depend on the partition. Columns of Q are signed so diag(R) >= 0.
template <StorageScalar T>
QRResult<T> thin_qr(const TiledMatrix<T>& Y, std::uint32_t q_id, MatrixRole role = MatrixRole::created) {
    using W = compute_t<T>;
    const Index m = Y.rows(), r = Y.cols();
    if (m < r) throw DimensionError("thin_qr expects rows >= cols");
    const ContextPtr& ctx = Y.context();

    auto A = TiledMatrix<W>::zeros(ctx, ctx->allocate_temp_id(), m, r, MatrixRole::created);
    A.set_temporary(true);
    convert_copy(Y, A);
    const double ynorm = frobenius_norm(Y);

    const auto& pa = A.stored_partition();
    std::vector<W> taus(r, W(0));
    QRResult<T> out;
    out.r = r;
    out.R.assign(r * r, 0.0);

    for (Index k = 0; k < r; ++k) {
        const std::size_t tk = pa.col_tile_of(k);
        const std::size_t ti0 = pa.row_tile_of(k);
        W alpha = 0, tail = 0;
        for (std::size_t ti = ti0; ti < pa.tile_rows(); ++ti) {
            const auto& b = std::get<DenseBlock<W>>(A.tile(ti, tk));
            for (Index i = std::max(b.rows.begin, k); i < b.rows.end; ++i) {
                const W x = b.at(i, k);
                if (i == k) alpha = x;
                else tail += x * x;
            }
        }
        const auto h = detail::make_reflector(alpha, tail);
        taus[k] = h.tau;
        for (std::size_t ti = ti0; ti < pa.tile_rows(); ++ti) {
            auto& b = A.dense_tile(ti, tk);
            for (Index i = std::max(b.rows.begin, k); i < b.rows.end; ++i)
                b.at(i, k) = i == k ? h.beta : (h.tau == W(0) ? W(0) : b.at(i, k) * h.scale);
        }
        if (std::abs(static_cast<double>(h.beta)) <=
            static_cast<double>(std::numeric_limits<W>::epsilon()) * std::max(1.0, ynorm) * static_cast<double>(m))
            out.rank_deficient = true;
        detail::apply_reflector(A, A, k, k + 1, h.tau);
    }

    // R from the upper triangle; rows of A above the diagonal are final.
    for (std::size_t ti = 0; ti < pa.tile_rows() && pa.row_cuts[ti] < r; ++ti)
        for (std::size_t tj = 0; tj < pa.tile_cols(); ++tj) {
            const auto& b = std::get<DenseBlock<W>>(A.tile(ti, tj));
            for (Index i = b.rows.begin; i < std::min<Index>(b.rows.end, r); ++i)
                for (Index j = std::max(b.cols.begin, i); j < b.cols.end; ++j)
                    out.R[i * r + j] = static_cast<double>(b.at(i, j));
        }
    std::vector<bool> flip(r, false);
    for (Index k = 0; k < r; ++k)
        if (out.R[k * r + k] < 0) {
            flip[k] = true;
            for (Index j = k; j < r; ++j) out.R[k * r + j] = -out.R[k * r + j];
        }

    // Q = H_0 ... H_{r-1} [I; 0], accumulated backwards.
    auto Qw = identity_like<W>(ctx, std::is_same_v<W, T> ? q_id : ctx->allocate_temp_id(), m, r, &pa,
                               std::is_same_v<W, T> ? role : MatrixRole::created);
    for (Index k = r; k-- > 0;) detail::apply_reflector(A, Qw, k, k, taus[k]);
    A = TiledMatrix<W>();

    auto sign = [&](Index, Index j, auto v) { return flip[j] ? -v : v; };
    if constexpr (std::is_same_v<W, T>) {
        for_each_dense_tile(Qw, [&](DenseBlock<W>& b) {
            for (Index i = b.rows.begin; i < b.rows.end; ++i)
                for (Index j = b.cols.begin; j < b.cols.end; ++j) b.at(i, j) = sign(i, j, b.at(i, j));
        });
        out.Q = std::move(Qw);
    } else {
        Qw.set_temporary(true);
        out.Q = TiledMatrix<T>::zeros(ctx, q_id, m, r, role);
        convert_copy(Qw, out.Q, sign);
    }
    return out;
}

}  // namespace oocsvd
