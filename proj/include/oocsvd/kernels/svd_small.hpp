#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "../error.hpp"

namespace oocsvd {

/// In-core SVD A = U diag(S) V^T of a small row-major m x n matrix; thin,
/// k = min(m, n) singular triplets sorted non-increasing.
template <class W>
struct SmallSVDResult {
    std::size_t m = 0, n = 0, k = 0;
    std::vector<W> U;  // m x k
    std::vector<W> S;  // k
    std::vector<W> V;  // n x k
};

namespace detail {

template <class W>
struct Givens {
    W c = 1, s = 0, r = 0;
};

// c*y + s*z = r, -s*y + c*z = 0
template <class W>
Givens<W> givens(W y, W z) {
    Givens<W> g;
    g.r = std::hypot(y, z);
    if (g.r != W(0)) {
        g.c = y / g.r;
        g.s = z / g.r;
    } else {
        g.r = 0;
    }
    return g;
}

// Columns a, b of a row-major n-column matrix: a' = c a + s b, b' = -s a + c b.
template <class W>
void rotate_cols(std::vector<W>& M, std::size_t rows, std::size_t n, std::size_t a, std::size_t b, W c, W s) {
    for (std::size_t i = 0; i < rows; ++i) {
        W& x = M[i * n + a];
        W& y = M[i * n + b];
        const W t = c * x + s * y;
        y = -s * x + c * y;
        x = t;
    }
}

// Householder vector for x in place: returns tau and beta, x becomes v with v0 = 1.
template <class W>
std::pair<W, W> householder(std::span<W> x) {
    W tail = 0;
    for (std::size_t i = 1; i < x.size(); ++i) tail += x[i] * x[i];
    const W alpha = x[0];
    x[0] = 1;
    if (tail == W(0)) return {W(0), alpha};
    const W norm = std::sqrt(alpha * alpha + tail);
    const W beta = alpha >= W(0) ? -norm : norm;
    const W scale = W(1) / (alpha - beta);
    for (std::size_t i = 1; i < x.size(); ++i) x[i] *= scale;
    return {(beta - alpha) / beta, beta};
}

// Tall case m >= n, row-major input.
template <class W>
SmallSVDResult<W> svd_tall(std::vector<W> A, std::size_t m, std::size_t n) {
    SmallSVDResult<W> res;
    res.m = m;
    res.n = n;
    res.k = n;
    std::vector<W> d(n, 0), e(n > 0 ? n - 1 : 0, 0);
    std::vector<std::vector<W>> lv(n), rv(n);
    std::vector<W> ltau(n, 0), rtau(n, 0);
    std::vector<W> x;

    // Bidiagonalization A = U_B B V_B^T.
    for (std::size_t k = 0; k < n; ++k) {
        x.resize(m - k);
        for (std::size_t i = k; i < m; ++i) x[i - k] = A[i * n + k];
        auto [tl, bl] = householder<W>(x);
        d[k] = bl;
        ltau[k] = tl;
        lv[k] = x;
        if (tl != W(0))
            for (std::size_t j = k + 1; j < n; ++j) {
                W w = 0;
                for (std::size_t i = k; i < m; ++i) w += x[i - k] * A[i * n + j];
                w *= tl;
                for (std::size_t i = k; i < m; ++i) A[i * n + j] -= w * x[i - k];
            }
        if (k + 1 < n) {
            x.resize(n - k - 1);
            for (std::size_t j = k + 1; j < n; ++j) x[j - k - 1] = A[k * n + j];
            auto [tr, br] = householder<W>(x);
            e[k] = br;
            rtau[k] = tr;
            rv[k] = x;
            if (tr != W(0))
                for (std::size_t i = k + 1; i < m; ++i) {
                    W w = 0;
                    for (std::size_t j = k + 1; j < n; ++j) w += x[j - k - 1] * A[i * n + j];
                    w *= tr;
                    for (std::size_t j = k + 1; j < n; ++j) A[i * n + j] -= w * x[j - k - 1];
                }
        }
    }
    std::vector<W>& U = res.U;
    std::vector<W>& V = res.V;
    U.assign(m * n, W(0));
    V.assign(n * n, W(0));
    for (std::size_t i = 0; i < n; ++i) U[i * n + i] = V[i * n + i] = W(1);
    for (std::size_t k = n; k-- > 0;) {
        if (ltau[k] != W(0))
            for (std::size_t j = k; j < n; ++j) {
                W w = 0;
                for (std::size_t i = k; i < m; ++i) w += lv[k][i - k] * U[i * n + j];
                w *= ltau[k];
                for (std::size_t i = k; i < m; ++i) U[i * n + j] -= w * lv[k][i - k];
            }
        if (k + 1 < n && rtau[k] != W(0))
            for (std::size_t j = k + 1; j < n; ++j) {
                W w = 0;
                for (std::size_t i = k + 1; i < n; ++i) w += rv[k][i - k - 1] * V[i * n + j];
                w *= rtau[k];
                for (std::size_t i = k + 1; i < n; ++i) V[i * n + j] -= w * rv[k][i - k - 1];
            }
    }

    // Implicit-shift QR on the bidiagonal.
    const W eps = std::numeric_limits<W>::epsilon();
    W anorm = 0;
    for (std::size_t i = 0; i < n; ++i)
        anorm = std::max(anorm, std::abs(d[i]) + (i + 1 < n ? std::abs(e[i]) : W(0)));
    const std::size_t max_iter = 30 * std::max<std::size_t>(n, 1);
    std::size_t iter = 0;
    std::size_t end = n == 0 ? 0 : n - 1;
    while (end > 0) {
        for (std::size_t i = 0; i < end; ++i)
            if (std::abs(e[i]) <= eps * (std::abs(d[i]) + std::abs(d[i + 1]))) e[i] = 0;
        for (std::size_t i = 0; i <= end; ++i)
            if (std::abs(d[i]) <= eps * anorm) d[i] = 0;
        while (end > 0 && e[end - 1] == W(0)) --end;
        if (end == 0) break;
        std::size_t p = end - 1;
        while (p > 0 && e[p - 1] != W(0)) --p;
        if (++iter > max_iter) {
            W resid = 0;
            for (W v : e) resid = std::max(resid, std::abs(v));
            throw ConvergenceError("small SVD did not converge", static_cast<double>(resid));
        }

        // A zero on the diagonal decouples the block.
        std::size_t zero = end + 1;
        for (std::size_t i = p; i < end; ++i)
            if (d[i] == W(0)) {
                zero = i;
                break;
            }
        if (zero <= end) {
            const std::size_t i = zero;
            W f = e[i];
            e[i] = 0;
            for (std::size_t j = i + 1; j <= end && f != W(0); ++j) {
                auto g = givens(d[j], f);
                d[j] = g.r;
                if (j < end) {
                    f = -g.s * e[j];
                    e[j] = g.c * e[j];
                }
                rotate_cols(U, m, n, j, i, g.c, g.s);
            }
            continue;
        }
        if (d[end] == W(0)) {
            W f = e[end - 1];
            e[end - 1] = 0;
            for (std::size_t j = end; j-- > p && f != W(0);) {
                auto g = givens(d[j], f);
                d[j] = g.r;
                if (j > p) {
                    f = -g.s * e[j - 1];
                    e[j - 1] = g.c * e[j - 1];
                }
                rotate_cols(V, n, n, j, end, g.c, g.s);
            }
            continue;
        }

        // Wilkinson shift from the trailing 2x2 of B^T B.
        const W t11 = d[end - 1] * d[end - 1] + (end - 1 > p ? e[end - 2] * e[end - 2] : W(0));
        const W t12 = d[end - 1] * e[end - 1];
        const W t22 = d[end] * d[end] + e[end - 1] * e[end - 1];
        const W delta = (t11 - t22) / 2;
        const W denom = delta + (delta >= W(0) ? W(1) : W(-1)) * std::hypot(delta, t12);
        const W mu = denom == W(0) ? t22 : t22 - t12 * t12 / denom;
        W y = d[p] * d[p] - mu;
        W z = d[p] * e[p];
        for (std::size_t k = p; k < end; ++k) {
            auto g = givens(y, z);
            if (k > p) e[k - 1] = g.r;
            W f = g.c * d[k] + g.s * e[k];
            e[k] = -g.s * d[k] + g.c * e[k];
            W bulge = g.s * d[k + 1];
            d[k + 1] = g.c * d[k + 1];
            d[k] = f;
            rotate_cols(V, n, n, k, k + 1, g.c, g.s);

            g = givens(d[k], bulge);
            d[k] = g.r;
            f = g.c * e[k] + g.s * d[k + 1];
            d[k + 1] = -g.s * e[k] + g.c * d[k + 1];
            e[k] = f;
            rotate_cols(U, m, n, k, k + 1, g.c, g.s);
            if (k + 1 < end) {
                y = e[k];
                z = g.s * e[k + 1];
                e[k + 1] = g.c * e[k + 1];
            }
        }
    }

    // Positive values, non-increasing order.
    for (std::size_t j = 0; j < n; ++j)
        if (d[j] < W(0)) {
            d[j] = -d[j];
            for (std::size_t i = 0; i < n; ++i) V[i * n + j] = -V[i * n + j];
        }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
    res.S.resize(n);
    std::vector<W> U2(m * n), V2(n * n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t s = order[j];
        res.S[j] = d[s];
        for (std::size_t i = 0; i < m; ++i) U2[i * n + j] = U[i * n + s];
        for (std::size_t i = 0; i < n; ++i) V2[i * n + j] = V[i * n + s];
    }
    res.U = std::move(U2);
    res.V = std::move(V2);
    return res;
}

}  // namespace detail

/// Singular value decomposition of a small dense matrix (Golub-Kahan
/// bidiagonalization followed by implicit-shift QR). Each left singular
/// vector is signed so its largest-magnitude entry is positive.
template <class W>
SmallSVDResult<W> svd_small(std::span<const W> a, std::size_t m, std::size_t n) {
    if (a.size() != m * n) throw DimensionError("svd_small: value count does not match shape");
    SmallSVDResult<W> res;
    if (m >= n) {
        res = detail::svd_tall(std::vector<W>(a.begin(), a.end()), m, n);
    } else {
        std::vector<W> t(n * m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
        auto r = detail::svd_tall(std::move(t), n, m);
        res.m = m;
        res.n = n;
        res.k = m;
        res.S = std::move(r.S);
        res.U = std::move(r.V);
        res.V = std::move(r.U);
    }
    const std::size_t k = res.k;
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < m; ++i)
            if (std::abs(res.U[i * k + j]) > std::abs(res.U[best * k + j])) best = i;
        if (res.U[best * k + j] < W(0)) {
            for (std::size_t i = 0; i < m; ++i) res.U[i * k + j] = -res.U[i * k + j];
            for (std::size_t i = 0; i < n; ++i) res.V[i * k + j] = -res.V[i * k + j];
        }
    }
    return res;
}

template <class W>
SmallSVDResult<W> svd_small(const std::vector<W>& a, std::size_t m, std::size_t n) {
    return svd_small(std::span<const W>(a), m, n);
}

}  // namespace oocsvd
