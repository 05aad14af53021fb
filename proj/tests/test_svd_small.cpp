#include <gtest/gtest.h>

#include <random>

#include "oocsvd/kernels/svd_small.hpp"
#include "oracles.hpp"

using namespace oocsvd;

namespace {

double max_rel_sv_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    const double scale = std::max(a.empty() ? 0.0 : a[0], 1e-300);
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]) / scale);
    return d;
}

void check_invariants(const SmallSVDResult<double>& r, const oracle::Mat& a, std::size_t m, std::size_t n) {
    const std::size_t k = std::min(m, n);
    ASSERT_EQ(r.S.size(), k);
    for (std::size_t i = 0; i < k; ++i) {
        EXPECT_GE(r.S[i], 0.0);
        if (i > 0) {
            EXPECT_LE(r.S[i], r.S[i - 1]);
        }
    }
    EXPECT_LE(oracle::orthogonality_error(r.U, m, k), 1e-12);
    EXPECT_LE(oracle::orthogonality_error(r.V, n, k), 1e-12);
    EXPECT_LE(oracle::rel_diff(oracle::reconstruct(r.U, r.S, r.V, m, n), a), 1e-13);
}

}  // namespace

TEST(SvdSmall, Diagonal) {
    const oracle::Mat b{3, 0, 0, 0, 2, 0, 0, 0, 1};
    const auto r = svd_small(b, 3, 3);
    EXPECT_EQ(r.S, (std::vector<double>{3, 2, 1}));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_EQ(std::abs(r.U[i * 3 + j]), i == j ? 1.0 : 0.0);
            EXPECT_EQ(std::abs(r.V[i * 3 + j]), i == j ? 1.0 : 0.0);
        }
}

TEST(SvdSmall, Permutation) {
    const auto r = svd_small(oracle::Mat{0, 1, 1, 0}, 2, 2);
    EXPECT_NEAR(r.S[0], 1.0, 1e-15);
    EXPECT_NEAR(r.S[1], 1.0, 1e-15);
}

TEST(SvdSmall, WideRandomAgainstJacobi) {
    std::mt19937_64 g(1);
    const auto b = oracle::gaussian(g, 20, 60);
    const auto r = svd_small(b, 20, 60);
    check_invariants(r, b, 20, 60);
    EXPECT_LE(max_rel_sv_diff(r.S, oracle::jacobi_singular_values(b, 20, 60)), 1e-10);
}

TEST(SvdSmall, SignConvention) {
    std::mt19937_64 g(2);
    const auto b = oracle::gaussian(g, 9, 7);
    const auto r = svd_small(b, 9, 7);
    for (std::size_t j = 0; j < 7; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 9; ++i)
            if (std::abs(r.U[i * 7 + j]) > std::abs(r.U[best * 7 + j])) best = i;
        EXPECT_GT(r.U[best * 7 + j], 0.0);
    }
}

TEST(SvdSmall, RandomShapesProperty) {
    std::mt19937_64 g(3);
    for (int t = 0; t < 150; ++t) {
        const std::size_t m = 1 + g() % 25, n = 1 + g() % 25;
        oracle::Mat a;
        switch (t % 3) {
            case 0: a = oracle::gaussian(g, m, n); break;
            case 1: a = oracle::sparse_pattern(g, m, n, 0.2); break;
            default: {
                // repeated and zero singular values
                const std::size_t k = std::min(m, n);
                std::vector<double> s(k, 1.0);
                for (std::size_t i = k / 2; i < k; ++i) s[i] = 0.0;
                a = oracle::with_spectrum(g, m, n, s);
            }
        }
        const auto r = svd_small(a, m, n);
        check_invariants(r, a, m, n);
        EXPECT_LE(max_rel_sv_diff(r.S, oracle::jacobi_singular_values(a, m, n)), 1e-10) << m << "x" << n;
    }
}

TEST(SvdSmall, OrthogonalInvariance) {
    std::mt19937_64 g(4);
    for (int t = 0; t < 20; ++t) {
        const std::size_t m = 2 + g() % 15, n = 2 + g() % 15;
        const auto b = oracle::gaussian(g, m, n);
        const auto w = oracle::orthonormal(g, m, m), z = oracle::orthonormal(g, n, n);
        const auto rotated = oracle::multiply(oracle::multiply(w, b, m, m, n), z, m, n, n);
        EXPECT_LE(max_rel_sv_diff(svd_small(rotated, m, n).S, svd_small(b, m, n).S), 1e-10);
    }
}

TEST(SvdSmall, ZeroMatrix) {
    const auto r = svd_small(oracle::Mat(12, 0.0), 4, 3);
    EXPECT_EQ(r.S, (std::vector<double>{0, 0, 0}));
    EXPECT_LE(oracle::orthogonality_error(r.U, 4, 3), 1e-15);
}

TEST(SvdSmall, SinglePrecision) {
    std::mt19937_64 g(5);
    const auto b = oracle::gaussian(g, 10, 14);
    std::vector<float> f(b.begin(), b.end());
    const auto r = svd_small(f, 10, 14);
    const auto ref = oracle::jacobi_singular_values(b, 10, 14);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(r.S[i], ref[i], 1e-4 * ref[0]);
}

TEST(SvdSmall, ShapeMismatch) {
    EXPECT_THROW(svd_small(oracle::Mat(5, 1.0), 2, 3), DimensionError);
}
