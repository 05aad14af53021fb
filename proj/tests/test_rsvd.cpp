#include <gtest/gtest.h>

#include <random>

#include "oocsvd/oocsvd.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace oocsvd;
using testutil::TempDir;

namespace {

ContextPtr context(const fs::path& wd, std::optional<std::uint64_t> per_matrix = std::nullopt) {
    MemoryBudget b;
    b.per_matrix = per_matrix;
    return ExecutionContext::make({wd, b, 1, true});
}

RsvdConfig config(std::size_t rank, std::optional<unsigned> q, std::uint64_t seed = 1) {
    RsvdConfig c;
    c.rank = rank;
    c.power = q;
    c.seed = seed;
    return c;
}

template <class T>
double reconstruction_error(const RsvdResult<T>& r, const oracle::Mat& a, std::size_t m, std::size_t n) {
    return oracle::rel_diff(oracle::reconstruct(r.U.gather(), r.S, r.V.gather(), m, n), a);
}

oracle::Mat exact_rank(std::mt19937_64& g, std::size_t m, std::size_t n, std::size_t r) {
    return oracle::multiply(oracle::gaussian(g, m, r), oracle::gaussian(g, r, n), m, r, n);
}

struct StopAt {
    std::uint32_t step;
};

}  // namespace

TEST(RandomizedSvd, IdentityFive) {
    auto ctx = ExecutionContext::in_core();
    oracle::Mat I(25, 0.0);
    for (int i = 0; i < 5; ++i) I[i * 6] = 1;
    auto res = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 5, 5, I), config(5, 0));
    for (double s : res.S) EXPECT_NEAR(s, 1.0, 1e-14);
    EXPECT_LE(oracle::frobenius(oracle::reconstruct(res.U.gather(), res.S, res.V.gather(), 5, 5)) -
                  oracle::frobenius(I),
              1e-12);
    EXPECT_LE(reconstruction_error(res, I, 5, 5) * oracle::frobenius(I), 1e-12);
}

TEST(RandomizedSvd, RankOne) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(2);
    const auto u = oracle::orthonormal(g, 60, 1), v = oracle::orthonormal(g, 40, 1);
    const auto a = oracle::reconstruct(u, {3.7}, v, 60, 40);
    auto res = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 60, 40, a), config(1, 0));
    ASSERT_EQ(res.S.size(), 1u);
    EXPECT_NEAR(res.S[0], 3.7, 1e-10);
    EXPECT_LE(reconstruction_error(res, a, 60, 40), 1e-10);
}

TEST(RandomizedSvd, ExactRankTenCaptured) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(3);
    const auto a = exact_rank(g, 300, 200, 10);
    auto res = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 300, 200, a), config(10, 0));
    EXPECT_LE(reconstruction_error(res, a, 300, 200), 1e-8);
    const auto ref = oracle::jacobi_singular_values(a, 300, 200);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(res.S[i], ref[i], 1e-8 * ref[0]);
    EXPECT_LE(oracle::orthogonality_error(res.U.gather(), 300, 10), 1e-10);
    EXPECT_LE(oracle::orthogonality_error(res.V.gather(), 200, 10), 1e-10);
}

TEST(RandomizedSvd, SparseInputAndWideShape) {
    TempDir dir("rsvd");
    std::mt19937_64 g(4);
    auto a = exact_rank(g, 40, 90, 4);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (i % 3 == 0) a[i] = 0;  // no longer low rank, but sparse
    auto ctx = context(dir.path(), 512);
    auto A = TiledMatrix<double>::from_triplets(ctx, 1, 40, 90, oracle::triplets_of(a, 40, 90));
    auto res = randomized_svd(A, config(40, 0));
    EXPECT_LE(reconstruction_error(res, a, 40, 90), 1e-10);  // full rank: exact
}

TEST(RandomizedSvd, RejectsInvalidConfig) {
    auto ctx = ExecutionContext::in_core();
    auto A = TiledMatrix<double>::zeros(ctx, 1, 5, 4);
    EXPECT_THROW(randomized_svd(A, config(0, 0)), DimensionError);
    EXPECT_THROW(randomized_svd(A, config(5, 0)), DimensionError);
    EXPECT_THROW(randomized_svd(A, config(2, 6)), DimensionError);
    auto clash = TiledMatrix<double>::zeros(ctx, pipeline_ids::Y, 5, 4);
    EXPECT_THROW(randomized_svd(clash, config(2, 0)), DimensionError);
}

TEST(RandomizedSvd, StageNamesPopulated) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(5);
    auto res = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 20, 10, oracle::gaussian(g, 20, 10)),
                              config(3, 1));
    std::vector<std::string> keys;
    for (const auto& [k, v] : res.stage_seconds) keys.push_back(k);
    std::vector<std::string> want(std::begin(kStageNames), std::end(kStageNames));
    std::sort(want.begin(), want.end());
    EXPECT_EQ(keys, want);
}

TEST(RandomizedSvd, BitwiseIndependentOfBudget) {
    std::mt19937_64 g(6);
    const std::size_t m = 48, n = 40;
    const auto a = oracle::with_spectrum(g, m, n, [] {
        std::vector<double> s;
        for (int k = 1; k <= 40; ++k) s.push_back(1.0 / k);
        return s;
    }());
    const std::uint64_t bytes = m * n * 8;
    std::vector<double> ref_s, ref_u;
    for (auto limit : {std::optional<std::uint64_t>{}, std::optional<std::uint64_t>{bytes / 2},
                       std::optional<std::uint64_t>{bytes / 4}, std::optional<std::uint64_t>{1024}}) {
        TempDir dir("rsvd");
        auto ctx = context(dir.path(), limit);
        auto res = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, m, n, a), config(6, 2));
        if (ref_s.empty()) {
            ref_s = res.S;
            ref_u = res.U.gather();
        }
        EXPECT_EQ(res.S, ref_s);
        EXPECT_EQ(res.U.gather(), ref_u);
        EXPECT_LE(oracle::orthogonality_error(res.U.gather(), m, 6), 1e-10);
        if (limit) {
            EXPECT_LE(ctx->tracker().max_matrix_peak(), *limit);
        }
    }
}

TEST(RandomizedSvd, ThreadCountDoesNotChangeResult) {
    std::mt19937_64 g(7);
    const auto a = oracle::gaussian(g, 64, 50);
    std::vector<double> ref;
    for (std::size_t threads : {1, 3}) {
        TempDir dir("rsvd");
        MemoryBudget b;
        b.per_matrix = 4096;
        auto ctx = ExecutionContext::make({dir.path(), b, threads, true, 1});
        auto res = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 64, 50, a), config(8, 1));
        if (ref.empty()) ref = res.S;
        EXPECT_EQ(res.S, ref);
    }
}

TEST(PowerApply, ZeroIsPlainProduct) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(8);
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 6, 5, oracle::gaussian(g, 6, 5));
    auto O = TiledMatrix<double>::from_dense(ctx, 2, 5, 2, oracle::gaussian(g, 5, 2));
    EXPECT_EQ(power_apply(A, O, 0, 3).gather(), block_multiply(A, O, 4).gather());
}

TEST(PowerApply, DiagonalCube) {
    auto ctx = ExecutionContext::in_core();
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 2, 2, oracle::Mat{2, 0, 0, 1});
    auto O = TiledMatrix<double>::from_dense(ctx, 2, 2, 2, oracle::Mat{1, 0, 0, 1});
    EXPECT_EQ(power_apply(A, O, 1, 3).gather(), (oracle::Mat{8, 0, 0, 1}));
}

TEST(PowerApply, MatchesNaiveRepeatedProducts) {
    TempDir dir("rsvd");
    std::mt19937_64 g(9);
    const auto a = oracle::gaussian(g, 40, 30), o = oracle::gaussian(g, 30, 4);
    auto ctx = context(dir.path(), 2048);
    auto Y = power_apply(TiledMatrix<double>::from_dense(ctx, 1, 40, 30, a),
                         TiledMatrix<double>::from_dense(ctx, 2, 30, 4, o), 2, 3);
    const auto at = oracle::transpose(a, 40, 30);
    auto y = oracle::multiply(a, o, 40, 30, 4);
    for (int i = 0; i < 2; ++i) y = oracle::multiply(a, oracle::multiply(at, y, 30, 40, 4), 40, 30, 4);
    EXPECT_LE(oracle::rel_diff(Y.gather(), y), 1e-10);
}

TEST(AutoQ, StoppingRule) {
    // flat spectrum: rho stays 1, stabilizes at q = 1
    EXPECT_FALSE(auto_q_stop({1.0}, 5, 1e-6));
    EXPECT_TRUE(auto_q_stop({1.0, 1.0}, 5, 1e-6));
    // threshold branch
    EXPECT_TRUE(auto_q_stop({1.0, 1e-7}, 5, 1e-6));
    // still changing
    EXPECT_FALSE(auto_q_stop({1.0, 0.5}, 5, 1e-6));
    EXPECT_FALSE(auto_q_stop({1.0, 0.5, 0.2}, 5, 1e-6));
    EXPECT_TRUE(auto_q_stop({1.0, 0.5, 0.25}, 5, 1e-6));
    // cap
    EXPECT_TRUE(auto_q_stop({1.0, 0.5, 0.2, 0.05}, 3, 1e-6));
    EXPECT_TRUE(auto_q_stop({1.0}, 0, 1e-6));
}

TEST(AutoQ, OrthogonalInputStopsAtOne) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(10);
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 30, 30, oracle::orthonormal(g, 30, 30));
    EXPECT_EQ(auto_select_q(A, 5, 5, 1e-6, 3), 1u);
}

TEST(AutoQ, ThresholdBranch) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(11);
    // sigma = 1e-4: nu_1 = 1e-8 nu_0 falls below tau nu_0 at the first application
    auto a = oracle::orthonormal(g, 20, 20);
    for (double& x : a) x *= 1e-4;
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 20, 20, a);
    EXPECT_EQ(auto_select_q(A, 4, 5, 1e-6, 3), 1u);
    auto res = randomized_svd(A, config(4, std::nullopt));
    EXPECT_EQ(res.chosen_q, 1u);
    ASSERT_EQ(res.nu.size(), 2u);
    EXPECT_LT(res.nu[1], 1e-6 * res.nu[0]);
}

TEST(AutoQ, PipelineAgreesWithSelector) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(12);
    std::vector<double> s;
    for (int k = 1; k <= 60; ++k) s.push_back(std::pow(k, -0.5));
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 80, 60, oracle::with_spectrum(g, 80, 60, s));
    auto res = randomized_svd(A, config(8, std::nullopt, 5));
    EXPECT_EQ(res.chosen_q, auto_select_q(A, 8, 5, 1e-6, 5));
    EXPECT_EQ(res.nu.size(), res.chosen_q + 1);
}

// Slow decay sigma_k = k^-1/2: the automatically chosen q does at least as
// well as every smaller q.
TEST(AutoQ, ChosenQBeatsSmallerQ) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(13);
    std::vector<double> s;
    for (int k = 1; k <= 256; ++k) s.push_back(1.0 / std::sqrt(k));
    const auto a = oracle::with_spectrum(g, 256, 256, s);
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 256, 256, a);
    auto chosen = randomized_svd(A, config(25, std::nullopt, 9));
    const double e_auto = reconstruction_error(chosen, a, 256, 256);
    for (unsigned q = 0; q < chosen.chosen_q; ++q) {
        auto res = randomized_svd(A, config(25, q, 9));
        EXPECT_LE(e_auto, reconstruction_error(res, a, 256, 256)) << "q " << q;
    }
}

TEST(GramPath, RecoversSingularValuesWithExponent) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(14);
    const auto a = oracle::with_spectrum(g, 50, 40, {5, 3, 2, 1});
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 50, 40, a);
    auto cfg = config(4, 2);
    cfg.gram_path = true;
    auto res = randomized_svd(A, cfg);
    const std::vector<double> want{5, 3, 2, 1};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(res.S[i], want[i], 1e-8);
}

TEST(HalfPipeline, CloseToDoubleWithoutPowerIteration) {
    TempDir dir("rsvd");
    std::mt19937_64 g(15);
    std::uniform_real_distribution<double> px(0, 255);
    oracle::Mat a(128 * 128);
    for (double& x : a) x = std::round(px(g));
    auto ctx = context(dir.path(), 4096);
    auto d = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 128, 128, a), config(20, 0));
    auto h = randomized_svd(TiledMatrix<Half>::from_dense(ctx, 2, 128, 128, a), config(20, 0));
    for (std::size_t i = 0; i < 20; ++i) EXPECT_LE(std::abs(h.S[i] - d.S[i]) / d.S[i], 5e-2) << i;
}

// Power iterates are stored at half precision, so directions weaker than
// 2^-11 of the leading one are lost; the leading value stays accurate.
TEST(HalfPipeline, LeadingValueSurvivesPowerIteration) {
    std::mt19937_64 g(16);
    std::uniform_real_distribution<double> px(0, 255);
    oracle::Mat a(128 * 128);
    for (double& x : a) x = std::round(px(g));
    auto ctx = ExecutionContext::in_core();
    auto d = randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 128, 128, a), config(20, 3));
    auto h = randomized_svd(TiledMatrix<Half>::from_dense(ctx, 2, 128, 128, a), config(20, 3));
    EXPECT_LE(std::abs(h.S[0] - d.S[0]) / d.S[0], 1e-3);
    for (double s : h.S) EXPECT_TRUE(std::isfinite(s));
}

TEST(FloatPipeline, HighPowerStaysFinite) {
    std::mt19937_64 g(17);
    std::uniform_real_distribution<double> px(0, 255);
    oracle::Mat a(128 * 128);
    for (double& x : a) x = std::round(px(g));
    auto ctx = ExecutionContext::in_core();
    auto A = TiledMatrix<float>::from_dense(ctx, 1, 128, 128, a);
    for (unsigned q = 0; q <= 5; ++q) {
        auto res = randomized_svd(A, config(20, q));
        for (double s : res.S) EXPECT_TRUE(std::isfinite(s)) << q;
        EXPECT_LE(oracle::orthogonality_error(res.U.gather(), 128, 20), 1e-3) << q;
    }
}

TEST(Resume, EveryStepBoundaryIsBitwiseIdentical) {
    std::mt19937_64 g(16);
    const auto a = oracle::gaussian(g, 30, 24);
    auto run_full = [&](const fs::path& wd) {
        auto ctx = context(wd, 1024);
        return randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 30, 24, a), config(5, 2, 4));
    };
    TempDir ref_dir("resume");
    const auto ref = run_full(ref_dir.path());
    const auto ref_u = ref.U.gather(), ref_v = ref.V.gather();
    const std::uint32_t steps = RsvdRun<double>::step_count(2);
    for (std::uint32_t k = 0; k < steps; ++k) {
        TempDir dir("resume");
        {
            auto ctx = context(dir.path(), 1024);
            auto cfg = config(5, 2, 4);
            cfg.after_step = [k](std::uint32_t s) {
                if (s == k) throw StopAt{s};
            };
            EXPECT_THROW(randomized_svd(TiledMatrix<double>::from_dense(ctx, 1, 30, 24, a), cfg), StopAt);
        }
        auto ctx = context(dir.path(), 1024);
        auto res = resume<double>(ctx, config(5, 2, 4));
        EXPECT_EQ(res.S, ref.S) << "stopped after step " << k;
        EXPECT_EQ(res.U.gather(), ref_u) << k;
        EXPECT_EQ(res.V.gather(), ref_v) << k;
    }
}

TEST(Resume, AutoQPlanResumes) {
    std::mt19937_64 g(17);
    std::vector<double> s;
    for (int k = 1; k <= 24; ++k) s.push_back(1.0 / k);
    const auto a = oracle::with_spectrum(g, 30, 24, s);
    TempDir ref_dir("resume");
    auto ref = randomized_svd(TiledMatrix<double>::from_dense(context(ref_dir.path()), 1, 30, 24, a),
                              config(4, std::nullopt));
    const std::uint32_t steps = RsvdRun<double>::step_count(ref.chosen_q);
    for (std::uint32_t k = 0; k + 1 < steps; k += 2) {
        TempDir dir("resume");
        auto cfg = config(4, std::nullopt);
        cfg.after_step = [k](std::uint32_t st) {
            if (st == k) throw StopAt{st};
        };
        EXPECT_THROW(randomized_svd(TiledMatrix<double>::from_dense(context(dir.path()), 1, 30, 24, a), cfg), StopAt);
        auto res = resume<double>(context(dir.path()), config(4, std::nullopt));
        EXPECT_EQ(res.S, ref.S) << k;
        EXPECT_EQ(res.chosen_q, ref.chosen_q);
    }
}

TEST(Resume, ConfigMismatchAndMissingPlan) {
    std::mt19937_64 g(18);
    const auto a = oracle::gaussian(g, 20, 15);
    TempDir dir("resume");
    {
        auto cfg = config(3, 1);
        cfg.after_step = [](std::uint32_t s) {
            if (s == 2) throw StopAt{s};
        };
        EXPECT_THROW(randomized_svd(TiledMatrix<double>::from_dense(context(dir.path()), 1, 20, 15, a), cfg), StopAt);
    }
    EXPECT_THROW(resume<double>(context(dir.path()), config(4, 1)), ConfigMismatch);
    EXPECT_THROW(resume<double>(context(dir.path()), config(3, 1, 2)), ConfigMismatch);
    EXPECT_THROW(resume<float>(context(dir.path()), config(3, 1)), ConfigMismatch);
    EXPECT_THROW(resume<double>(context(dir.path(), 512), config(3, 1)), ConfigMismatch);
    TempDir empty("resume");
    EXPECT_THROW(resume<double>(context(empty.path()), config(3, 1)), NoPlanError);
    EXPECT_THROW(resume<double>(ExecutionContext::in_core(), config(3, 1)), NoPlanError);
}

TEST(Resume, CorruptStepOutputIsRecomputed) {
    std::mt19937_64 g(19);
    const auto a = oracle::gaussian(g, 25, 20);
    TempDir dir("resume");
    auto ref = randomized_svd(TiledMatrix<double>::from_dense(context(dir.path()), 1, 25, 20, a), config(4, 1));
    // damage the orthogonalization output
    BlockStore store(dir.path());
    const fs::path blk = store.block_path({pipeline_ids::Q, 0, 0});
    std::string bytes = testutil::slurp(blk);
    bytes[bytes.size() - 3] ^= 0x11;
    testutil::spit(blk, bytes);
    auto res = resume<double>(context(dir.path()), config(4, 1));
    EXPECT_EQ(res.S, ref.S);
}

TEST(Resume, CompletePlanIsIdempotent) {
    std::mt19937_64 g(20);
    const auto a = oracle::gaussian(g, 16, 12);
    TempDir dir("resume");
    auto ref = randomized_svd(TiledMatrix<double>::from_dense(context(dir.path()), 1, 16, 12, a), config(3, 1));
    auto again = resume<double>(context(dir.path()), config(3, 1));
    EXPECT_EQ(again.S, ref.S);
    EXPECT_EQ(again.U.gather(), ref.U.gather());
}

TEST(FullSvd, Diagonal) {
    auto ctx = ExecutionContext::in_core();
    oracle::Mat d(16, 0.0);
    for (int i = 0; i < 4; ++i) d[i * 5] = 4 - i;
    auto res = full_svd(TiledMatrix<double>::from_dense(ctx, 1, 4, 4, d), 2, 3);
    EXPECT_EQ(res.S, (std::vector<double>{4, 3, 2, 1}));
}

TEST(FullSvd, MatchesJacobiAndTransposeSymmetry) {
    auto ctx = ExecutionContext::in_core();
    std::mt19937_64 g(21);
    const auto a = oracle::gaussian(g, 12, 9);
    auto A = TiledMatrix<double>::from_dense(ctx, 1, 12, 9, a);
    auto res = full_svd(A, 2, 3);
    const auto ref = oracle::jacobi_singular_values(a, 12, 9);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_LE(std::abs(res.S[i] - ref[i]) / ref[0], 1e-10);
    EXPECT_LE(reconstruction_error(res, a, 12, 9), 1e-13);
    auto At = TiledMatrix<double>::from_dense(ctx, 4, 9, 12, oracle::transpose(a, 12, 9));
    auto rt = full_svd(At, 5, 6);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(rt.S[i], res.S[i], 1e-13 * res.S[0]);
    EXPECT_LE(reconstruction_error(rt, oracle::transpose(a, 12, 9), 9, 12), 1e-13);
    EXPECT_LE(oracle::orthogonality_error(rt.V.gather(), 12, 9), 1e-12);
}

TEST(FullSvd, OutOfCoreAgreesWithInCore) {
    TempDir dir("full");
    std::mt19937_64 g(22);
    const auto a = oracle::gaussian(g, 30, 20);
    auto in = full_svd(TiledMatrix<double>::from_dense(ExecutionContext::in_core(), 1, 30, 20, a), 2, 3);
    auto ctx = context(dir.path(), 512);
    auto out = full_svd(TiledMatrix<double>::from_dense(ctx, 1, 30, 20, a), 2, 3);
    EXPECT_EQ(in.S, out.S);
    EXPECT_LE(ctx->tracker().max_matrix_peak(), 512u);
}
