#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>
#include <set>

#include "oocsvd/planner.hpp"

using namespace oocsvd;

namespace {

MatrixDescriptor dense(Index r, Index c, Precision p = Precision::double_) {
    return MatrixDescriptor(1, r, c, Density::dense, p);
}

MatrixDescriptor sparse(Index r, Index c, Index nnz, Precision p = Precision::double_) {
    MatrixDescriptor d(2, r, c, Density::sparse, p);
    d.set_nnz(nnz);
    return d;
}

std::uint64_t max_tile_bytes(const BlockPartition& p, std::size_t scalar) {
    return p.max_tile_rows() * p.max_tile_cols() * scalar;
}

// Exhaustive minimum over all parenthesizations, costed with estimate_product.
std::pair<std::uint64_t, MatrixDescriptor> exhaustive(const std::vector<MatrixDescriptor>& c, std::size_t i,
                                                      std::size_t j) {
    if (i == j) return {0, c[i]};
    std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
    MatrixDescriptor out;
    for (std::size_t s = i; s < j; ++s) {
        auto [lc, ld] = exhaustive(c, i, s);
        auto [rc, rd] = exhaustive(c, s + 1, j);
        const std::uint64_t total = lc + rc + estimate_product(ld, rd).multiply_adds;
        if (total < best) {
            best = total;
            out = product_descriptor(ld, rd);
        }
    }
    return {best, out};
}

}  // namespace

TEST(EstimateProduct, DenseDense) {
    const auto c = estimate_product(dense(2, 3), dense(3, 4));
    EXPECT_EQ(c.multiply_adds, 24u);
    EXPECT_EQ(c.output_scalars, 8u);
    EXPECT_EQ(c.output_bytes, 64u);
    EXPECT_EQ(c.exactness, Exactness::exact);
}

TEST(EstimateProduct, SparseDense) {
    const auto c = estimate_product(sparse(3, 3, 5), dense(3, 4));
    EXPECT_EQ(c.multiply_adds, 20u);
    EXPECT_EQ(c.exactness, Exactness::exact);
    const auto d = estimate_product(dense(4, 3), sparse(3, 3, 5));
    EXPECT_EQ(d.multiply_adds, 20u);
}

TEST(EstimateProduct, SparseSparseIsUpperBound) {
    const auto c = estimate_product(sparse(10, 20, 7), sparse(20, 30, 9));
    EXPECT_EQ(c.exactness, Exactness::upper_bound);
    EXPECT_EQ(c.multiply_adds, std::min<std::uint64_t>({7 * 30, 9 * 10, 10 * 20 * 30}));
    EXPECT_EQ(c.output_scalars, std::min<std::uint64_t>(300, 63));
}

TEST(EstimateProduct, ShapeMismatch) {
    EXPECT_THROW(estimate_product(dense(2, 3), dense(4, 2)), DimensionError);
}

TEST(EstimateProduct, TransposedViewsUseLogicalShape) {
    const auto c = estimate_product(transpose_view(dense(3, 2)), dense(3, 4));
    EXPECT_EQ(c.multiply_adds, 24u);
}

TEST(ChooseAssociation, TextbookChain) {
    const std::vector<MatrixDescriptor> chain{dense(10, 100), dense(100, 5), dense(5, 50)};
    const auto o = choose_association(chain);
    EXPECT_EQ(o.total_multiply_adds, 7500u);
    EXPECT_EQ(o.to_string(), "((0 1) 2)");
}

TEST(ChooseAssociation, LengthTwoHasOneTree) {
    const std::vector<MatrixDescriptor> chain{dense(3, 4), dense(4, 5)};
    const auto o = choose_association(chain);
    EXPECT_EQ(o.to_string(), "(0 1)");
    EXPECT_EQ(o.total_multiply_adds, 60u);
}

TEST(ChooseAssociation, TiesGoRight) {
    // Square chain: both trees cost the same.
    const std::vector<MatrixDescriptor> chain{dense(4, 4), dense(4, 4), dense(4, 4)};
    EXPECT_EQ(choose_association(chain).to_string(), "(0 (1 2))");
}

TEST(ChooseAssociation, IncompatibleChain) {
    const std::vector<MatrixDescriptor> chain{dense(3, 4), dense(5, 5)};
    EXPECT_THROW(choose_association(chain), DimensionError);
    EXPECT_THROW(choose_association(std::span<const MatrixDescriptor>(chain.data(), 1)), DimensionError);
}

TEST(ChooseAssociation, MatchesExhaustiveSearch) {
    std::mt19937_64 g(12);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t k = 2 + g() % 5;
        std::vector<Index> dims(k + 1);
        for (auto& d : dims) d = 1 + g() % 60;
        std::vector<MatrixDescriptor> chain;
        for (std::size_t i = 0; i < k; ++i) {
            if (g() % 3 == 0) chain.push_back(sparse(dims[i], dims[i + 1], g() % (dims[i] * dims[i + 1] + 1)));
            else chain.push_back(dense(dims[i], dims[i + 1]));
        }
        EXPECT_EQ(choose_association(chain).total_multiply_adds, exhaustive(chain, 0, k - 1).first);
    }
}

TEST(PartitionForBudget, ThousandSquareAtTwoMegabytes) {
    MemoryBudget b;
    b.per_matrix = 2u << 20;
    const auto p = partition_for_budget(dense(1000, 1000), b);
    EXPECT_EQ(p.row_cuts, (std::vector<Index>{0, 500, 1000}));
    EXPECT_EQ(p.col_cuts, (std::vector<Index>{0, 500, 1000}));
    EXPECT_EQ(max_tile_bytes(p, 8), 2000000u);
}

TEST(PartitionForBudget, UnlimitedIsOneTile) {
    EXPECT_EQ(partition_for_budget(dense(12345, 77), MemoryBudget{}).tile_count(), 1u);
    EXPECT_EQ(partition_for_budget(sparse(1u << 20, 1u << 20, 1000), MemoryBudget{}).tile_count(), 1u);
}

TEST(PartitionForBudget, FallbackChain) {
    MemoryBudget b;
    EXPECT_FALSE(b.effective_per_matrix());
    b.global = 300;
    EXPECT_EQ(b.effective_per_matrix(), 300u);
    b.new_matrix = 200;
    EXPECT_EQ(b.effective_per_matrix(), 200u);
    b.per_matrix = 100;
    EXPECT_EQ(b.effective_per_matrix(), 100u);
    EXPECT_EQ(b.effective_new_matrix(), 200u);
}

TEST(PartitionForBudget, RefinesToSingleScalars) {
    MemoryBudget b;
    b.per_matrix = 8;
    const auto p = partition_for_budget(dense(5, 3), b);
    EXPECT_EQ(p.tile_count(), 15u);
    b.per_matrix = 7;
    EXPECT_THROW(partition_for_budget(dense(5, 3), b), BudgetError);
}

// Max tile fits, and no uniform grid with fewer tiles fits.
TEST(PartitionForBudget, MinimalAndMonotone) {
    std::mt19937_64 g(13);
    for (int trial = 0; trial < 300; ++trial) {
        const Index r = 1 + g() % 60, c = 1 + g() % 60;
        const std::size_t s = std::size_t{1} << (1 + g() % 3);
        const std::uint64_t lim = s * (1 + g() % (r * c));
        const auto p = dense_partition(r, c, s, lim);
        ASSERT_LE(max_tile_bytes(p, s), lim);
        std::uint64_t fewest = std::numeric_limits<std::uint64_t>::max();
        for (Index gr = 1; gr <= r; ++gr)
            for (Index gc = 1; gc <= c; ++gc)
                if (max_tile_bytes(BlockPartition::uniform(r, c, gr, gc), s) <= lim) fewest = std::min(fewest, gr * gc);
        EXPECT_EQ(p.tile_count(), fewest) << r << "x" << c << " limit " << lim;
        const auto q = dense_partition(r, c, s, std::max<std::uint64_t>(s, lim / 2));
        EXPECT_GE(q.tile_count(), p.tile_count());
    }
}

TEST(PartitionForBudget, SparseTilesFit) {
    std::mt19937_64 g(14);
    for (int trial = 0; trial < 50; ++trial) {
        const Index r = 1 + g() % 200, c = 1 + g() % 200;
        std::set<std::pair<Index, Index>> cells;  // distinct, as after assembly
        for (int k = 0, n = 1 + static_cast<int>(g() % 2000); k < n; ++k) cells.insert({g() % r, g() % c});
        std::vector<Index> ri, ci;
        for (auto [i, j] : cells) {
            ri.push_back(i);
            ci.push_back(j);
        }
        const std::size_t eb = 16;
        const std::uint64_t lim = eb * (1 + g() % 100);
        const auto p = sparse_partition(r, c, ri, ci, eb, lim);
        std::map<std::size_t, std::uint64_t> count;
        for (std::size_t e = 0; e < ri.size(); ++e) ++count[p.row_tile_of(ri[e]) * p.tile_cols() + p.col_tile_of(ci[e])];
        for (auto [t, n] : count) EXPECT_LE(n * eb, lim);
    }
}

TEST(ChooseThreads, Clamping) {
    CostEstimate c;
    c.multiply_adds = 10;
    EXPECT_EQ(choose_threads(c, 16, 100000), 1u);
    c.multiply_adds = 1000000000;
    EXPECT_EQ(choose_threads(c, 16, 100000), 16u);
    c.multiply_adds = 320000;
    EXPECT_EQ(choose_threads(c, 16, 100000), 3u);
}

TEST(ResidencyCheck, EverythingFits) {
    std::vector<ResidencyStep> plan{{{{1, 100}, {2, 100}}}, {{{3, 100}}}};
    EXPECT_TRUE(residency_check(plan, 1000).empty());
    EXPECT_TRUE(residency_check(plan, std::nullopt).empty());
}

TEST(ResidencyCheck, SecondEvictsFirst) {
    const std::uint64_t mb = 1u << 20;
    std::vector<ResidencyStep> plan{{{{1, 2 * mb}}}, {{{2, 2 * mb}}}};
    const auto s = residency_check(plan, 3 * mb);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0], (SpillDirective{1, 1}));
}

TEST(ResidencyCheck, InfeasibleStep) {
    std::vector<ResidencyStep> plan{{{{1, 200}, {2, 200}}}};
    EXPECT_THROW(residency_check(plan, 300), BudgetError);
}

// Replaying the schedule through an allocator simulator never exceeds the limit.
TEST(ResidencyCheck, ReplayNeverExceedsLimit) {
    std::mt19937_64 g(15);
    for (int trial = 0; trial < 300; ++trial) {
        const std::uint64_t limit = 100 + g() % 1000;
        std::vector<ResidencyStep> plan(1 + g() % 12);
        for (auto& s : plan) {
            std::uint64_t used = 0;
            for (int t = 0, n = 1 + static_cast<int>(g() % 3); t < n; ++t) {
                const std::uint64_t b = 1 + g() % (limit / 3);
                if (used + b > limit) break;
                used += b;
                s.touches.push_back({static_cast<std::uint32_t>(g() % 6 + 10 * t), b});
            }
        }
        const auto schedule = residency_check(plan, limit);
        std::map<std::uint32_t, std::uint64_t> resident;
        for (std::size_t s = 0; s < plan.size(); ++s) {
            for (const auto& d : schedule)
                if (d.evict_before_step == s) {
                    ASSERT_TRUE(resident.count(d.matrix));
                    resident.erase(d.matrix);
                }
            for (const auto& [m, b] : plan[s].touches) resident[m] = b;
            std::uint64_t total = 0;
            for (const auto& [m, b] : resident) total += b;
            ASSERT_LE(total, limit) << "trial " << trial << " step " << s;
        }
    }
}

TEST(ParseByteSize, BinarySuffixes) {
    EXPECT_EQ(parse_byte_size("512"), 512u);
    EXPECT_EQ(parse_byte_size("1K"), 1024u);
    EXPECT_EQ(parse_byte_size("128M"), 128u << 20);
    EXPECT_EQ(parse_byte_size("4G"), 4ull << 30);
    EXPECT_THROW(parse_byte_size(""), DimensionError);
    EXPECT_THROW(parse_byte_size("12Q"), DimensionError);
    EXPECT_THROW(parse_byte_size("0"), DimensionError);
    EXPECT_THROW(parse_byte_size("-1K"), DimensionError);
}
