#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "descriptor.hpp"
#include "error.hpp"

namespace oocsvd {

/// Three-tier memory limits in bytes. Unset tiers fall back per-matrix ->
/// new-matrix -> global -> unlimited.
struct MemoryBudget {
    std::optional<std::uint64_t> per_matrix;
    std::optional<std::uint64_t> new_matrix;
    std::optional<std::uint64_t> global;

    std::optional<std::uint64_t> effective_per_matrix() const noexcept {
        if (per_matrix) return per_matrix;
        if (new_matrix) return new_matrix;
        return global;
    }
    // Limit for matrices created during processing.
    std::optional<std::uint64_t> effective_new_matrix() const noexcept {
        if (new_matrix) return new_matrix;
        return effective_per_matrix();
    }
    bool unlimited() const noexcept { return !per_matrix && !new_matrix && !global; }

    friend bool operator==(const MemoryBudget&, const MemoryBudget&) = default;
};

/// "512", "64K", "128M", "4G" (binary multiples) to bytes.
inline std::uint64_t parse_byte_size(std::string_view s) {
    if (s.empty()) throw DimensionError("empty byte size");
    std::uint64_t mult = 1;
    switch (s.back()) {
        case 'K': case 'k': mult = 1ull << 10; break;
        case 'M': case 'm': mult = 1ull << 20; break;
        case 'G': case 'g': mult = 1ull << 30; break;
        default: break;
    }
    if (mult != 1) s.remove_suffix(1);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v == 0) throw DimensionError("invalid byte size");
    if (v > std::numeric_limits<std::uint64_t>::max() / mult) throw DimensionError("byte size overflows");
    return v * mult;
}

enum class Exactness : std::uint8_t { exact, upper_bound };

struct CostEstimate {
    std::uint64_t multiply_adds = 0;
    std::uint64_t peak_resident_bytes = 0;
    std::uint64_t output_bytes = 0;
    std::uint64_t output_scalars = 0;
    Exactness exactness = Exactness::exact;
};

namespace detail {
inline std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) noexcept {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return std::numeric_limits<std::uint64_t>::max();
    return a * b;
}
inline Precision wider(Precision a, Precision b) noexcept {
    auto lift = [](Precision p) { return p == Precision::half ? Precision::single : p; };
    return std::max(lift(a), lift(b));
}
}  // namespace detail

/// Cost of the logical product X * Y. Dense and mixed products are exact;
/// sparse x sparse is an upper bound.
inline CostEstimate estimate_product(const MatrixDescriptor& x, const MatrixDescriptor& y) {
    if (x.cols() != y.rows()) throw DimensionError("inner dimensions differ");
    using detail::sat_mul;
    const std::uint64_t m = x.rows(), k = x.cols(), n = y.cols();
    const Precision out_p = detail::wider(x.precision(), y.precision());
    CostEstimate c;
    const bool output_sparse = x.is_sparse() && y.is_sparse();
    if (!x.is_sparse() && !y.is_sparse()) {
        c.multiply_adds = sat_mul(sat_mul(m, k), n);
        c.output_scalars = m * n;
    } else if (x.is_sparse() && !y.is_sparse()) {
        c.multiply_adds = sat_mul(x.nnz(), n);
        c.output_scalars = m * n;
    } else if (!x.is_sparse() && y.is_sparse()) {
        c.multiply_adds = sat_mul(y.nnz(), m);
        c.output_scalars = m * n;
    } else {
        c.multiply_adds = std::min({sat_mul(x.nnz(), n), sat_mul(y.nnz(), m), sat_mul(sat_mul(m, k), n)});
        c.output_scalars = std::min(sat_mul(m, n), sat_mul(x.nnz(), y.nnz()));
        c.exactness = Exactness::upper_bound;
    }
    const std::uint64_t per_scalar =
        bytes_per_scalar(out_p) + (output_sparse ? 2 * index_bytes(required_index_width(m, n)) : 0);
    c.output_bytes = sat_mul(c.output_scalars, per_scalar);
    c.peak_resident_bytes = x.payload_bytes() + y.payload_bytes() + c.output_bytes;
    return c;
}

/// Descriptor of the product X * Y, used when costing product chains.
inline MatrixDescriptor product_descriptor(const MatrixDescriptor& x, const MatrixDescriptor& y) {
    const CostEstimate c = estimate_product(x, y);
    const bool sparse = x.is_sparse() && y.is_sparse();
    MatrixDescriptor d(0, x.rows(), y.cols(), sparse ? Density::sparse : Density::dense,
                       detail::wider(x.precision(), y.precision()),
                       sparse ? required_index_width(x.rows(), y.cols()) : IndexWidth::bits64);
    if (sparse) d.set_nnz(c.output_scalars);
    return d;
}

/// Parenthesization of a product chain. Node i covers matrices
/// [first, last]; leaves have no split.
struct AssociationOrder {
    struct Node {
        std::size_t first = 0;
        std::size_t last = 0;
        std::optional<std::size_t> split;  // left covers [first, split], right [split+1, last]
        int left = -1;
        int right = -1;
        CostEstimate cost;  // cost of this node's own product (zero for leaves)
    };
    std::vector<Node> nodes;
    int root = -1;
    std::uint64_t total_multiply_adds = 0;

    std::string to_string() const { return render(root); }

  private:
    std::string render(int i) const {
        const Node& n = nodes[static_cast<std::size_t>(i)];
        if (!n.split) return std::to_string(n.first);
        return "(" + render(n.left) + " " + render(n.right) + ")";
    }
};

/// Minimum total multiply-add parenthesization of the chain; ties go to the
/// more right-associated tree.
inline AssociationOrder choose_association(std::span<const MatrixDescriptor> chain) {
    const std::size_t k = chain.size();
    if (k < 2) throw DimensionError("product chain needs at least two matrices");
    for (std::size_t i = 0; i + 1 < k; ++i)
        if (chain[i].cols() != chain[i + 1].rows()) throw DimensionError("incompatible product chain");

    constexpr std::uint64_t kInf = std::numeric_limits<std::uint64_t>::max();
    std::vector<std::vector<std::uint64_t>> best(k, std::vector<std::uint64_t>(k, 0));
    std::vector<std::vector<std::size_t>> split(k, std::vector<std::size_t>(k, 0));
    std::vector<std::vector<std::optional<MatrixDescriptor>>> desc(k, std::vector<std::optional<MatrixDescriptor>>(k));
    for (std::size_t i = 0; i < k; ++i) desc[i][i] = chain[i];

    for (std::size_t len = 2; len <= k; ++len)
        for (std::size_t i = 0; i + len <= k; ++i) {
            const std::size_t j = i + len - 1;
            best[i][j] = kInf;
            for (std::size_t s = i; s < j; ++s) {
                const CostEstimate c = estimate_product(*desc[i][s], *desc[s + 1][j]);
                const std::uint64_t total = std::min(kInf - 1, best[i][s] + best[s + 1][j] + c.multiply_adds);
                if (total < best[i][j]) {
                    best[i][j] = total;
                    split[i][j] = s;
                }
            }
            const std::size_t s = split[i][j];
            desc[i][j] = product_descriptor(*desc[i][s], *desc[s + 1][j]);
        }

    AssociationOrder order;
    auto build = [&](auto&& self, std::size_t i, std::size_t j) -> int {
        AssociationOrder::Node n;
        n.first = i;
        n.last = j;
        if (i != j) {
            const std::size_t s = split[i][j];
            n.split = s;
            n.left = self(self, i, s);
            n.right = self(self, s + 1, j);
            n.cost = estimate_product(*desc[i][s], *desc[s + 1][j]);
        }
        order.nodes.push_back(n);
        return static_cast<int>(order.nodes.size() - 1);
    };
    order.root = build(build, 0, k - 1);
    order.total_multiply_adds = best[0][k - 1];
    return order;
}

/// Smallest uniform grid over a rows x cols dense matrix whose largest tile
/// holds at most `limit` bytes (inclusive). Among grids with the fewest
/// tiles, the one with the squarest tiles wins.
inline BlockPartition dense_partition(Index rows, Index cols, std::size_t scalar_bytes,
                                      std::optional<std::uint64_t> limit) {
    if (!limit) return BlockPartition::single(rows, cols);
    if (*limit < scalar_bytes) throw BudgetError("memory limit is smaller than one scalar");
    std::uint64_t best_tiles = std::numeric_limits<std::uint64_t>::max();
    double best_aspect = std::numeric_limits<double>::infinity();
    Index best_r = rows, best_c = cols;
    Index prev_width = 0;
    for (Index gc = 1; gc <= cols && gc <= best_tiles; ++gc) {
        const Index width = (cols + gc - 1) / gc;
        if (width == prev_width) continue;  // same max tile width as a coarser column split
        prev_width = width;
        const std::uint64_t row_bytes = width * scalar_bytes;
        if (row_bytes > *limit) continue;
        const Index height = std::min<Index>(rows, *limit / row_bytes);
        const Index gr = (rows + height - 1) / height;
        const std::uint64_t tiles = detail::sat_mul(gr, gc);
        const double h = static_cast<double>((rows + gr - 1) / gr);
        const double aspect = std::max(h / static_cast<double>(width), static_cast<double>(width) / h);
        if (tiles < best_tiles || (tiles == best_tiles && aspect < best_aspect)) {
            best_tiles = tiles;
            best_aspect = aspect;
            best_r = gr;
            best_c = gc;
        }
    }
    return BlockPartition::uniform(rows, cols, best_r, best_c);
}

/// Grid for actual sparse data: the coarsest square-ish uniform grid
/// (searched by growing the tile count) whose heaviest tile fits.
inline BlockPartition sparse_partition(Index rows, Index cols, std::span<const Index> row_of,
                                       std::span<const Index> col_of, std::size_t entry_bytes,
                                       std::optional<std::uint64_t> limit) {
    if (!limit) return BlockPartition::single(rows, cols);
    if (*limit < entry_bytes) throw BudgetError("memory limit is smaller than one sparse entry");
    const std::uint64_t total = row_of.size() * entry_bytes;
    if (total <= *limit) return BlockPartition::single(rows, cols);
    const std::uint64_t per_tile = *limit / entry_bytes;
    double target = std::ceil(static_cast<double>(row_of.size()) / static_cast<double>(per_tile));
    for (;;) {
        Index g = static_cast<Index>(std::ceil(std::sqrt(target)));
        const Index gr = std::min(rows, g);
        const Index gc = std::min(cols, (static_cast<Index>(target) + gr - 1) / gr);
        BlockPartition p = BlockPartition::uniform(rows, cols, gr, std::max<Index>(gc, 1));
        std::vector<std::uint64_t> counts(p.tile_count(), 0);
        std::uint64_t worst = 0;
        for (std::size_t e = 0; e < row_of.size(); ++e) {
            auto& c = counts[p.row_tile_of(row_of[e]) * p.tile_cols() + p.col_tile_of(col_of[e])];
            worst = std::max(worst, ++c);
        }
        if (worst <= per_tile) return p;
        if (gr == rows && gc >= cols) return p;  // one entry per tile cannot be exceeded
        target = std::max(target + 1, std::ceil(target * 1.25));
    }
}

/// Partition of `desc` under `limit`. Sparse descriptors assume uniformly
/// spread entries (exact grids for real data come from sparse_partition).
inline BlockPartition partition_for_limit(const MatrixDescriptor& desc, std::optional<std::uint64_t> limit) {
    const Index rows = desc.stored_rows(), cols = desc.stored_cols();
    if (!desc.is_sparse()) return dense_partition(rows, cols, bytes_per_scalar(desc.precision()), limit);
    if (!limit || desc.payload_bytes() <= *limit) return BlockPartition::single(rows, cols);
    const std::uint64_t tiles = (desc.payload_bytes() + *limit - 1) / *limit;
    const Index g = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(tiles))));
    const Index gr = std::min(rows, g);
    const Index gc = std::min(cols, (tiles + gr - 1) / gr);
    return BlockPartition::uniform(rows, cols, gr, gc);
}

inline BlockPartition partition_for_budget(const MatrixDescriptor& desc, const MemoryBudget& budget) {
    return partition_for_limit(desc, budget.effective_per_matrix());
}

inline constexpr std::uint64_t kDefaultMinOpsPerThread = 100000;

/// clamp(floor(multiply_adds / min_ops_per_thread), 1, available)
inline std::size_t choose_threads(const CostEstimate& cost, std::size_t available,
                                  std::uint64_t min_ops_per_thread = kDefaultMinOpsPerThread) {
    if (available < 1) available = 1;
    if (min_ops_per_thread == 0) return available;
    const std::uint64_t t = cost.multiply_adds / min_ops_per_thread;
    return static_cast<std::size_t>(std::clamp<std::uint64_t>(t, 1, available));
}

/// One plan step for residency planning: the matrices it touches and the
/// resident bytes each needs while the step runs.
struct ResidencyStep {
    std::vector<std::pair<std::uint32_t, std::uint64_t>> touches;
};

struct SpillDirective {
    std::uint32_t matrix;
    std::size_t evict_before_step;
    friend bool operator==(const SpillDirective&, const SpillDirective&) = default;
};

/// Predictive spill schedule: before each step, evict whole matrices not
/// used by that step (furthest next use first) until the step's working set
/// fits the global limit.
inline std::vector<SpillDirective> residency_check(std::span<const ResidencyStep> plan,
                                                   std::optional<std::uint64_t> global_limit) {
    std::vector<SpillDirective> schedule;
    if (!global_limit) return schedule;
    std::map<std::uint32_t, std::uint64_t> resident;
    auto next_use = [&](std::uint32_t m, std::size_t from) {
        for (std::size_t s = from; s < plan.size(); ++s)
            for (const auto& t : plan[s].touches)
                if (t.first == m) return s;
        return plan.size();
    };
    for (std::size_t s = 0; s < plan.size(); ++s) {
        std::uint64_t need = 0;
        std::map<std::uint32_t, std::uint64_t> step_set;
        for (const auto& [m, b] : plan[s].touches) step_set[m] = std::max(step_set[m], b);
        for (const auto& [m, b] : step_set) need += b;
        if (need > *global_limit) throw BudgetError("step " + std::to_string(s) + " cannot fit the global limit");
        std::uint64_t other = 0;
        for (const auto& [m, b] : resident)
            if (!step_set.count(m)) other += b;
        while (need + other > *global_limit) {
            std::uint32_t victim = 0;
            std::size_t furthest = 0;
            std::uint64_t victim_bytes = 0;
            bool found = false;
            for (const auto& [m, b] : resident) {
                if (step_set.count(m)) continue;
                const std::size_t nu = next_use(m, s + 1);
                if (!found || nu > furthest || (nu == furthest && b > victim_bytes)) {
                    found = true;
                    victim = m;
                    furthest = nu;
                    victim_bytes = b;
                }
            }
            schedule.push_back({victim, s});
            other -= victim_bytes;
            resident.erase(victim);
        }
        for (const auto& [m, b] : step_set) resident[m] = b;
    }
    return schedule;
}

}  // namespace oocsvd
