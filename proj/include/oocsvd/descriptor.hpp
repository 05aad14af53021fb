#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "error.hpp"
#include "precision.hpp"

namespace oocsvd {

using Index = std::uint64_t;

enum class Density : std::uint8_t { dense = 0, sparse = 1 };
enum class Residency : std::uint8_t { in_core = 0, out_of_core = 1 };

/// Width of stored sparse indices. Dense matrices carry `bits64` nominally.
enum class IndexWidth : std::uint8_t { bits32 = 4, bits64 = 8 };

constexpr std::size_t index_bytes(IndexWidth w) noexcept { return static_cast<std::size_t>(w); }

inline IndexWidth required_index_width(Index rows, Index cols) noexcept {
    const Index m = rows > cols ? rows : cols;
    return m < (Index{1} << 32) ? IndexWidth::bits32 : IndexWidth::bits64;
}

/// Uniform tile grid: cut points start at 0 and end at the dimension.
struct BlockPartition {
    std::vector<Index> row_cuts{0};
    std::vector<Index> col_cuts{0};

    static BlockPartition single(Index rows, Index cols) { return {{0, rows}, {0, cols}}; }

    // Equal cuts: tile spans differ by at most one.
    static BlockPartition uniform(Index rows, Index cols, Index row_tiles, Index col_tiles) {
        BlockPartition p;
        p.row_cuts = equal_cuts(rows, row_tiles);
        p.col_cuts = equal_cuts(cols, col_tiles);
        return p;
    }

    static std::vector<Index> equal_cuts(Index n, Index parts) {
        std::vector<Index> cuts(parts + 1);
        for (Index k = 0; k <= parts; ++k) cuts[k] = static_cast<Index>((static_cast<unsigned __int128>(n) * k) / parts);
        return cuts;
    }

    std::size_t tile_rows() const noexcept { return row_cuts.size() - 1; }
    std::size_t tile_cols() const noexcept { return col_cuts.size() - 1; }
    std::size_t tile_count() const noexcept { return tile_rows() * tile_cols(); }

    Index max_tile_rows() const noexcept { return max_span(row_cuts); }
    Index max_tile_cols() const noexcept { return max_span(col_cuts); }

    // Tile row containing global row `r`.
    std::size_t row_tile_of(Index r) const noexcept { return locate(row_cuts, r); }
    std::size_t col_tile_of(Index c) const noexcept { return locate(col_cuts, c); }

    BlockPartition transposed() const { return {col_cuts, row_cuts}; }

    friend bool operator==(const BlockPartition&, const BlockPartition&) = default;

  private:
    static Index max_span(const std::vector<Index>& cuts) noexcept {
        Index m = 0;
        for (std::size_t i = 1; i < cuts.size(); ++i) m = std::max(m, cuts[i] - cuts[i - 1]);
        return m;
    }
    static std::size_t locate(const std::vector<Index>& cuts, Index v) noexcept {
        std::size_t lo = 0, hi = cuts.size() - 1;
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            if (cuts[mid] <= v) lo = mid;
            else hi = mid;
        }
        return lo;
    }
};

/// Logical description of a matrix. `rows_`/`cols_` are the canonical
/// (stored) shape; the public accessors report the logical shape, which is
/// swapped when the transposed view flag is set.
class MatrixDescriptor {
  public:
    MatrixDescriptor() = default;
    MatrixDescriptor(std::uint32_t id, Index rows, Index cols, Density density, Precision precision,
                     IndexWidth index_width = IndexWidth::bits32)
        : id_(id), rows_(rows), cols_(cols), density_(density), precision_(precision), index_width_(index_width),
          partition_(BlockPartition::single(rows, cols)), nnz_(density == Density::dense ? rows * cols : 0) {
        if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be positive");
        if (density == Density::sparse && index_width == IndexWidth::bits32 &&
            required_index_width(rows, cols) != IndexWidth::bits32)
            throw DimensionError("32-bit indices cannot address a matrix this large");
    }

    std::uint32_t id() const noexcept { return id_; }
    Index rows() const noexcept { return transposed_ ? cols_ : rows_; }
    Index cols() const noexcept { return transposed_ ? rows_ : cols_; }
    Index stored_rows() const noexcept { return rows_; }
    Index stored_cols() const noexcept { return cols_; }
    Density density() const noexcept { return density_; }
    bool is_sparse() const noexcept { return density_ == Density::sparse; }
    Precision precision() const noexcept { return precision_; }
    IndexWidth index_width() const noexcept { return index_width_; }
    bool transposed() const noexcept { return transposed_; }
    Residency residency() const noexcept { return residency_; }
    Index nnz() const noexcept { return nnz_; }

    // Partition of the stored matrix; `partition()` is the logical one.
    const BlockPartition& stored_partition() const noexcept { return partition_; }
    BlockPartition partition() const { return transposed_ ? partition_.transposed() : partition_; }

    /// Payload bytes: scalars plus index arrays for sparse (headers excluded).
    std::uint64_t payload_bytes() const noexcept {
        if (density_ == Density::dense) return rows_ * cols_ * bytes_per_scalar(precision_);
        return nnz_ * (bytes_per_scalar(precision_) + 2 * index_bytes(index_width_));
    }
    // Payload the same matrix would occupy stored dense.
    std::uint64_t dense_equivalent_bytes() const noexcept { return rows_ * cols_ * bytes_per_scalar(precision_); }
    double fill_ratio() const noexcept {
        return static_cast<double>(nnz_) / (static_cast<double>(rows_) * static_cast<double>(cols_));
    }

    void set_nnz(Index nnz) noexcept {
        if (density_ == Density::sparse) nnz_ = nnz;
    }
    void set_partition(BlockPartition p) {
        if (p.row_cuts.front() != 0 || p.row_cuts.back() != rows_ || p.col_cuts.front() != 0 || p.col_cuts.back() != cols_)
            throw DimensionError("partition does not cover the stored matrix");
        partition_ = std::move(p);
    }
    void set_residency(Residency r) noexcept { residency_ = r; }
    void set_id(std::uint32_t id) noexcept { id_ = id; }

    friend MatrixDescriptor transpose_view(MatrixDescriptor m) noexcept {
        m.transposed_ = !m.transposed_;
        return m;
    }

    friend bool operator==(const MatrixDescriptor&, const MatrixDescriptor&) = default;

  private:
    std::uint32_t id_ = 0;
    Index rows_ = 0;
    Index cols_ = 0;
    Density density_ = Density::dense;
    Precision precision_ = Precision::double_;
    IndexWidth index_width_ = IndexWidth::bits32;
    bool transposed_ = false;
    Residency residency_ = Residency::in_core;
    BlockPartition partition_;
    Index nnz_ = 0;
};

}  // namespace oocsvd
