#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <variant>
#include <vector>

#include "descriptor.hpp"
#include "error.hpp"
#include "precision.hpp"

namespace oocsvd {

/// Half-open index range [begin, end) in parent-matrix coordinates.
struct Range {
    Index begin = 0;
    Index end = 0;

    Index size() const noexcept { return end - begin; }
    bool empty() const noexcept { return end <= begin; }
    bool contains(Index v) const noexcept { return v >= begin && v < end; }
    Range intersect(Range o) const noexcept {
        Range r{std::max(begin, o.begin), std::min(end, o.end)};
        if (r.end < r.begin) r.end = r.begin;
        return r;
    }
    friend bool operator==(Range, Range) = default;
};

template <StorageScalar T>
struct DenseBlock {
    Range rows;
    Range cols;
    std::vector<T> values;  // row-major, rows.size() * cols.size()

    DenseBlock() = default;
    DenseBlock(Range r, Range c) : rows(r), cols(c), values(r.size() * c.size()) {}
    DenseBlock(Range r, Range c, std::vector<T> v) : rows(r), cols(c), values(std::move(v)) {
        if (values.size() != r.size() * c.size()) throw DimensionError("dense block payload length mismatch");
    }

    Index height() const noexcept { return rows.size(); }
    Index width() const noexcept { return cols.size(); }
    std::size_t payload_bytes() const noexcept { return values.size() * sizeof(T); }

    T& local(Index i, Index j) noexcept { return values[i * cols.size() + j]; }
    const T& local(Index i, Index j) const noexcept { return values[i * cols.size() + j]; }
    // Parent coordinates.
    T& at(Index i, Index j) noexcept { return local(i - rows.begin, j - cols.begin); }
    const T& at(Index i, Index j) const noexcept { return local(i - rows.begin, j - cols.begin); }

    friend bool operator==(const DenseBlock&, const DenseBlock&) = default;
};

/// Row or column index array stored at 32 or 64 bits.
class IndexArray {
  public:
    explicit IndexArray(IndexWidth w = IndexWidth::bits32) : width_(w) {}

    IndexWidth width() const noexcept { return width_; }
    std::size_t size() const noexcept { return wide() ? u64_.size() : u32_.size(); }
    bool empty() const noexcept { return size() == 0; }

    Index operator[](std::size_t i) const noexcept { return wide() ? u64_[i] : u32_[i]; }
    void set(std::size_t i, Index v) noexcept {
        if (wide()) u64_[i] = v;
        else u32_[i] = static_cast<std::uint32_t>(v);
    }
    void push_back(Index v) {
        if (wide()) u64_.push_back(v);
        else u32_.push_back(static_cast<std::uint32_t>(v));
    }
    void reserve(std::size_t n) {
        if (wide()) u64_.reserve(n);
        else u32_.reserve(n);
    }
    void resize(std::size_t n) {
        if (wide()) u64_.resize(n);
        else u32_.resize(n);
    }

    std::span<const std::byte> bytes() const noexcept {
        return wide() ? std::as_bytes(std::span(u64_)) : std::as_bytes(std::span(u32_));
    }
    std::span<std::byte> writable_bytes() noexcept {
        return wide() ? std::as_writable_bytes(std::span(u64_)) : std::as_writable_bytes(std::span(u32_));
    }

    // First position in [lo, hi) whose value is >= v (array sorted on that span).
    std::size_t lower_bound(std::size_t lo, std::size_t hi, Index v) const noexcept {
        while (lo < hi) {
            const std::size_t mid = lo + (hi - lo) / 2;
            if ((*this)[mid] < v) lo = mid + 1;
            else hi = mid;
        }
        return lo;
    }

    friend bool operator==(const IndexArray& a, const IndexArray& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i]) return false;
        return true;
    }

  private:
    bool wide() const noexcept { return width_ == IndexWidth::bits64; }

    IndexWidth width_;
    std::vector<std::uint32_t> u32_;
    std::vector<std::uint64_t> u64_;
};

struct Triplet {
    Index row;
    Index col;
    double value;
    friend bool operator==(const Triplet&, const Triplet&) = default;
};

template <StorageScalar T>
struct SparseEntry {
    Index row;
    Index col;
    T value;
};

/// COO tile in structure-of-arrays form, sorted by (row, col), no duplicates.
template <StorageScalar T>
struct SparseBlock {
    Range rows;
    Range cols;
    IndexArray row_idx;
    IndexArray col_idx;
    std::vector<T> values;

    SparseBlock() = default;
    SparseBlock(Range r, Range c, IndexWidth w) : rows(r), cols(c), row_idx(w), col_idx(w) {}

    /// Builds a canonical block: sorts entries and sums duplicates.
    static SparseBlock assemble(Range r, Range c, IndexWidth w, std::vector<Triplet> entries) {
        std::sort(entries.begin(), entries.end(),
                  [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
        SparseBlock blk(r, c, w);
        blk.row_idx.reserve(entries.size());
        blk.col_idx.reserve(entries.size());
        blk.values.reserve(entries.size());
        using W = compute_t<T>;
        for (std::size_t i = 0; i < entries.size();) {
            const Triplet& e = entries[i];
            if (!r.contains(e.row) || !c.contains(e.col)) throw DimensionError("sparse entry outside block range");
            W sum = static_cast<W>(e.value);
            std::size_t j = i + 1;
            for (; j < entries.size() && entries[j].row == e.row && entries[j].col == e.col; ++j)
                sum += static_cast<W>(entries[j].value);
            blk.row_idx.push_back(e.row);
            blk.col_idx.push_back(e.col);
            blk.values.push_back(narrow<T>(sum));
            i = j;
        }
        return blk;
    }

    std::size_t nnz() const noexcept { return values.size(); }
    IndexWidth index_width() const noexcept { return row_idx.width(); }
    std::size_t payload_bytes() const noexcept { return nnz() * (sizeof(T) + 2 * index_bytes(index_width())); }

    void push_back(Index r, Index c, T v) {
        row_idx.push_back(r);
        col_idx.push_back(c);
        values.push_back(v);
    }

    // Positions [first, last) of the entries whose row lies in [a, b).
    std::pair<std::size_t, std::size_t> row_span(Index a, Index b) const noexcept {
        return {row_idx.lower_bound(0, nnz(), a), row_idx.lower_bound(0, nnz(), b)};
    }

    /// Checks sortedness, duplicate freedom, ranges and array lengths.
    bool is_canonical() const noexcept {
        if (row_idx.size() != values.size() || col_idx.size() != values.size()) return false;
        for (std::size_t i = 0; i < nnz(); ++i) {
            if (!rows.contains(row_idx[i]) || !cols.contains(col_idx[i])) return false;
            if (i > 0) {
                const Index pr = row_idx[i - 1], pc = col_idx[i - 1];
                if (pr > row_idx[i] || (pr == row_idx[i] && pc >= col_idx[i])) return false;
            }
        }
        return true;
    }

    friend bool operator==(const SparseBlock&, const SparseBlock&) = default;
};

/// Visits the stored entries inside rows [a,b) x cols [c,d) in (row, col)
/// order. Rows are located by binary search, so a rectangle holding no
/// entries costs O(log nnz) per row present in [a,b).
template <StorageScalar T, class Fn>
void for_each_in_range(const SparseBlock<T>& blk, Range rows, Range cols, Fn&& fn) {
    if (rows.empty() || cols.empty()) return;
    std::size_t pos = blk.row_idx.lower_bound(0, blk.nnz(), rows.begin);
    const std::size_t stop = blk.row_idx.lower_bound(pos, blk.nnz(), rows.end);
    while (pos < stop) {
        const Index r = blk.row_idx[pos];
        const std::size_t row_end = blk.row_idx.lower_bound(pos, stop, r + 1);
        std::size_t p = blk.col_idx.lower_bound(pos, row_end, cols.begin);
        for (; p < row_end && blk.col_idx[p] < cols.end; ++p) fn(r, blk.col_idx[p], blk.values[p]);
        pos = row_end;
    }
}

template <StorageScalar T>
std::vector<SparseEntry<T>> sparse_range_query(const SparseBlock<T>& blk, Range rows, Range cols) {
    std::vector<SparseEntry<T>> out;
    for_each_in_range(blk, rows, cols, [&](Index r, Index c, T v) { out.push_back({r, c, v}); });
    return out;
}

// True when the rectangle holds no stored entries.
template <StorageScalar T>
bool range_is_empty(const SparseBlock<T>& blk, Range rows, Range cols) {
    bool any = false;
    if (cols.begin <= blk.cols.begin && cols.end >= blk.cols.end) {
        auto [lo, hi] = blk.row_span(rows.begin, rows.end);
        return lo == hi;
    }
    for_each_in_range(blk, rows, cols, [&](Index, Index, T) { any = true; });
    return !any;
}

template <StorageScalar T>
using Block = std::variant<DenseBlock<T>, SparseBlock<T>>;

template <StorageScalar T>
std::size_t payload_bytes(const Block<T>& b) noexcept {
    return std::visit([](const auto& x) { return x.payload_bytes(); }, b);
}

template <StorageScalar T>
DenseBlock<T> to_dense(const SparseBlock<T>& s) {
    DenseBlock<T> d(s.rows, s.cols);
    for (std::size_t i = 0; i < s.nnz(); ++i) d.at(s.row_idx[i], s.col_idx[i]) = s.values[i];
    return d;
}

}  // namespace oocsvd
