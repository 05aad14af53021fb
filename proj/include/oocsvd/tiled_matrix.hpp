#pragma once

#include <cstdint>
#include <future>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "block.hpp"
#include "context.hpp"
#include "descriptor.hpp"
#include "error.hpp"
#include "planner.hpp"

namespace oocsvd {

/// A matrix stored as a grid of tiles, each either resident or spilled to
/// the context's block store. Resident tile bytes (including tiles whose
/// eviction write is still in flight) never exceed the matrix's limit.
///
/// Tile handles returned by `tile()` stay valid only until the next tile
/// operation on the same matrix: algorithms hold at most one tile of any
/// given matrix at a time.
///
/// Copies share storage. `transposed()` returns a view over the same tiles.
template <StorageScalar T>
class TiledMatrix {
    struct Slot {
        std::optional<Block<T>> data;
        bool on_disk = false;
        bool dirty = false;
        Index nnz = 0;
        std::uint64_t last_use = 0;
        std::shared_future<void> pending;
        std::shared_ptr<Block<T>> pending_data;
    };

    struct State {
        ContextPtr ctx;
        MatrixDescriptor desc;
        std::optional<std::uint64_t> limit;
        std::vector<Slot> slots;
        std::uint64_t resident = 0;
        std::uint64_t clock = 0;
        bool temporary = false;

        ~State() {
            for (auto& s : slots)
                if (s.pending_data) try {
                        s.pending.get();
                    } catch (...) {
                    }
            ctx->tracker().on_free(desc.id(), resident);
            if (temporary && ctx->store())
                for (std::uint32_t i = 0; i < desc.stored_partition().tile_rows(); ++i)
                    for (std::uint32_t j = 0; j < desc.stored_partition().tile_cols(); ++j)
                        ctx->store()->remove_block({desc.id(), i, j});
        }

        std::size_t index(std::size_t ti, std::size_t tj) const noexcept {
            return ti * desc.stored_partition().tile_cols() + tj;
        }
        std::pair<Range, Range> ranges(std::size_t i) const noexcept {
            const auto& p = desc.stored_partition();
            const std::size_t ti = i / p.tile_cols(), tj = i % p.tile_cols();
            return {Range{p.row_cuts[ti], p.row_cuts[ti + 1]}, Range{p.col_cuts[tj], p.col_cuts[tj + 1]}};
        }
        std::uint64_t slot_bytes(std::size_t i) const noexcept {
            if (desc.is_sparse()) return slots[i].nnz * (sizeof(T) + 2 * index_bytes(desc.index_width()));
            auto [r, c] = ranges(i);
            return r.size() * c.size() * sizeof(T);
        }
        BlockId block_id(std::size_t i) const noexcept {
            const auto tc = desc.stored_partition().tile_cols();
            return {desc.id(), static_cast<std::uint32_t>(i / tc), static_cast<std::uint32_t>(i % tc)};
        }

        void charge(std::uint64_t b) {
            resident += b;
            ctx->tracker().on_alloc(desc.id(), b, limit);
        }
        void release(std::uint64_t b) {
            resident -= b;
            ctx->tracker().on_free(desc.id(), b);
        }

        void finish_pending(Slot& s) {
            s.pending.get();
            s.pending = {};
            s.on_disk = true;
        }

        // Collect completed eviction writes.
        void reap() {
            for (auto& s : slots)
                if (s.pending_data &&
                    s.pending.wait_for(std::chrono::seconds(0)) == std::future_status::ready) {
                    finish_pending(s);
                    release(payload_bytes(*s.pending_data));
                    s.pending_data.reset();
                }
        }

        void evict(std::size_t i) {
            Slot& s = slots[i];
            const std::uint64_t b = payload_bytes(*s.data);
            if (!s.dirty) {
                s.data.reset();
                release(b);
                return;
            }
            BlockStore* store = ctx->store();
            if (!store) throw BudgetError("matrix exceeds its memory limit and no workdir is configured");
            s.pending_data = std::make_shared<Block<T>>(std::move(*s.data));
            s.data.reset();
            s.dirty = false;
            auto data = s.pending_data;
            const BlockId id = block_id(i);
            s.pending = ctx->lane().submit([store, data, id] { store->store_block(*data, id); });
        }

        void make_room(std::uint64_t need, std::size_t keep) {
            if (!limit) return;
            reap();
            while (resident + need > *limit) {
                std::size_t victim = slots.size();
                for (std::size_t i = 0; i < slots.size(); ++i)
                    if (i != keep && slots[i].data && (victim == slots.size() || slots[i].last_use < slots[victim].last_use))
                        victim = i;
                if (victim != slots.size()) {
                    evict(victim);
                    continue;
                }
                // Only in-flight writes remain: wait for the oldest one.
                std::size_t wait = slots.size();
                for (std::size_t i = 0; i < slots.size(); ++i)
                    if (slots[i].pending_data) {
                        wait = i;
                        break;
                    }
                if (wait == slots.size()) {
                    if (resident + need > *limit)
                        throw BudgetError("tile of " + std::to_string(need) + " bytes exceeds matrix limit");
                    return;
                }
                Slot& s = slots[wait];
                finish_pending(s);
                release(payload_bytes(*s.pending_data));
                s.pending_data.reset();
            }
        }

        Block<T>& acquire(std::size_t i) {
            Slot& s = slots[i];
            s.last_use = ++clock;
            if (s.data) return *s.data;
            if (s.pending_data) {
                finish_pending(s);
                s.data = std::move(*s.pending_data);
                s.pending_data.reset();
                return *s.data;
            }
            const std::uint64_t need = slot_bytes(i);
            make_room(need, i);
            if (s.on_disk) {
                s.data = ctx->store()->template load_block<T>(block_id(i));
            } else {
                auto [r, c] = ranges(i);
                if (desc.is_sparse()) s.data = SparseBlock<T>(r, c, desc.index_width());
                else s.data = DenseBlock<T>(r, c);
                s.dirty = true;
            }
            charge(payload_bytes(*s.data));
            return *s.data;
        }

        void put(std::size_t i, Block<T> blk) {
            Slot& s = slots[i];
            s.last_use = ++clock;
            if (s.pending_data) {
                finish_pending(s);
                release(payload_bytes(*s.pending_data));
                s.pending_data.reset();
            }
            if (s.data) {
                release(payload_bytes(*s.data));
                s.data.reset();
            }
            const std::uint64_t need = payload_bytes(blk);
            if (limit && need > *limit) throw BudgetError("tile exceeds matrix limit");
            make_room(need, i);
            if (auto* sp = std::get_if<SparseBlock<T>>(&blk)) s.nnz = sp->nnz();
            else s.nnz = std::get<DenseBlock<T>>(blk).values.size();
            s.data = std::move(blk);
            s.dirty = true;
            charge(need);
        }

        void flush() {
            for (std::size_t i = 0; i < slots.size(); ++i) {
                Slot& s = slots[i];
                if (!s.data && !s.pending_data && !s.on_disk) acquire(i);  // materialize implicit zeros
                if (s.data && s.dirty) {
                    BlockStore* store = ctx->store();
                    if (!store) throw BudgetError("cannot persist a matrix without a workdir");
                    store->store_block(*s.data, block_id(i));
                    s.dirty = false;
                    s.on_disk = true;
                }
            }
            for (auto& s : slots)
                if (s.pending_data) {
                    finish_pending(s);
                    release(payload_bytes(*s.pending_data));
                    s.pending_data.reset();
                }
        }
    };

  public:
    TiledMatrix() = default;

    /// Empty matrix over `partition`: dense tiles read as zeros, sparse
    /// tiles as empty, until written.
    static TiledMatrix with_partition(ContextPtr ctx, MatrixDescriptor desc, BlockPartition partition,
                                      MatrixRole role = MatrixRole::created) {
        auto st = std::make_shared<State>();
        st->limit = ctx->limit_for(role);
        st->ctx = std::move(ctx);
        desc.set_partition(std::move(partition));
        desc.set_residency(desc.stored_partition().tile_count() > 1 ? Residency::out_of_core : Residency::in_core);
        st->desc = std::move(desc);
        st->slots.resize(st->desc.stored_partition().tile_count());
        if (!st->desc.is_sparse())
            for (std::size_t i = 0; i < st->slots.size(); ++i) {
                auto [r, c] = st->ranges(i);
                st->slots[i].nnz = r.size() * c.size();
            }
        TiledMatrix m;
        m.st_ = std::move(st);
        return m;
    }

    /// Dense matrix of zeros, partitioned under the context's limit.
    static TiledMatrix zeros(ContextPtr ctx, std::uint32_t id, Index rows, Index cols,
                             MatrixRole role = MatrixRole::created) {
        MatrixDescriptor d(id, rows, cols, Density::dense, precision_of<T>(), IndexWidth::bits64);
        auto p = dense_partition(rows, cols, sizeof(T), ctx->limit_for(role));
        return with_partition(std::move(ctx), std::move(d), std::move(p), role);
    }

    /// Dense matrix from row-major values.
    static TiledMatrix from_dense(ContextPtr ctx, std::uint32_t id, Index rows, Index cols,
                                  std::span<const double> values, MatrixRole role = MatrixRole::input) {
        if (values.size() != rows * cols) throw DimensionError("value count does not match shape");
        TiledMatrix m = zeros(std::move(ctx), id, rows, cols, role);
        const auto& p = m.st_->desc.stored_partition();
        for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
            for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
                DenseBlock<T> blk(Range{p.row_cuts[ti], p.row_cuts[ti + 1]}, Range{p.col_cuts[tj], p.col_cuts[tj + 1]});
                for (Index i = blk.rows.begin; i < blk.rows.end; ++i)
                    for (Index j = blk.cols.begin; j < blk.cols.end; ++j) blk.at(i, j) = narrow<T>(values[i * cols + j]);
                m.put_tile(ti, tj, std::move(blk));
            }
        return m;
    }

    /// Sparse matrix from (row, col, value) triplets; duplicates are summed.
    static TiledMatrix from_triplets(ContextPtr ctx, std::uint32_t id, Index rows, Index cols,
                                     std::vector<Triplet> entries, IndexWidth width = IndexWidth::bits32,
                                     MatrixRole role = MatrixRole::input) {
        MatrixDescriptor d(id, rows, cols, Density::sparse, precision_of<T>(), width);
        std::sort(entries.begin(), entries.end(),
                  [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
        std::size_t w = 0;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].row >= rows || entries[i].col >= cols) throw DimensionError("sparse entry out of bounds");
            if (w > 0 && entries[w - 1].row == entries[i].row && entries[w - 1].col == entries[i].col)
                entries[w - 1].value += entries[i].value;
            else entries[w++] = entries[i];
        }
        entries.resize(w);
        std::vector<Index> ri(entries.size()), ci(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            ri[i] = entries[i].row;
            ci[i] = entries[i].col;
        }
        auto p = sparse_partition(rows, cols, ri, ci, sizeof(T) + 2 * index_bytes(width), ctx->limit_for(role));
        ri.clear();
        ci.clear();
        d.set_nnz(entries.size());
        TiledMatrix m = with_partition(std::move(ctx), std::move(d), p, role);
        std::vector<std::vector<Triplet>> buckets(p.tile_count());
        for (const auto& e : entries) buckets[p.row_tile_of(e.row) * p.tile_cols() + p.col_tile_of(e.col)].push_back(e);
        entries.clear();
        entries.shrink_to_fit();
        for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
            for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
                auto& b = buckets[ti * p.tile_cols() + tj];
                auto blk = SparseBlock<T>::assemble(Range{p.row_cuts[ti], p.row_cuts[ti + 1]},
                                                    Range{p.col_cuts[tj], p.col_cuts[tj + 1]}, width, std::move(b));
                m.put_tile(ti, tj, std::move(blk));
            }
        return m;
    }

    /// Reopens a persisted matrix from its manifest.
    static TiledMatrix open(ContextPtr ctx, std::uint32_t id, MatrixRole role = MatrixRole::created) {
        BlockStore* store = ctx->store();
        if (!store) throw NoPlanError("no workdir configured");
        auto man = store->read_manifest(id);
        if (!man) throw BlockAbsent("matrix manifest missing or corrupt", store->manifest_path(id).string());
        if (man->precision != precision_of<T>()) throw FormatError("stored matrix precision differs");
        MatrixDescriptor d(id, man->rows, man->cols, man->density, man->precision, man->index_width);
        Index nnz = 0;
        for (auto n : man->tile_nnz) nnz += n;
        d.set_nnz(nnz);
        TiledMatrix m = with_partition(std::move(ctx), std::move(d), man->partition, role);
        for (std::size_t i = 0; i < m.st_->slots.size(); ++i) {
            m.st_->slots[i].on_disk = true;
            m.st_->slots[i].nnz = man->tile_nnz[i];
        }
        return m;
    }

    explicit operator bool() const noexcept { return static_cast<bool>(st_); }

    /// Identity of the underlying tile storage (shared by views and copies).
    const void* storage_key() const noexcept { return st_.get(); }

    /// Logical descriptor (shape swapped for a transposed view).
    MatrixDescriptor descriptor() const {
        MatrixDescriptor d = st_->desc;
        d.set_nnz(nnz());
        return transposed_ ? transpose_view(d) : d;
    }
    std::uint32_t id() const noexcept { return st_->desc.id(); }
    Index rows() const noexcept { return transposed_ ? st_->desc.stored_cols() : st_->desc.stored_rows(); }
    Index cols() const noexcept { return transposed_ ? st_->desc.stored_rows() : st_->desc.stored_cols(); }
    bool is_transposed() const noexcept { return transposed_; }
    bool is_sparse() const noexcept { return st_->desc.is_sparse(); }
    const BlockPartition& stored_partition() const noexcept { return st_->desc.stored_partition(); }
    std::optional<std::uint64_t> limit() const noexcept { return st_->limit; }
    const ContextPtr& context() const noexcept { return st_->ctx; }
    std::uint64_t resident_bytes() const noexcept { return st_->resident; }

    Index nnz() const noexcept {
        Index n = 0;
        for (const auto& s : st_->slots) n += s.nnz;
        return n;
    }

    TiledMatrix transposed() const {
        TiledMatrix v = *this;
        v.transposed_ = !transposed_;
        return v;
    }

    /// Marks the matrix scratch: its block files go away with it.
    void set_temporary(bool t) noexcept { st_->temporary = t; }

    // Tile access in stored coordinates.
    std::pair<Range, Range> tile_ranges(std::size_t ti, std::size_t tj) const noexcept {
        return st_->ranges(st_->index(ti, tj));
    }
    Index tile_nnz(std::size_t ti, std::size_t tj) const noexcept { return st_->slots[st_->index(ti, tj)].nnz; }
    const Block<T>& tile(std::size_t ti, std::size_t tj) const { return st_->acquire(st_->index(ti, tj)); }

    /// Mutable dense tile; marks it dirty.
    DenseBlock<T>& dense_tile(std::size_t ti, std::size_t tj) {
        const std::size_t i = st_->index(ti, tj);
        Block<T>& b = st_->acquire(i);
        st_->slots[i].dirty = true;
        return std::get<DenseBlock<T>>(b);
    }

    void put_tile(std::size_t ti, std::size_t tj, Block<T> blk) {
        auto [r, c] = tile_ranges(ti, tj);
        const bool ok = std::visit([&](const auto& b) { return b.rows == r && b.cols == c; }, blk);
        if (!ok) throw DimensionError("tile ranges do not match the partition");
        if (std::holds_alternative<SparseBlock<T>>(blk) != is_sparse()) throw DimensionError("tile density mismatch");
        st_->put(st_->index(ti, tj), std::move(blk));
    }

    /// Drops every resident tile, writing dirty ones out first.
    void evict_all() {
        for (std::size_t i = 0; i < st_->slots.size(); ++i)
            if (st_->slots[i].data) st_->evict(i);
        for (auto& s : st_->slots)
            if (s.pending_data) {
                st_->finish_pending(s);
                st_->release(payload_bytes(*s.pending_data));
                s.pending_data.reset();
            }
    }

    /// Makes every tile and the manifest durable in the block store.
    void persist() {
        st_->flush();
        MatrixManifest man;
        man.id = id();
        man.rows = st_->desc.stored_rows();
        man.cols = st_->desc.stored_cols();
        man.density = st_->desc.density();
        man.precision = precision_of<T>();
        man.index_width = st_->desc.index_width();
        man.partition = st_->desc.stored_partition();
        for (const auto& s : st_->slots) man.tile_nnz.push_back(s.nnz);
        st_->ctx->store()->write_manifest(man);
        st_->temporary = false;
    }

    /// Logical matrix as a row-major double vector (diagnostics and tests).
    std::vector<double> gather() const {
        const Index R = st_->desc.stored_rows(), C = st_->desc.stored_cols();
        std::vector<double> out(R * C, 0.0);
        const auto& p = stored_partition();
        for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
            for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
                const Block<T>& b = tile(ti, tj);
                if (auto* d = std::get_if<DenseBlock<T>>(&b)) {
                    for (Index i = d->rows.begin; i < d->rows.end; ++i)
                        for (Index j = d->cols.begin; j < d->cols.end; ++j)
                            out[i * C + j] = static_cast<double>(widen(d->at(i, j)));
                } else {
                    const auto& s = std::get<SparseBlock<T>>(b);
                    for (std::size_t e = 0; e < s.nnz(); ++e)
                        out[s.row_idx[e] * C + s.col_idx[e]] = static_cast<double>(widen(s.values[e]));
                }
            }
        if (!transposed_) return out;
        std::vector<double> t(R * C);
        for (Index i = 0; i < R; ++i)
            for (Index j = 0; j < C; ++j) t[j * R + i] = out[i * C + j];
        return t;
    }

  private:
    std::shared_ptr<State> st_;
    bool transposed_ = false;
};

}  // namespace oocsvd
