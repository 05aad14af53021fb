#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../checksum.hpp"
#include "../error.hpp"
#include "../tiled_matrix.hpp"

namespace oocsvd {

// Whole-matrix sparse layout: <prefix>.rows, <prefix>.cols and <prefix>.vals
// hold the i-th COO triple at position i (little-endian), <prefix>.desc
// records shape, widths and a checksum per file.

namespace detail {

inline std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* ext) {
    return prefix.string() + ext;
}

class HashedWriter {
  public:
    explicit HashedWriter(const std::filesystem::path& p) : path_(p), out_(p, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot create file", p.string());
    }
    template <class V>
    void put(V v) {
        const auto bytes = std::as_bytes(std::span(&v, 1));
        hash_.update(bytes);
        out_.write(reinterpret_cast<const char*>(bytes.data()), sizeof(V));
    }
    std::uint64_t finish() {
        out_.flush();
        if (!out_) throw IoError("write failed", path_.string());
        return hash_.digest();
    }

  private:
    std::filesystem::path path_;
    std::ofstream out_;
    PayloadHash hash_;
};

template <class V>
std::vector<V> read_array(const std::filesystem::path& p, std::uint64_t count, std::uint64_t checksum) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw BlockAbsent("sparse array file missing", p.string());
    std::vector<V> v(count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(V)));
    if (static_cast<std::uint64_t>(in.gcount()) != count * sizeof(V) || in.peek() != EOF)
        throw BlockCorrupt("sparse array file has the wrong length", p.string());
    if (payload_hash(std::as_bytes(std::span(v))) != checksum)
        throw BlockCorrupt("sparse array checksum mismatch", p.string());
    return v;
}

}  // namespace detail

/// Writes a sparse matrix tile by tile into the three-file layout.
template <StorageScalar T>
void save_sparse_soa(const TiledMatrix<T>& m, const std::filesystem::path& prefix) {
    if (!m.is_sparse() || m.is_transposed()) throw FormatError("expected a canonical sparse matrix");
    const bool wide = m.descriptor().index_width() == IndexWidth::bits64;
    detail::HashedWriter rows(detail::with_suffix(prefix, ".rows")), cols(detail::with_suffix(prefix, ".cols")),
        vals(detail::with_suffix(prefix, ".vals"));
    std::uint64_t count = 0;
    const auto& p = m.stored_partition();
    for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
            const auto& b = std::get<SparseBlock<T>>(m.tile(ti, tj));
            for (std::size_t e = 0; e < b.nnz(); ++e) {
                if (wide) {
                    rows.put<std::uint64_t>(b.row_idx[e]);
                    cols.put<std::uint64_t>(b.col_idx[e]);
                } else {
                    rows.put<std::uint32_t>(static_cast<std::uint32_t>(b.row_idx[e]));
                    cols.put<std::uint32_t>(static_cast<std::uint32_t>(b.col_idx[e]));
                }
                vals.put(b.values[e]);
                ++count;
            }
        }
    nlohmann::json d{{"rows", m.rows()},
                     {"cols", m.cols()},
                     {"nnz", count},
                     {"index_bytes", wide ? 8 : 4},
                     {"precision", std::string(to_string(precision_of<T>()))},
                     {"checksums", {rows.finish(), cols.finish(), vals.finish()}}};
    std::ofstream out(detail::with_suffix(prefix, ".desc"), std::ios::trunc);
    out << d.dump(2) << '\n';
    if (!out) throw IoError("cannot write descriptor", detail::with_suffix(prefix, ".desc").string());
}

/// Reads the three-file layout back into a tiled sparse matrix.
template <StorageScalar T>
TiledMatrix<T> load_sparse_soa(ContextPtr ctx, std::uint32_t id, const std::filesystem::path& prefix,
                               MatrixRole role = MatrixRole::input) {
    std::ifstream din(detail::with_suffix(prefix, ".desc"));
    if (!din) throw BlockAbsent("sparse descriptor missing", detail::with_suffix(prefix, ".desc").string());
    auto d = nlohmann::json::parse(din, nullptr, false);
    if (d.is_discarded() || !d.contains("checksums") || d["checksums"].size() != 3)
        throw BlockCorrupt("sparse descriptor unreadable", detail::with_suffix(prefix, ".desc").string());
    if (d["precision"] != std::string(to_string(precision_of<T>()))) throw FormatError("stored precision differs");
    const std::uint64_t nnz = d["nnz"];
    const bool wide = d["index_bytes"] == 8;
    const auto& cs = d["checksums"];
    std::vector<Triplet> t(nnz);
    auto fill = [&](auto tag) {
        using I = decltype(tag);
        auto r = detail::read_array<I>(detail::with_suffix(prefix, ".rows"), nnz, cs[0]);
        auto c = detail::read_array<I>(detail::with_suffix(prefix, ".cols"), nnz, cs[1]);
        for (std::uint64_t i = 0; i < nnz; ++i) {
            t[i].row = r[i];
            t[i].col = c[i];
        }
    };
    if (wide) fill(std::uint64_t{});
    else fill(std::uint32_t{});
    auto v = detail::read_array<T>(detail::with_suffix(prefix, ".vals"), nnz, cs[2]);
    for (std::uint64_t i = 0; i < nnz; ++i) t[i].value = static_cast<double>(widen(v[i]));
    return TiledMatrix<T>::from_triplets(std::move(ctx), id, d["rows"], d["cols"], std::move(t),
                                         wide ? IndexWidth::bits64 : IndexWidth::bits32, role);
}

}  // namespace oocsvd
