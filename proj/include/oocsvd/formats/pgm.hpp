#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../tiled_matrix.hpp"

namespace oocsvd {

/// 8-bit greyscale image, row-major.
struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

struct PgmHeader {
    std::size_t width = 0;
    std::size_t height = 0;
    std::streamoff data_offset = 0;
};

namespace detail {

inline std::size_t pgm_number(std::istream& in) {
    int c = in.get();
    for (;;) {
        while (c != EOF && std::isspace(c)) c = in.get();
        if (c != '#') break;
        while (c != EOF && c != '\n') c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError("malformed PGM header");
    std::size_t v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + static_cast<std::size_t>(c - '0');
        if (v > (std::size_t(1) << 31)) throw FormatError("PGM dimension too large");
        c = in.get();
    }
    if (c == EOF || !std::isspace(c)) throw FormatError("malformed PGM header");
    return v;
}

inline std::uint8_t to_grey(double v) {
    if (!(v > 0)) return 0;  // also NaN
    if (v >= 255) return 255;
    return static_cast<std::uint8_t>(std::lround(v));
}

}  // namespace detail

/// Parses a binary P5 header with maxval 255; leaves the stream at the pixels.
inline PgmHeader read_pgm_header(std::istream& in) {
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5') throw FormatError("not a binary (P5) PGM file");
    PgmHeader h;
    h.width = detail::pgm_number(in);
    h.height = detail::pgm_number(in);
    const std::size_t maxval = detail::pgm_number(in);
    if (maxval != 255) throw FormatError("only PGM maxval 255 is supported");
    if (h.width == 0 || h.height == 0) throw FormatError("PGM image is empty");
    h.data_offset = in.tellg();
    return h;
}

inline PgmImage read_pgm(std::istream& in) {
    const PgmHeader h = read_pgm_header(in);
    PgmImage img{h.width, h.height, std::vector<std::uint8_t>(h.width * h.height)};
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw FormatError("PGM pixel data truncated");
    return img;
}

inline void write_pgm(std::ostream& out, const PgmImage& img) {
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

/// Image as a dense height x width matrix, read tile by tile.
template <StorageScalar T>
TiledMatrix<T> load_pgm(ContextPtr ctx, std::uint32_t id, const std::filesystem::path& path,
                        MatrixRole role = MatrixRole::input) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open PGM file", path.string());
    const PgmHeader h = read_pgm_header(in);
    auto m = TiledMatrix<T>::zeros(std::move(ctx), id, h.height, h.width, role);
    const auto& p = m.stored_partition();
    std::vector<std::uint8_t> row;
    for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
            auto [r, c] = m.tile_ranges(ti, tj);
            DenseBlock<T> b(r, c);
            row.resize(c.size());
            for (Index i = r.begin; i < r.end; ++i) {
                in.seekg(h.data_offset + static_cast<std::streamoff>(i * h.width + c.begin));
                in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
                if (in.gcount() != static_cast<std::streamsize>(row.size()))
                    throw FormatError("PGM pixel data truncated");
                for (Index j = c.begin; j < c.end; ++j) b.at(i, j) = narrow<T>(double(row[j - c.begin]));
            }
            m.put_tile(ti, tj, std::move(b));
        }
    return m;
}

/// Writes a dense matrix as a P5 image, clamping to [0, 255] and rounding.
template <StorageScalar T>
void save_pgm(const TiledMatrix<T>& m, const std::filesystem::path& path) {
    if (m.is_sparse() || m.is_transposed()) throw FormatError("PGM output needs a canonical dense matrix");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create PGM file", path.string());
    out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
    const std::streamoff base = out.tellp();
    const auto& p = m.stored_partition();
    std::vector<std::uint8_t> row;
    for (std::size_t ti = 0; ti < p.tile_rows(); ++ti)
        for (std::size_t tj = 0; tj < p.tile_cols(); ++tj) {
            const auto& b = std::get<DenseBlock<T>>(m.tile(ti, tj));
            row.resize(b.cols.size());
            for (Index i = b.rows.begin; i < b.rows.end; ++i) {
                for (Index j = b.cols.begin; j < b.cols.end; ++j)
                    row[j - b.cols.begin] = detail::to_grey(static_cast<double>(widen(b.at(i, j))));
                out.seekp(base + static_cast<std::streamoff>(i * m.cols() + b.cols.begin));
                out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
            }
        }
    if (!out) throw IoError("failed writing PGM file", path.string());
}

}  // namespace oocsvd
