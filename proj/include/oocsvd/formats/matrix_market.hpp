#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "../block.hpp"
#include "../error.hpp"

namespace oocsvd {

struct MatrixMarketHeader {
    enum class Field { real, integer, pattern };
    enum class Symmetry { general, symmetric, skew_symmetric };

    Index rows = 0;
    Index cols = 0;
    Index entries = 0;  // as declared; symmetric files expand beyond this
    Field field = Field::real;
    Symmetry symmetry = Symmetry::general;
};

struct MatrixMarketData {
    MatrixMarketHeader header;
    std::vector<Triplet> triplets;  // 0-based, sorted by (row, col), duplicates summed
};

namespace detail {

inline std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return out;
}

inline std::vector<std::string_view> tokens(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        const std::size_t b = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > b) out.push_back(line.substr(b, i - b));
    }
    return out;
}

template <class N>
N parse_number(std::string_view tok, std::size_t line, const char* what) {
    N v{};
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
        throw ParseError("non-numeric " + std::string(what) + " '" + std::string(tok) + "'", line,
                         ParseError::Kind::non_numeric);
    return v;
}

}  // namespace detail

/// Streams a coordinate Matrix Market body, calling fn(row, col, value) with
/// 0-based indices for every stored entry, symmetric mirrors included.
template <class Fn>
MatrixMarketHeader parse_matrix_market(std::istream& in, Fn&& fn) {
    using H = MatrixMarketHeader;
    H h;
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError("empty input", 1);
    {
        auto t = detail::tokens(line);
        if (t.size() != 5 || detail::lower(t[0]) != "%%matrixmarket" || detail::lower(t[1]) != "matrix")
            throw ParseError("malformed header", lineno);
        const std::string fmt = detail::lower(t[2]), field = detail::lower(t[3]), sym = detail::lower(t[4]);
        if (fmt != "coordinate") throw FormatError("only coordinate Matrix Market files are supported");
        if (field == "real" || field == "double") h.field = H::Field::real;
        else if (field == "integer") h.field = H::Field::integer;
        else if (field == "pattern") h.field = H::Field::pattern;
        else if (field == "complex") throw FormatError("complex Matrix Market files are not supported");
        else throw ParseError("unknown field '" + field + "'", lineno);
        if (sym == "general") h.symmetry = H::Symmetry::general;
        else if (sym == "symmetric") h.symmetry = H::Symmetry::symmetric;
        else if (sym == "skew-symmetric") h.symmetry = H::Symmetry::skew_symmetric;
        else if (sym == "hermitian") throw FormatError("hermitian Matrix Market files are not supported");
        else throw ParseError("unknown symmetry '" + sym + "'", lineno);
    }
    bool sized = false;
    Index seen = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto t = detail::tokens(line);
        if (t.empty() || t[0][0] == '%') continue;
        if (!sized) {
            if (t.size() != 3) throw ParseError("size line needs rows, cols and entry count", lineno);
            h.rows = detail::parse_number<Index>(t[0], lineno, "row count");
            h.cols = detail::parse_number<Index>(t[1], lineno, "column count");
            h.entries = detail::parse_number<Index>(t[2], lineno, "entry count");
            if (h.rows == 0 || h.cols == 0) throw ParseError("matrix dimensions must be positive", lineno);
            if (h.symmetry != H::Symmetry::general && h.rows != h.cols)
                throw ParseError("symmetric matrix must be square", lineno);
            sized = true;
            continue;
        }
        const std::size_t want = h.field == H::Field::pattern ? 2 : 3;
        if (t.size() != want) throw ParseError("expected " + std::to_string(want) + " fields per entry", lineno);
        if (seen == h.entries) throw ParseError("more entries than declared", lineno, ParseError::Kind::count_mismatch);
        const Index i = detail::parse_number<Index>(t[0], lineno, "row index");
        const Index j = detail::parse_number<Index>(t[1], lineno, "column index");
        if (i < 1 || i > h.rows || j < 1 || j > h.cols)
            throw ParseError("index out of declared bounds", lineno, ParseError::Kind::out_of_bounds);
        const double v = h.field == H::Field::pattern ? 1.0 : detail::parse_number<double>(t[2], lineno, "value");
        if (h.symmetry != H::Symmetry::general && j > i)
            throw ParseError("symmetric entry above the diagonal", lineno);
        fn(i - 1, j - 1, v);
        if (h.symmetry != H::Symmetry::general && i != j)
            fn(j - 1, i - 1, h.symmetry == H::Symmetry::skew_symmetric ? -v : v);
        ++seen;
    }
    if (!sized) throw ParseError("missing size line", lineno);
    if (seen != h.entries)
        throw ParseError("declared " + std::to_string(h.entries) + " entries, found " + std::to_string(seen), lineno,
                         ParseError::Kind::count_mismatch);
    return h;
}

/// Whole-file parse: entries sorted by (row, col) with duplicates summed.
inline MatrixMarketData parse_matrix_market(std::istream& in) {
    MatrixMarketData d;
    d.header = parse_matrix_market(in, [&](Index i, Index j, double v) { d.triplets.push_back({i, j, v}); });
    auto& t = d.triplets;
    std::sort(t.begin(), t.end(), [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
    std::size_t w = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (w > 0 && t[w - 1].row == t[i].row && t[w - 1].col == t[i].col) t[w - 1].value += t[i].value;
        else t[w++] = t[i];
    }
    t.resize(w);
    return d;
}

inline MatrixMarketData read_matrix_market(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open Matrix Market file", path.string());
    return parse_matrix_market(in);
}

/// Coordinate real general output, 1-based, entries in the given order.
inline void write_matrix_market(std::ostream& out, Index rows, Index cols, const std::vector<Triplet>& entries) {
    out << "%%MatrixMarket matrix coordinate real general\n" << rows << ' ' << cols << ' ' << entries.size() << '\n';
    char buf[64];
    for (const auto& e : entries) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, e.value);
        (void)ec;
        out << e.row + 1 << ' ' << e.col + 1 << ' ' << std::string_view(buf, p - buf) << '\n';
    }
}

}  // namespace oocsvd
