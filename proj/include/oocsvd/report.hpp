#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "store.hpp"
#include "tiled_matrix.hpp"

namespace oocsvd {

/// Writes a dense matrix as one native block file covering the whole matrix.
template <StorageScalar T>
void export_block_file(const TiledMatrix<T>& m, const std::filesystem::path& path) {
    DenseBlock<T> all(Range{0, m.rows()}, Range{0, m.cols()});
    const auto v = m.gather();
    for (std::size_t i = 0; i < v.size(); ++i) all.values[i] = narrow<T>(v[i]);
    BlockStore::write_block_file(path, all, BlockId{m.id(), 0, 0});
}

/// Reads a whole-matrix block file as row-major doubles.
template <StorageScalar T>
std::vector<double> import_block_file(const std::filesystem::path& path, Index* rows = nullptr, Index* cols = nullptr) {
    auto b = std::get<DenseBlock<T>>(BlockStore::read_block_file<T>(path));
    if (rows) *rows = b.rows.size();
    if (cols) *cols = b.cols.size();
    std::vector<double> out(b.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(widen(b.values[i]));
    return out;
}

/// One value per line, round-trip precision.
inline void write_values_text(const std::vector<double>& values, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    char buf[40];
    for (double v : values) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << '\n';
    }
    if (!out) throw IoError("cannot write values", path.string());
}

inline std::vector<double> read_values_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open values file", path.string());
    std::vector<double> v;
    double x;
    while (in >> x) v.push_back(x);
    return v;
}

/// Flat key<TAB>value profile.
class ProfileReport {
  public:
    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    void set(const std::string& key, double value) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.9g", value);
        entries_[key] = buf;
    }
    void set(const std::string& key, std::uint64_t value) { entries_[key] = std::to_string(value); }

    const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        for (const auto& [k, v] : entries_) out << k << '\t' << v << '\n';
        if (!out) throw IoError("cannot write profile", path.string());
    }

    static ProfileReport read(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open profile", path.string());
        ProfileReport r;
        std::string line;
        while (std::getline(in, line)) {
            const auto tab = line.find('\t');
            if (tab != std::string::npos) r.entries_[line.substr(0, tab)] = line.substr(tab + 1);
        }
        return r;
    }

  private:
    std::map<std::string, std::string> entries_;
};

}  // namespace oocsvd
