#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "block.hpp"
#include "checksum.hpp"
#include "error.hpp"

namespace oocsvd {

static_assert(std::endian::native == std::endian::little, "block files are written in host order");

namespace fs = std::filesystem;

/// Identifies one tile of one matrix inside a workdir.
struct BlockId {
    std::uint32_t matrix = 0;
    std::uint32_t tile_row = 0;
    std::uint32_t tile_col = 0;
    friend bool operator==(const BlockId&, const BlockId&) = default;
};

inline constexpr std::array<char, 4> kBlockMagic{'X', 'S', 'V', 'D'};
inline constexpr std::uint32_t kBlockFormatVersion = 1;
inline constexpr std::size_t kBlockHeaderSize = 64;

/// Fixed 64-byte little-endian header that precedes every block payload.
///
///   0  magic "XSVD"         4
///   4  format version u32   4
///   8  matrix id u32        4
///  12  row begin u64        8
///  20  row end u64          8
///  28  col begin u64        8
///  36  col end u64          8
///  44  density u8           1   (0 dense, 1 sparse)
///  45  precision u8         1   (0 half, 1 single, 2 double)
///  46  index width u8       1   (bytes per index: 4 or 8)
///  47  reserved u8          1
///  48  payload length u64   8
///  56  payload checksum u64 8
///
/// Sparse payloads are the row-index array, the col-index array and the
/// value array, concatenated.
struct BlockFileHeader {
    std::uint32_t version = kBlockFormatVersion;
    std::uint32_t matrix_id = 0;
    Range rows;
    Range cols;
    Density density = Density::dense;
    Precision precision = Precision::double_;
    IndexWidth index_width = IndexWidth::bits32;
    std::uint64_t payload_length = 0;
    std::uint64_t payload_checksum = 0;

    std::array<std::byte, kBlockHeaderSize> encode() const noexcept {
        std::array<std::byte, kBlockHeaderSize> out{};
        auto put = [&](std::size_t off, auto v) { std::memcpy(out.data() + off, &v, sizeof(v)); };
        std::memcpy(out.data(), kBlockMagic.data(), 4);
        put(4, version);
        put(8, matrix_id);
        put(12, rows.begin);
        put(20, rows.end);
        put(28, cols.begin);
        put(36, cols.end);
        put(44, static_cast<std::uint8_t>(density));
        put(45, static_cast<std::uint8_t>(precision));
        put(46, static_cast<std::uint8_t>(index_width));
        put(48, payload_length);
        put(56, payload_checksum);
        return out;
    }

    static std::optional<BlockFileHeader> decode(std::span<const std::byte, kBlockHeaderSize> in) noexcept {
        if (std::memcmp(in.data(), kBlockMagic.data(), 4) != 0) return std::nullopt;
        BlockFileHeader h;
        auto get = [&](std::size_t off, auto& v) { std::memcpy(&v, in.data() + off, sizeof(v)); };
        std::uint8_t d, p, w;
        get(4, h.version);
        get(8, h.matrix_id);
        get(12, h.rows.begin);
        get(20, h.rows.end);
        get(28, h.cols.begin);
        get(36, h.cols.end);
        get(44, d);
        get(45, p);
        get(46, w);
        get(48, h.payload_length);
        get(56, h.payload_checksum);
        if (h.version != kBlockFormatVersion || d > 1 || p > 2 || (w != 4 && w != 8)) return std::nullopt;
        if (h.rows.end < h.rows.begin || h.cols.end < h.cols.begin) return std::nullopt;
        h.density = static_cast<Density>(d);
        h.precision = static_cast<Precision>(p);
        h.index_width = static_cast<IndexWidth>(w);
        return h;
    }
};

/// Thrown by the fault injector to emulate a process kill between two
/// write-side system calls.
struct SimulatedCrash : std::exception {
    const char* what() const noexcept override { return "simulated crash"; }
};

/// Counts write-side syscall boundaries and "crashes" at a chosen one.
class FaultInjector {
  public:
    void arm(std::uint64_t crash_at) noexcept {
        count_ = 0;
        target_ = crash_at;
        armed_ = true;
    }
    void disarm() noexcept { armed_ = false; }
    std::uint64_t boundaries_seen() const noexcept { return count_; }
    void reset_count() noexcept { count_ = 0; }

    void point() {
        const std::uint64_t n = count_.fetch_add(1);
        if (armed_ && n == target_) {
            armed_ = false;
            throw SimulatedCrash{};
        }
    }

  private:
    std::atomic<bool> armed_{false};
    std::atomic<std::uint64_t> target_{0};
    std::atomic<std::uint64_t> count_{0};
};

/// Writes `chunks` to `path` through a temp file: write, fsync, rename,
/// fsync directory. Readers never observe a partially written final path.
inline void durable_write(const fs::path& path, std::span<const std::span<const std::byte>> chunks,
                          FaultInjector* faults = nullptr) {
    auto fault = [&] {
        if (faults) faults->point();
    };
    const fs::path tmp = path.string() + ".tmp";
    fault();
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError(std::string("cannot create block file (") + std::strerror(errno) + ")", tmp.string());
    auto fail = [&](const char* what) {
        const int err = errno;
        ::close(fd);
        throw IoError(std::string(what) + " (" + std::strerror(err) + ")", tmp.string());
    };
    for (auto chunk : chunks) {
        fault();
        const std::byte* p = chunk.data();
        std::size_t left = chunk.size();
        while (left > 0) {
            const ssize_t n = ::write(fd, p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                fail("write failed");
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
    }
    fault();
    if (::fsync(fd) != 0) fail("fsync failed");
    ::close(fd);
    fault();
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed (" + ec.message() + ")", path.string());
    fault();
    const int dfd = ::open(path.parent_path().c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (dfd >= 0) {
        ::fsync(dfd);
        ::close(dfd);
    }
}

inline void durable_write(const fs::path& path, std::span<const std::byte> data, FaultInjector* faults = nullptr) {
    const std::span<const std::byte> one[1] = {data};
    durable_write(path, std::span<const std::span<const std::byte>>(one), faults);
}

inline std::vector<std::byte> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BlockAbsent("file not found", path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> buf(size);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!in) throw IoError("read failed", path.string());
    return buf;
}

/// Execution-plan step header. A step is `done` only once every output
/// matrix is durable.
struct StepRecord {
    enum class Status : std::uint8_t { pending = 0, done = 1 };

    std::uint64_t plan_id = 0;
    std::uint32_t step_id = 0;
    std::string operation;
    std::vector<std::uint32_t> inputs;   // matrix ids
    std::vector<std::uint32_t> outputs;  // matrix ids; every tile is checked on scan
    Status status = Status::pending;
    std::optional<std::uint64_t> rng_seed;
    std::vector<double> aux;  // small scalar results the step produced

    bool done() const noexcept { return status == Status::done; }
};

/// Per-matrix manifest: shape, partition and per-tile entry counts.
struct MatrixManifest {
    std::uint32_t id = 0;
    Index rows = 0;
    Index cols = 0;
    Density density = Density::dense;
    Precision precision = Precision::double_;
    IndexWidth index_width = IndexWidth::bits32;
    BlockPartition partition;
    std::vector<Index> tile_nnz;  // row-major over tiles
};

/// Persistent block store rooted at a working directory.
class BlockStore {
  public:
    explicit BlockStore(fs::path workdir) : root_(std::move(workdir)) {
        std::error_code ec;
        fs::create_directories(root_ / "blocks", ec);
        fs::create_directories(root_ / "matrices", ec);
        fs::create_directories(root_ / "steps", ec);
        if (!fs::is_directory(root_ / "blocks")) throw IoError("workdir is not writable", root_.string());
    }

    const fs::path& root() const noexcept { return root_; }
    FaultInjector& faults() noexcept { return faults_; }

    fs::path block_path(BlockId id) const {
        return root_ / "blocks" /
               ("m" + std::to_string(id.matrix) + "_" + std::to_string(id.tile_row) + "_" +
                std::to_string(id.tile_col) + ".blk");
    }
    fs::path manifest_path(std::uint32_t matrix) const {
        return root_ / "matrices" / ("m" + std::to_string(matrix) + ".json");
    }
    fs::path step_path(std::uint32_t step) const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "step_%06u.rec", step);
        return root_ / "steps" / buf;
    }

    template <StorageScalar T>
    BlockId store_block(const DenseBlock<T>& blk, BlockId id) {
        write_block_file(block_path(id), blk, id, &faults_);
        return id;
    }

    template <StorageScalar T>
    BlockId store_block(const SparseBlock<T>& blk, BlockId id) {
        write_block_file(block_path(id), blk, id, &faults_);
        return id;
    }

    template <StorageScalar T>
    BlockId store_block(const Block<T>& blk, BlockId id) {
        return std::visit([&](const auto& b) { return store_block(b, id); }, blk);
    }

    /// Loads and verifies a block. Missing file: BlockAbsent. Bad header,
    /// truncated payload or checksum mismatch: BlockCorrupt.
    template <StorageScalar T>
    Block<T> load_block(BlockId id) const {
        return read_block_file<T>(block_path(id));
    }

    // Single block files at arbitrary paths (same format as the store).
    template <StorageScalar T>
    static void write_block_file(const fs::path& path, const DenseBlock<T>& blk, BlockId id,
                                 FaultInjector* faults = nullptr) {
        BlockFileHeader h = header_for<T>(id, blk.rows, blk.cols, Density::dense, IndexWidth::bits64);
        const auto payload = std::as_bytes(std::span(blk.values));
        h.payload_length = payload.size();
        h.payload_checksum = payload_hash(payload);
        const auto head = h.encode();
        const std::span<const std::byte> chunks[] = {std::span<const std::byte>(head), payload};
        durable_write(path, chunks, faults);
    }

    template <StorageScalar T>
    static void write_block_file(const fs::path& path, const SparseBlock<T>& blk, BlockId id,
                                 FaultInjector* faults = nullptr) {
        BlockFileHeader h = header_for<T>(id, blk.rows, blk.cols, Density::sparse, blk.index_width());
        const auto r = blk.row_idx.bytes();
        const auto c = blk.col_idx.bytes();
        const auto v = std::as_bytes(std::span(blk.values));
        PayloadHash hash;
        hash.update(r);
        hash.update(c);
        hash.update(v);
        h.payload_length = r.size() + c.size() + v.size();
        h.payload_checksum = hash.digest();
        const auto head = h.encode();
        const std::span<const std::byte> chunks[] = {std::span<const std::byte>(head), r, c, v};
        durable_write(path, chunks, faults);
    }

    template <StorageScalar T>
    static Block<T> read_block_file(const fs::path& path) {
        if (!fs::exists(path)) throw BlockAbsent("block absent", path.string());
        const std::vector<std::byte> buf = read_file(path);
        const BlockFileHeader h = verified_header(buf, path);
        if (h.precision != precision_of<T>()) throw FormatError("block precision differs from requested type");
        const std::span<const std::byte> payload(buf.data() + kBlockHeaderSize, h.payload_length);
        if (h.density == Density::dense) {
            DenseBlock<T> d(h.rows, h.cols);
            if (payload.size() != d.payload_bytes()) throw BlockCorrupt("dense payload size mismatch", path.string());
            std::memcpy(d.values.data(), payload.data(), payload.size());
            return d;
        }
        const std::size_t ib = index_bytes(h.index_width);
        const std::size_t entry = 2 * ib + sizeof(T);
        if (payload.size() % entry != 0) throw BlockCorrupt("sparse payload size mismatch", path.string());
        const std::size_t n = payload.size() / entry;
        SparseBlock<T> s(h.rows, h.cols, h.index_width);
        s.row_idx.resize(n);
        s.col_idx.resize(n);
        s.values.resize(n);
        std::memcpy(s.row_idx.writable_bytes().data(), payload.data(), n * ib);
        std::memcpy(s.col_idx.writable_bytes().data(), payload.data() + n * ib, n * ib);
        std::memcpy(s.values.data(), payload.data() + 2 * n * ib, n * sizeof(T));
        if (!s.is_canonical()) throw BlockCorrupt("sparse block not canonical", path.string());
        return s;
    }

    /// Header of a block file (verified against its payload).
    static BlockFileHeader read_block_header(const fs::path& path) {
        if (!fs::exists(path)) throw BlockAbsent("block absent", path.string());
        return verified_header(read_file(path), path);
    }

    bool verify_block(BlockId id) const noexcept {
        try {
            const fs::path path = block_path(id);
            if (!fs::exists(path)) return false;
            const auto buf = read_file(path);
            verified_header(buf, path);
            return true;
        } catch (...) {
            return false;
        }
    }

    void remove_block(BlockId id) const noexcept {
        std::error_code ec;
        fs::remove(block_path(id), ec);
    }

    void write_manifest(const MatrixManifest& m) {
        nlohmann::json j{{"id", m.id},
                         {"rows", m.rows},
                         {"cols", m.cols},
                         {"density", static_cast<int>(m.density)},
                         {"precision", static_cast<int>(m.precision)},
                         {"index_width", static_cast<int>(m.index_width)},
                         {"row_cuts", m.partition.row_cuts},
                         {"col_cuts", m.partition.col_cuts},
                         {"tile_nnz", m.tile_nnz}};
        write_checked_json(manifest_path(m.id), std::move(j));
    }

    std::optional<MatrixManifest> read_manifest(std::uint32_t matrix) const {
        auto j = read_checked_json(manifest_path(matrix));
        if (!j) return std::nullopt;
        try {
            MatrixManifest m;
            m.id = (*j)["id"];
            m.rows = (*j)["rows"];
            m.cols = (*j)["cols"];
            m.density = static_cast<Density>((*j)["density"].get<int>());
            m.precision = static_cast<Precision>((*j)["precision"].get<int>());
            m.index_width = static_cast<IndexWidth>((*j)["index_width"].get<int>());
            m.partition.row_cuts = (*j)["row_cuts"].get<std::vector<Index>>();
            m.partition.col_cuts = (*j)["col_cuts"].get<std::vector<Index>>();
            m.tile_nnz = (*j)["tile_nnz"].get<std::vector<Index>>();
            if (m.tile_nnz.size() != m.partition.tile_count()) return std::nullopt;
            return m;
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
    }

    /// True when the manifest and every tile of the matrix verify.
    bool verify_matrix(std::uint32_t matrix) const {
        const auto m = read_manifest(matrix);
        if (!m) return false;
        for (std::uint32_t i = 0; i < m->partition.tile_rows(); ++i)
            for (std::uint32_t j = 0; j < m->partition.tile_cols(); ++j)
                if (!verify_block({matrix, i, j})) return false;
        return true;
    }

    void write_step(const StepRecord& rec) {
        nlohmann::json j{{"plan_id", rec.plan_id},
                         {"step_id", rec.step_id},
                         {"operation", rec.operation},
                         {"inputs", rec.inputs},
                         {"outputs", rec.outputs},
                         {"status", rec.done() ? "done" : "pending"},
                         {"aux", rec.aux}};
        if (rec.rng_seed) j["rng_seed"] = *rec.rng_seed;
        write_checked_json(step_path(rec.step_id), std::move(j));
    }

    /// All step records in step order. Unreadable records, and done records
    /// whose outputs fail verification, come back pending.
    std::vector<StepRecord> scan_plan() const {
        std::vector<StepRecord> out;
        std::error_code ec;
        for (const auto& entry : fs::directory_iterator(root_ / "steps", ec)) {
            const std::string name = entry.path().filename().string();
            if (name.size() != 15 || name.rfind("step_", 0) != 0 || entry.path().extension() != ".rec") continue;
            StepRecord rec;
            rec.step_id = static_cast<std::uint32_t>(std::stoul(name.substr(5, 6)));
            if (auto j = read_checked_json(entry.path())) {
                try {
                    rec.plan_id = (*j)["plan_id"];
                    rec.operation = (*j)["operation"];
                    rec.inputs = (*j)["inputs"].get<std::vector<std::uint32_t>>();
                    rec.outputs = (*j)["outputs"].get<std::vector<std::uint32_t>>();
                    rec.aux = (*j)["aux"].get<std::vector<double>>();
                    if (j->contains("rng_seed")) rec.rng_seed = (*j)["rng_seed"].get<std::uint64_t>();
                    rec.status = (*j)["status"] == "done" ? StepRecord::Status::done : StepRecord::Status::pending;
                    if ((*j)["step_id"].get<std::uint32_t>() != rec.step_id) rec.status = StepRecord::Status::pending;
                } catch (const nlohmann::json::exception&) {
                    rec.status = StepRecord::Status::pending;
                }
            }
            if (rec.done())
                for (auto m : rec.outputs)
                    if (!verify_matrix(m)) {
                        rec.status = StepRecord::Status::pending;
                        break;
                    }
            out.push_back(std::move(rec));
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.step_id < b.step_id; });
        return out;
    }

    /// JSON document with an embedded checksum of its canonical body.
    void write_checked_json(const fs::path& path, nlohmann::json body) {
        const std::string text = body.dump();
        nlohmann::json wrapped{{"body", std::move(body)}, {"checksum", payload_hash(std::as_bytes(std::span(text)))}};
        const std::string out = wrapped.dump();
        durable_write(path, std::as_bytes(std::span(out)), &faults_);
    }

    static std::optional<nlohmann::json> read_checked_json(const fs::path& path) {
        std::ifstream in(path);
        if (!in) return std::nullopt;
        std::stringstream ss;
        ss << in.rdbuf();
        auto j = nlohmann::json::parse(ss.str(), nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("body") || !j.contains("checksum")) return std::nullopt;
        const std::string text = j["body"].dump();
        if (!j["checksum"].is_number_unsigned() ||
            j["checksum"].get<std::uint64_t>() != payload_hash(std::as_bytes(std::span(text))))
            return std::nullopt;
        return j["body"];
    }

  private:
    template <StorageScalar T>
    static BlockFileHeader header_for(BlockId id, Range r, Range c, Density d, IndexWidth w) {
        BlockFileHeader h;
        h.matrix_id = id.matrix;
        h.rows = r;
        h.cols = c;
        h.density = d;
        h.precision = precision_of<T>();
        h.index_width = w;
        return h;
    }

    static BlockFileHeader verified_header(const std::vector<std::byte>& buf, const fs::path& path) {
        if (buf.size() < kBlockHeaderSize) throw BlockCorrupt("truncated header", path.string());
        const auto h = BlockFileHeader::decode(std::span<const std::byte, kBlockHeaderSize>(buf.data(), kBlockHeaderSize));
        if (!h) throw BlockCorrupt("bad block header", path.string());
        if (buf.size() != kBlockHeaderSize + h->payload_length) throw BlockCorrupt("truncated payload", path.string());
        const std::span<const std::byte> payload(buf.data() + kBlockHeaderSize, h->payload_length);
        if (payload_hash(payload) != h->payload_checksum) throw BlockCorrupt("checksum mismatch", path.string());
        return *h;
    }

    fs::path root_;
    FaultInjector faults_;
};

/// Free-function forms over a workdir path.
template <StorageScalar T>
BlockId store_block(const Block<T>& blk, const fs::path& workdir, BlockId id) {
    return BlockStore(workdir).store_block(blk, id);
}

template <StorageScalar T>
Block<T> load_block(BlockId id, const fs::path& workdir) {
    if (!fs::exists(workdir)) throw BlockAbsent("workdir absent", workdir.string());
    return BlockStore(workdir).load_block<T>(id);
}

}  // namespace oocsvd
