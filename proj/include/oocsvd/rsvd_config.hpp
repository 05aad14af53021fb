#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "checksum.hpp"
#include "kernels/multiply.hpp"
#include "kernels/tile_ops.hpp"

namespace oocsvd {

inline constexpr const char* kStageNames[] = {"Text Parsing", "Preparation of O", "O*A^T",          "Orthogonalization",
                                              "A^T*Q_r",      "SVD0 Preparation", "SVD0",           "Postprocessing"};

struct RsvdConfig {
    std::size_t rank = 1;
    std::optional<unsigned> power;  // empty: choose automatically
    unsigned q_max = 5;
    double tau = 1e-6;
    std::uint64_t seed = 0;
    std::size_t oversampling = 0;
    /// Recover singular values from the power matrix (A A^T)^q A instead of
    /// the sketch-path projection.
    bool gram_path = false;
    /// Free-form identity of the input (file path, etc.) folded into the digest.
    std::string input_tag;
    /// Stored verbatim in the plan header for front ends.
    nlohmann::json extra = nlohmann::json::object();

    /// Invoked after each step becomes durable.
    std::function<void(std::uint32_t step)> after_step;
    /// Checked between steps; when set the run stops with Interrupted.
    const std::atomic<bool>* stop = nullptr;

    void validate(Index m, Index n) const {
        if (rank < 1 || rank > std::min(m, n)) throw DimensionError("rank must lie in [1, min(m, n)]");
        if (power && *power > q_max) throw DimensionError("power iteration count exceeds q_max");
        if (!(tau >= 0)) throw DimensionError("tau must be nonnegative");
    }
    std::size_t sketch_cols(Index m, Index n) const {
        return static_cast<std::size_t>(std::min<Index>(rank + oversampling, std::min(m, n)));
    }
};

template <StorageScalar T>
struct RsvdResult {
    TiledMatrix<T> U;       // m x r
    std::vector<double> S;  // r, non-increasing
    TiledMatrix<T> V;       // n x r
    unsigned chosen_q = 0;
    std::vector<double> nu;  // average L2 norm per item of each sketch Y_0..Y_q
    bool rank_deficient = false;
    std::map<std::string, double> stage_seconds;
};

/// Digest of everything that determines a run's outputs.
inline nlohmann::json config_body(const RsvdConfig& c, Precision p, const MemoryBudget& b, const MatrixDescriptor& a) {
    auto opt = [](const std::optional<std::uint64_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    return {{"rank", c.rank},
            {"power", c.power ? nlohmann::json(*c.power) : nlohmann::json("auto")},
            {"q_max", c.q_max},
            {"tau", c.tau},
            {"seed", c.seed},
            {"oversampling", c.oversampling},
            {"gram_path", c.gram_path},
            {"precision", std::string(to_string(p))},
            {"budget", {{"per_matrix", opt(b.per_matrix)}, {"new_matrix", opt(b.new_matrix)}, {"global", opt(b.global)}}},
            {"input",
             {{"id", a.id()},
              {"rows", a.rows()},
              {"cols", a.cols()},
              {"nnz", a.nnz()},
              {"sparse", a.is_sparse()},
              {"tag", c.input_tag}}}};
}

inline std::uint64_t config_digest(const nlohmann::json& body) {
    const std::string text = body.dump();
    return payload_hash(std::as_bytes(std::span(text)));
}

/// Automatic choice of q from the per-item norms nu_0..nu_q of the sketches
/// Y_j = (A A^T)^j A O. Returns true when q = nu.size() - 1 is final.
inline bool auto_q_stop(const std::vector<double>& nu, unsigned q_max, double tau) {
    const std::size_t q = nu.size() - 1;
    if (q >= q_max) return true;
    if (q == 0) return false;
    if (nu[q] < tau * nu[0]) return true;
    auto rho = [&](std::size_t j) { return j == 0 ? 1.0 : (nu[j - 1] == 0 ? 0.0 : nu[j] / nu[j - 1]); };
    return std::abs(rho(q) - rho(q - 1)) <= 0.01 * rho(q);
}

/// Exponent s >= 0 such that storing 2^-s * (X Y) keeps entries well inside
/// T's range, from the bound max|X| * max|Y| * inner.
template <StorageScalar T>
int product_scale(double max_x, double max_y, Index inner) {
    const double bound = max_x * max_y * static_cast<double>(inner);
    if (!(bound > 0) || !std::isfinite(bound)) return 0;
    const int target = std::is_same_v<T, Half> ? 8 : (std::is_same_v<T, float> ? 40 : 400);
    return std::max(0, std::ilogb(bound) - target);
}

/// Average L2 norm per item, ||Y||_F / sqrt(rows * cols), of 2^scale * Y.
template <StorageScalar T>
double norm_per_item(const TiledMatrix<T>& Y, int scale = 0) {
    return std::ldexp(frobenius_norm(Y), scale) /
           std::sqrt(static_cast<double>(Y.rows()) * static_cast<double>(Y.cols()));
}

/// Y = (A A^T)^q A O evaluated right to left as 2q + 1 thin products; the
/// two intermediate buffers alternate so only thin matrices ever exist.
template <StorageScalar T>
TiledMatrix<T> power_apply(const TiledMatrix<T>& A, const TiledMatrix<T>& O, unsigned q, std::uint32_t id) {
    if (A.cols() != O.rows()) throw DimensionError("power_apply: inner dimensions differ");
    const ContextPtr& ctx = A.context();
    if (q == 0) return block_multiply<T>(A, O, id);
    auto Y = block_multiply<T>(A, O, ctx->allocate_temp_id());
    Y.set_temporary(true);
    for (unsigned i = 0; i < q; ++i) {
        auto Z = block_multiply<T>(A.transposed(), Y, ctx->allocate_temp_id());
        Z.set_temporary(true);
        Y = block_multiply<T>(A, Z, i + 1 == q ? id : ctx->allocate_temp_id());
        if (i + 1 < q) Y.set_temporary(true);
    }
    return Y;
}

}  // namespace oocsvd
