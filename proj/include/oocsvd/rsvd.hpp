#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kernels/multiply.hpp"
#include "kernels/qr.hpp"
#include "kernels/svd_small.hpp"
#include "kernels/tile_ops.hpp"
#include "rng.hpp"
#include "rsvd_config.hpp"

namespace oocsvd {

// Matrix ids owned by the pipeline inside a workdir.
namespace pipeline_ids {
inline constexpr std::uint32_t O = 101, Y = 102, Z = 103, Q = 104, Bt = 105, Qb = 106, Rb = 107, Us = 108, S = 109,
                               Ws = 110, U = 111, V = 112;
inline constexpr std::uint32_t first = O, last = V;
}  // namespace pipeline_ids

/// Plan header of a workdir, if present and intact.
inline std::optional<nlohmann::json> read_plan(const std::filesystem::path& workdir) {
    return BlockStore::read_checked_json(workdir / "plan.json");
}

/// One randomized SVD run. With a workdir every step is recorded durably and
/// an interrupted run continues from its first unfinished step.
template <StorageScalar T>
class RsvdRun {
  public:
    using Clock = std::chrono::steady_clock;

    RsvdRun(ContextPtr ctx, RsvdConfig cfg) : ctx_(std::move(ctx)), cfg_(std::move(cfg)) {
        for (const char* s : kStageNames) res_.stage_seconds[s] = 0.0;
    }

    /// Fresh run on A; any previous plan in the workdir is discarded.
    RsvdResult<T> start(const TiledMatrix<T>& A) {
        if (A.id() >= pipeline_ids::first && A.id() <= pipeline_ids::last)
            throw DimensionError("input matrix id collides with pipeline matrices");
        cfg_.validate(A.rows(), A.cols());
        A_ = A;
        if (BlockStore* st = ctx_->store()) {
            std::error_code ec;
            for (const auto& e : std::filesystem::directory_iterator(st->root() / "steps", ec))
                std::filesystem::remove(e.path(), ec);
            auto body = config_body(cfg_, precision_of<T>(), ctx_->budget(), A.descriptor());
            st->write_checked_json(st->root() / "plan.json", {{"digest", config_digest(body)},
                                                               {"config", body},
                                                               {"input_id", A.id()},
                                                               {"extra", cfg_.extra}});
        }
        return execute(0);
    }

    /// Continues the plan in the context's workdir. The configuration must
    /// match the one the plan was started with.
    RsvdResult<T> resume() {
        BlockStore* st = ctx_->store();
        if (!st) throw NoPlanError("no workdir configured");
        auto plan = read_plan(st->root());
        if (!plan) throw NoPlanError("no plan found in " + st->root().string());
        const auto& stored = (*plan)["config"];
        if (stored["precision"] != std::string(to_string(precision_of<T>())))
            throw ConfigMismatch("plan was started at " + stored["precision"].get<std::string>() + " precision");
        const auto records = st->scan_plan();
        std::uint32_t done = 0;
        while (done < records.size() && records[done].step_id == done && records[done].done()) ++done;
        if (done == 0) throw NoPlanError("input was never ingested into the workdir");
        A_ = TiledMatrix<T>::open(ctx_, (*plan)["input_id"].get<std::uint32_t>(), MatrixRole::input);
        auto body = config_body(cfg_, precision_of<T>(), ctx_->budget(), A_.descriptor());
        if (config_digest(body) != (*plan)["digest"].get<std::uint64_t>())
            throw ConfigMismatch("configuration differs from the plan in the workdir");
        cfg_.validate(A_.rows(), A_.cols());
        records_ = records;
        return execute(done);
    }

    /// Number of steps a plan with power count q has (ingest included).
    static std::uint32_t step_count(unsigned q) { return 9 + 2 * q; }

  private:
    using W = compute_t<T>;

    template <class Compute, class Load>
    void step(std::uint32_t id, const char* op, const char* stage, std::vector<std::uint32_t> inputs,
              std::vector<std::uint32_t> outputs, Compute&& compute, Load&& load) {
        if (id < reuse_) {
            load(records_[id].aux);
            return;
        }
        if (cfg_.stop && cfg_.stop->load()) throw Interrupted("stop requested before step " + std::to_string(id));
        const auto t0 = Clock::now();
        std::vector<double> aux = compute();
        BlockStore* st = ctx_->store();
        if (st) {
            for (auto m : outputs) persist(m);
            StepRecord rec;
            rec.step_id = id;
            rec.operation = op;
            rec.inputs = std::move(inputs);
            rec.outputs = std::move(outputs);
            rec.status = StepRecord::Status::done;
            rec.aux = aux;
            if (std::string(op) == "sketch") rec.rng_seed = cfg_.seed;
            st->write_step(rec);
        }
        res_.stage_seconds[stage] += std::chrono::duration<double>(Clock::now() - t0).count();
        if (cfg_.after_step) cfg_.after_step(id);
    }

    void persist(std::uint32_t m) {
        using namespace pipeline_ids;
        if (m == A_.id()) A_.persist();
        else if (m == O) O_.persist();
        else if (m == Y) Y_.persist();
        else if (m == Z) Z_.persist();
        else if (m == Q) Q_.persist();
        else if (m == Bt) Bt_.persist();
        else if (m == Qb) Qb_.persist();
        else if (m == Rb) Rb_.persist();
        else if (m == Us) Us_.persist();
        else if (m == S) S_.persist();
        else if (m == Ws) Ws_.persist();
        else if (m == U) res_.U.persist();
        else if (m == V) res_.V.persist();
    }

    template <StorageScalar M>
    TiledMatrix<M> reopen(std::uint32_t id) {
        return TiledMatrix<M>::open(ctx_, id);
    }

    /// 2^-s (X Y) with s chosen from the operands' magnitudes; returns s.
    template <StorageScalar TX, StorageScalar TY>
    int scaled_product(const TiledMatrix<TX>& X, double max_x, const TiledMatrix<TY>& Y, TiledMatrix<T>& out,
                       std::uint32_t id) {
        const int s = product_scale<T>(max_x, max_abs(Y), X.cols());
        out = TiledMatrix<T>();
        out = block_multiply<T>(X, Y, id, MatrixRole::created, -s);
        return s;
    }

    RsvdResult<T> execute(std::uint32_t reuse) {
        using namespace pipeline_ids;
        reuse_ = reuse;
        const Index m = A_.rows(), n = A_.cols();
        const std::size_t k = cfg_.sketch_cols(m, n);
        const std::size_t r = cfg_.rank;
        const std::uint32_t a = A_.id();

        step(0, "ingest", "Text Parsing", {}, {a}, [&] { return std::vector<double>{}; }, [](const auto&) {});
        step(
            1, "sketch", "Preparation of O", {}, {O},
            [&] {
                O_ = gaussian_matrix<T>(ctx_, O, n, k, cfg_.seed);
                return std::vector<double>{};
            },
            [&](const auto&) { O_ = reopen<T>(O); });

        double max_a = 0;
        int E = 0;  // stored sketch = 2^-E * true sketch
        step(
            2, "AO", "O*A^T", {a, O}, {Y},
            [&] {
                max_a = max_abs(A_);
                E = scaled_product(A_, max_a, O_, Y_, Y);
                res_.nu = {norm_per_item(Y_, E)};
                return std::vector<double>{max_a, double(E), res_.nu[0]};
            },
            [&](const auto& aux) {
                max_a = aux.at(0);
                E = int(aux.at(1));
                res_.nu = {aux.at(2)};
                Y_ = reopen<T>(Y);
            });

        unsigned q = 0;
        auto more = [&] { return cfg_.power ? q < *cfg_.power : !auto_q_stop(res_.nu, cfg_.q_max, cfg_.tau); };
        while (more()) {
            ++q;
            const std::uint32_t s1 = 1 + 2 * q, s2 = 2 + 2 * q;
            step(
                s1, "AtY", "O*A^T", {a, Y}, {Z},
                [&] {
                    E += scaled_product(A_.transposed(), max_a, Y_, Z_, Z);
                    return std::vector<double>{double(E)};
                },
                [&](const auto& aux) {
                    E = int(aux.at(0));
                    Z_ = reopen<T>(Z);
                });
            step(
                s2, "AZ", "O*A^T", {a, Z}, {Y},
                [&] {
                    Y_ = TiledMatrix<T>();
                    E += scaled_product(A_, max_a, Z_, Y_, Y);
                    res_.nu.push_back(norm_per_item(Y_, E));
                    return std::vector<double>{double(E), res_.nu.back()};
                },
                [&](const auto& aux) {
                    E = int(aux.at(0));
                    res_.nu.push_back(aux.at(1));
                    Y_ = reopen<T>(Y);
                });
        }
        res_.chosen_q = q;
        const std::uint32_t base = 3 + 2 * q;

        step(
            base, "qr", "Orthogonalization", {Y}, {Q},
            [&] {
                auto f = thin_qr(Y_, Q);
                Q_ = std::move(f.Q);
                res_.rank_deficient = f.rank_deficient;
                return std::vector<double>{f.rank_deficient ? 1.0 : 0.0};
            },
            [&](const auto& aux) {
                res_.rank_deficient = aux.at(0) != 0;
                Q_ = reopen<T>(Q);
            });
        Y_ = TiledMatrix<T>();
        Z_ = TiledMatrix<T>();

        int sB = 0;  // stored Bt = 2^-sB * true
        step(
            base + 1, "AtQ", "A^T*Q_r", {a, Q}, {Bt},
            [&] {
                const unsigned extra = cfg_.gram_path ? q : 0;
                if (extra == 0) {
                    sB = scaled_product(A_.transposed(), max_a, Q_, Bt_, Bt);
                } else {
                    TiledMatrix<T> cur, nxt;
                    sB = scaled_product(A_.transposed(), max_a, Q_, cur, ctx_->allocate_temp_id());
                    cur.set_temporary(true);
                    for (unsigned i = 0; i < extra; ++i) {
                        sB += scaled_product(A_, max_a, cur, nxt, ctx_->allocate_temp_id());
                        nxt.set_temporary(true);
                        const bool last_one = i + 1 == extra;
                        sB += scaled_product(A_.transposed(), max_a, nxt, cur,
                                             last_one ? Bt : ctx_->allocate_temp_id());
                        if (!last_one) cur.set_temporary(true);
                    }
                    Bt_ = std::move(cur);
                }
                return std::vector<double>{double(sB)};
            },
            [&](const auto& aux) {
                sB = int(aux.at(0));
                Bt_ = reopen<T>(Bt);
            });

        step(
            base + 2, "svd0prep", "SVD0 Preparation", {Bt}, {Qb, Rb},
            [&] {
                auto f = thin_qr(Bt_, Qb);
                Qb_ = std::move(f.Q);
                Rb_ = from_small<double>(ctx_, Rb, k, k, f.R);
                return std::vector<double>{};
            },
            [&](const auto&) {
                Qb_ = reopen<T>(Qb);
                Rb_ = reopen<double>(Rb);
            });
        Bt_ = TiledMatrix<T>();

        step(
            base + 3, "svd0", "SVD0", {Rb}, {Us, S, Ws},
            [&] {
                // B = Bt^T = Rb^T Qb^T, so the SVD of Rb^T gives U_B directly.
                const auto R = Rb_.gather();
                std::vector<W> Rt(k * k);
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < k; ++j) Rt[j * k + i] = static_cast<W>(R[i * k + j]);
                auto f = svd_small<W>(Rt, k, k);
                std::vector<double> us(k * r), s(r), ws(k * r);
                const double root = cfg_.gram_path ? 1.0 / (2.0 * q + 1.0) : 1.0;
                for (std::size_t j = 0; j < r; ++j) {
                    const double v = std::ldexp(static_cast<double>(f.S[j]), sB);
                    s[j] = root == 1.0 || v == 0 ? v : std::pow(v, root);
                }
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < r; ++j) {
                        us[i * r + j] = static_cast<double>(f.U[i * k + j]);
                        ws[i * r + j] = static_cast<double>(f.V[i * k + j]);
                    }
                Us_ = from_small<double>(ctx_, Us, k, r, us);
                S_ = from_small<double>(ctx_, S, r, 1, s);
                Ws_ = from_small<double>(ctx_, Ws, k, r, ws);
                return std::vector<double>{};
            },
            [&](const auto&) {
                Us_ = reopen<double>(Us);
                S_ = reopen<double>(S);
                Ws_ = reopen<double>(Ws);
            });
        Rb_ = TiledMatrix<double>();

        step(
            base + 4, "postU", "Postprocessing", {Q, Us}, {U},
            [&] {
                res_.U = block_multiply<T>(Q_, Us_, U);
                return std::vector<double>{};
            },
            [&](const auto&) { res_.U = reopen<T>(U); });
        step(
            base + 5, "postV", "Postprocessing", {Qb, Ws}, {V},
            [&] {
                res_.V = block_multiply<T>(Qb_, Ws_, V);
                return std::vector<double>{};
            },
            [&](const auto&) { res_.V = reopen<T>(V); });
        res_.S = S_.gather();
        return res_;
    }

    ContextPtr ctx_;
    RsvdConfig cfg_;
    std::vector<StepRecord> records_;
    std::uint32_t reuse_ = 0;
    RsvdResult<T> res_;
    TiledMatrix<T> A_, O_, Y_, Z_, Q_, Bt_, Qb_;
    TiledMatrix<double> Rb_, Us_, S_, Ws_;
};

/// Randomized SVD of A; runs in A's context (budget, workdir, threads).
template <StorageScalar T>
RsvdResult<T> randomized_svd(const TiledMatrix<T>& A, const RsvdConfig& cfg) {
    return RsvdRun<T>(A.context(), cfg).start(A);
}

/// Completes the plan in ctx's workdir under an identical configuration.
template <StorageScalar T>
RsvdResult<T> resume(ContextPtr ctx, const RsvdConfig& cfg) {
    return RsvdRun<T>(std::move(ctx), cfg).resume();
}

/// Iteration count the automatic rule settles on for A, with the sketch the
/// pipeline would draw.
template <StorageScalar T>
unsigned auto_select_q(const TiledMatrix<T>& A, std::size_t r, unsigned q_max, double tau, std::uint64_t seed) {
    const ContextPtr& ctx = A.context();
    auto O = gaussian_matrix<T>(ctx, ctx->allocate_temp_id(), A.cols(), r, seed);
    O.set_temporary(true);
    const double max_a = max_abs(A);
    auto product = [&](const auto& X, const TiledMatrix<T>& Yin, int& E) {
        const int s = product_scale<T>(max_a, max_abs(Yin), X.cols());
        E += s;
        auto out = block_multiply<T>(X, Yin, ctx->allocate_temp_id(), MatrixRole::created, -s);
        out.set_temporary(true);
        return out;
    };
    int E = 0;
    auto Y = product(A, O, E);
    std::vector<double> nu{norm_per_item(Y, E)};
    while (!auto_q_stop(nu, q_max, tau)) {
        auto Z = product(A.transposed(), Y, E);
        Y = TiledMatrix<T>();
        Y = product(A, Z, E);
        nu.push_back(norm_per_item(Y, E));
    }
    return static_cast<unsigned>(nu.size() - 1);
}

/// Exact thin SVD with r = min(m, n), by QR of the tall orientation followed
/// by an in-core SVD of the triangular factor.
template <StorageScalar T>
RsvdResult<T> full_svd(const TiledMatrix<T>& A, std::uint32_t u_id, std::uint32_t v_id) {
    using W = compute_t<T>;
    const ContextPtr& ctx = A.context();
    const bool wide = A.rows() < A.cols();
    const TiledMatrix<T> tall = wide ? A.transposed() : A;
    const std::size_t r = tall.cols();
    auto f = thin_qr(tall, ctx->allocate_temp_id());
    f.Q.set_temporary(true);
    std::vector<W> R(f.R.begin(), f.R.end());
    auto s = svd_small<W>(R, r, r);
    RsvdResult<T> res;
    for (const char* st : kStageNames) res.stage_seconds[st] = 0.0;
    res.S.assign(s.S.begin(), s.S.end());
    auto small_u = from_small<double>(ctx, ctx->allocate_temp_id(), r, r, s.U);
    auto small_v = from_small<double>(ctx, ctx->allocate_temp_id(), r, r, s.V);
    small_u.set_temporary(true);
    small_v.set_temporary(true);
    // tall = Q U_R S V_R^T
    auto big = block_multiply<T>(f.Q, small_u, wide ? v_id : u_id);
    std::vector<double> vr = small_v.gather();
    auto other = TiledMatrix<T>::from_dense(ctx, wide ? u_id : v_id, r, r, vr, MatrixRole::created);
    res.U = wide ? std::move(other) : std::move(big);
    res.V = wide ? std::move(big) : std::move(other);
    return res;
}

}  // namespace oocsvd
