// Command-line front end: factorize Matrix Market inputs, compress PGM
// images, resume interrupted jobs, summarize inputs.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "oocsvd/oocsvd.hpp"

namespace fs = std::filesystem;
using namespace oocsvd;

namespace {

enum Exit : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kParse = 3,
    kBudget = 4,
    kIo = 5,
    kNoPlan = 6,
    kMismatch = 7,
    kInterrupted = 130,
};

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

struct Options {
    std::string command;
    std::string input;
    std::string output;
    std::size_t rank = 0;
    std::string power = "auto";
    std::string precision = "double";
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string mem_per, mem_new, mem_global;
    std::string workdir;
    std::string profile_out;
    std::size_t oversampling = 0;
    bool gram_path = false;
    long halt_after = -1;

    nlohmann::json to_json() const {
        return {{"command", command},         {"input", input},     {"output", output},
                {"rank", rank},               {"power", power},     {"precision", precision},
                {"seed", seed},               {"threads", threads}, {"mem_per", mem_per},
                {"mem_new", mem_new},         {"mem_global", mem_global},
                {"oversampling", oversampling}, {"gram_path", gram_path}};
    }
    static Options from_json(const nlohmann::json& j) {
        Options o;
        o.command = j.at("command");
        o.input = j.at("input");
        o.output = j.at("output");
        o.rank = j.at("rank");
        o.power = j.at("power");
        o.precision = j.at("precision");
        o.seed = j.at("seed");
        o.threads = j.at("threads");
        o.mem_per = j.at("mem_per");
        o.mem_new = j.at("mem_new");
        o.mem_global = j.at("mem_global");
        o.oversampling = j.at("oversampling");
        o.gram_path = j.at("gram_path");
        return o;
    }

    MemoryBudget budget() const {
        MemoryBudget b;
        if (!mem_per.empty()) b.per_matrix = parse_byte_size(mem_per);
        if (!mem_new.empty()) b.new_matrix = parse_byte_size(mem_new);
        if (!mem_global.empty()) b.global = parse_byte_size(mem_global);
        return b;
    }

    fs::path default_workdir() const {
        if (!workdir.empty()) return workdir;
        if (command == "compress-image") {
            fs::path out(output);
            return out.parent_path() / (out.filename().string() + ".work");
        }
        return fs::path(output) / "work";
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string input_tag(const std::string& path) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    return fs::absolute(path).lexically_normal().string() + ":" + std::to_string(ec ? 0 : size);
}

class Job {
  public:
    Job(Options o, bool resuming) : o_(std::move(o)), resuming_(resuming) {}

    int run() {
        const Precision p = parse_precision(o_.precision);
        return dispatch_precision(p, [&]<class T>() { return run_typed<T>(); });
    }

  private:
    RsvdConfig config() const {
        RsvdConfig c;
        c.rank = o_.rank;
        if (o_.power != "auto") c.power = static_cast<unsigned>(std::stoul(o_.power));
        c.seed = o_.seed;
        c.oversampling = o_.oversampling;
        c.gram_path = o_.gram_path;
        c.input_tag = input_tag(o_.input);
        c.extra = o_.to_json();
        c.stop = &g_stop;
        const long halt = o_.halt_after;
        if (halt >= 0)
            c.after_step = [halt](std::uint32_t s) {
                if (static_cast<long>(s) == halt) std::_Exit(86);
            };
        return c;
    }

    template <StorageScalar T>
    TiledMatrix<T> ingest(const ContextPtr& ctx) {
        const auto t0 = Clock::now();
        TiledMatrix<T> A;
        if (o_.command == "compress-image") {
            A = load_pgm<T>(ctx, 1, o_.input);
        } else {
            auto d = read_matrix_market(o_.input);
            const auto w = required_index_width(d.header.rows, d.header.cols);
            A = TiledMatrix<T>::from_triplets(ctx, 1, d.header.rows, d.header.cols, std::move(d.triplets), w);
        }
        parse_seconds_ = seconds_since(t0);
        return A;
    }

    template <StorageScalar T>
    int run_typed() {
        const auto t_start = Clock::now();
        ExecutionContext::Options eo;
        eo.workdir = o_.default_workdir();
        eo.budget = o_.budget();
        eo.threads = std::max<std::size_t>(o_.threads, 1);
        auto ctx = ExecutionContext::make(eo);
        RsvdConfig cfg = config();

        std::optional<RsvdResult<T>> res;
        bool fresh = true;
        if (resuming_) {
            const auto records = ctx->store()->scan_plan();
            fresh = records.empty() || records[0].step_id != 0 || !records[0].done();
        }
        if (fresh) {
            auto A = ingest<T>(ctx);
            res = RsvdRun<T>(ctx, cfg).start(A);
        } else {
            res = RsvdRun<T>(ctx, cfg).resume();
        }

        const std::uint32_t export_step = RsvdRun<T>::step_count(res->chosen_q);
        const auto records = ctx->store()->scan_plan();
        const bool exported = export_step < records.size() && records[export_step].done() &&
                              records[export_step].step_id == export_step;
        double export_seconds = 0;
        if (!exported) {
            if (g_stop.load()) throw Interrupted("stop requested before export");
            const auto t0 = Clock::now();
            write_outputs(*res, ctx);
            StepRecord rec;
            rec.step_id = export_step;
            rec.operation = "export";
            rec.inputs = {pipeline_ids::U, pipeline_ids::S, pipeline_ids::V};
            rec.status = StepRecord::Status::done;
            ctx->store()->write_step(rec);
            export_seconds = seconds_since(t0);
            if (cfg.after_step) cfg.after_step(export_step);
        }

        if (!o_.profile_out.empty()) {
            ProfileReport rep;
            res->stage_seconds["Text Parsing"] += parse_seconds_;
            res->stage_seconds["Postprocessing"] += export_seconds;
            for (const auto& [k, v] : res->stage_seconds) rep.set(k, v);
            rep.set("total_seconds", seconds_since(t_start));
            rep.set("peak_resident_bytes", std::uint64_t(ctx->tracker().total_peak()));
            rep.set("max_matrix_peak_bytes", std::uint64_t(ctx->tracker().max_matrix_peak()));
            rep.set("budget_violations", std::uint64_t(ctx->tracker().violations()));
            rep.set("chosen_q", std::uint64_t(res->chosen_q));
            rep.set("threads", std::uint64_t(ctx->threads()));
            rep.set("blocks.U", std::uint64_t(res->U.stored_partition().tile_count()));
            rep.set("blocks.V", std::uint64_t(res->V.stored_partition().tile_count()));
            rep.set("multiply_adds", std::uint64_t(ctx->multiply_adds().load()));
            rep.write(o_.profile_out);
        }
        return kOk;
    }

    template <StorageScalar T>
    void write_outputs(const RsvdResult<T>& res, const ContextPtr& ctx) {
        if (o_.command == "compress-image") {
            // A_r = (U diag(S)) V^T
            auto US = TiledMatrix<T>::zeros(ctx, ctx->allocate_temp_id(), res.U.rows(), res.U.cols());
            US.set_temporary(true);
            convert_copy(res.U, US, [&](Index, Index j, auto v) { return v * static_cast<decltype(v)>(res.S[j]); });
            auto R = block_multiply<T>(US, res.V.transposed(), ctx->allocate_temp_id());
            R.set_temporary(true);
            const fs::path out(o_.output);
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            save_pgm(R, out);
            return;
        }
        const fs::path dir(o_.output);
        fs::create_directories(dir);
        export_block_file(res.U, dir / "U.blk");
        export_block_file(res.V, dir / "V.blk");
        auto S = TiledMatrix<double>::from_dense(ctx, pipeline_ids::S, res.S.size(), 1, res.S, MatrixRole::created);
        export_block_file(S, dir / "S.blk");
        write_values_text(res.S, dir / "S.txt");
    }

    Options o_;
    bool resuming_;
    double parse_seconds_ = 0;
};

int run_svd(const Options& o) {
    const auto t_start = Clock::now();
    ExecutionContext::Options eo;
    eo.budget = o.budget();
    if (!eo.budget.unlimited()) eo.workdir = o.default_workdir();
    eo.threads = std::max<std::size_t>(o.threads, 1);
    auto ctx = ExecutionContext::make(eo);
    return dispatch_precision(parse_precision(o.precision), [&]<class T>() {
        const auto t0 = Clock::now();
        auto d = read_matrix_market(o.input);
        auto A = TiledMatrix<T>::from_triplets(ctx, 1, d.header.rows, d.header.cols, std::move(d.triplets),
                                               required_index_width(d.header.rows, d.header.cols));
        const double parse = seconds_since(t0);
        const auto t1 = Clock::now();
        auto res = full_svd(A, 2, 3);
        const double factor = seconds_since(t1);
        const fs::path dir(o.output);
        fs::create_directories(dir);
        export_block_file(res.U, dir / "U.blk");
        export_block_file(res.V, dir / "V.blk");
        auto S = TiledMatrix<double>::from_dense(ctx, 4, res.S.size(), 1, res.S, MatrixRole::created);
        export_block_file(S, dir / "S.blk");
        write_values_text(res.S, dir / "S.txt");
        if (!o.profile_out.empty()) {
            ProfileReport rep;
            for (const char* s : kStageNames) rep.set(s, 0.0);
            rep.set("Text Parsing", parse);
            rep.set("SVD0", factor);
            rep.set("total_seconds", seconds_since(t_start));
            rep.set("peak_resident_bytes", std::uint64_t(ctx->tracker().total_peak()));
            rep.write(o.profile_out);
        }
        return int(kOk);
    });
}

std::string human_bytes(double b) {
    const char* units[] = {"B", "KB", "MB", "GB", "TB", "PB"};
    int u = 0;
    while (b >= 1000 && u < 5) {
        b /= 1000;
        ++u;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f %s", b, units[u]);
    return buf;
}

int run_info(const Options& o) {
    auto d = read_matrix_market(o.input);
    const auto& h = d.header;
    const Precision p = parse_precision(o.precision);
    MatrixDescriptor desc(1, h.rows, h.cols, Density::sparse, p, required_index_width(h.rows, h.cols));
    desc.set_nnz(d.triplets.size());
    const double dense_bytes = double(h.rows) * double(h.cols) * double(bytes_per_scalar(p));
    std::cout << "rows\t" << h.rows << "\n"
              << "cols\t" << h.cols << "\n"
              << "nnz\t" << d.triplets.size() << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", double(d.triplets.size()) / (double(h.rows) * double(h.cols)));
    std::cout << "density\t" << buf << "\n"
              << "precision\t" << to_string(p) << "\n"
              << "dense_equivalent_bytes\t" << static_cast<std::uint64_t>(dense_bytes) << " ("
              << human_bytes(dense_bytes) << ")\n"
              << "sparse_bytes\t" << desc.payload_bytes() << "\n";
    const auto part = partition_for_budget(desc, o.budget());
    std::cout << "partition\t" << part.tile_rows() << " x " << part.tile_cols() << " tiles\n";
    return kOk;
}

int run_resume(const Options& cli) {
    const fs::path wd(cli.workdir);
    auto plan = read_plan(wd);
    if (!plan || !plan->contains("extra") || !(*plan)["extra"].contains("command"))
        throw NoPlanError("no plan found in " + wd.string());
    Options o = Options::from_json((*plan)["extra"]);
    o.workdir = cli.workdir;
    o.profile_out = cli.profile_out;
    o.halt_after = cli.halt_after;
    if (cli.rank) o.rank = cli.rank;
    if (!cli.power.empty()) o.power = cli.power;
    if (!cli.precision.empty()) o.precision = cli.precision;
    if (!cli.mem_per.empty()) o.mem_per = cli.mem_per;
    if (!cli.mem_new.empty()) o.mem_new = cli.mem_new;
    if (!cli.mem_global.empty()) o.mem_global = cli.mem_global;
    if (cli.seed != 0) o.seed = cli.seed;
    if (cli.threads != 0) o.threads = cli.threads;
    return Job(o, true).run();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Out-of-core randomized SVD"};
    app.require_subcommand(1);
    Options o;

    auto power_check = CLI::Validator(
        [](std::string& s) -> std::string {
            if (s == "auto") return {};
            if (s.size() == 1 && s[0] >= '0' && s[0] <= '5') return {};
            return "power must be auto or an integer 0..5";
        },
        "{auto|0..5}");
    auto bytes_check = CLI::Validator(
        [](std::string& s) -> std::string {
            try {
                parse_byte_size(s);
            } catch (const Error& e) {
                return e.what();
            }
            return {};
        },
        "SIZE[K|M|G]");
    auto precision_check = CLI::IsMember({"half", "single", "double"});

    auto add_budget = [&](CLI::App* c) {
        c->add_option("--memory-per-matrix", o.mem_per, "Per-matrix memory limit")->check(bytes_check);
        c->add_option("--memory-new", o.mem_new, "Limit for matrices created during processing")->check(bytes_check);
        c->add_option("--memory-global", o.mem_global, "Global memory limit")->check(bytes_check);
        c->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
        c->add_option("--workdir", o.workdir, "Directory for out-of-core blocks and the plan");
        c->add_option("--profile-out", o.profile_out, "Write a key<TAB>value stage profile");
    };
    auto add_factor = [&](CLI::App* c, bool rank_required) {
        auto* r = c->add_option("--rank", o.rank, "Target rank")->check(CLI::PositiveNumber);
        if (rank_required) r->required();
        c->add_option("--power", o.power, "Power iterations")->check(power_check);
        c->add_option("--seed", o.seed, "Sketch seed");
        c->add_option("--oversampling", o.oversampling, "Extra sketch columns");
        c->add_flag("--gram-path", o.gram_path, "Recover singular values from the power matrix");
        c->add_option("--halt-after-step", o.halt_after)->group("");
    };

    auto* svd = app.add_subcommand("svd", "Exact SVD of a Matrix Market file");
    svd->add_option("input", o.input, "Matrix Market file")->required();
    svd->add_option("outdir", o.output, "Output directory")->required();
    svd->add_option("--precision", o.precision)->check(precision_check);
    add_budget(svd);

    auto* rsvd = app.add_subcommand("rsvd", "Randomized SVD of a Matrix Market file");
    rsvd->add_option("input", o.input, "Matrix Market file")->required();
    rsvd->add_option("outdir", o.output, "Output directory")->required();
    rsvd->add_option("--precision", o.precision)->check(precision_check);
    add_factor(rsvd, true);
    add_budget(rsvd);

    auto* img = app.add_subcommand("compress-image", "Low-rank approximation of a PGM image");
    img->add_option("input", o.input, "P5 PGM file")->required();
    img->add_option("output", o.output, "Output PGM file")->required();
    img->add_option("--precision", o.precision)->check(precision_check);
    add_factor(img, true);
    add_budget(img);

    Options res_opts;
    res_opts.power.clear();
    res_opts.precision.clear();
    res_opts.threads = 0;
    auto* res = app.add_subcommand("resume", "Finish an interrupted job");
    res->add_option("workdir", res_opts.workdir, "Work directory of the job")->required();
    res->add_option("--rank", res_opts.rank)->check(CLI::PositiveNumber);
    res->add_option("--power", res_opts.power)->check(power_check);
    res->add_option("--precision", res_opts.precision)->check(precision_check);
    res->add_option("--seed", res_opts.seed);
    res->add_option("--threads", res_opts.threads)->check(CLI::PositiveNumber);
    res->add_option("--memory-per-matrix", res_opts.mem_per)->check(bytes_check);
    res->add_option("--memory-new", res_opts.mem_new)->check(bytes_check);
    res->add_option("--memory-global", res_opts.mem_global)->check(bytes_check);
    res->add_option("--profile-out", res_opts.profile_out);
    res->add_option("--halt-after-step", res_opts.halt_after)->group("");

    auto* info = app.add_subcommand("info", "Summarize a Matrix Market file");
    info->add_option("input", o.input, "Matrix Market file")->required();
    info->add_option("--precision", o.precision)->check(precision_check);
    info->add_option("--memory-per-matrix", o.mem_per)->check(bytes_check);
    info->add_option("--memory-global", o.mem_global)->check(bytes_check);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    try {
        if (svd->parsed()) {
            o.command = "svd";
            return run_svd(o);
        }
        if (rsvd->parsed() || img->parsed()) {
            o.command = rsvd->parsed() ? "rsvd" : "compress-image";
            return Job(o, false).run();
        }
        if (res->parsed()) return run_resume(res_opts);
        if (info->parsed()) return run_info(o);
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kParse;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kParse;
    } catch (const BudgetError& e) {
        std::cerr << "budget error: " << e.what() << "\n";
        return kBudget;
    } catch (const NoPlanError& e) {
        std::cerr << "no plan: " << e.what() << "\n";
        return kNoPlan;
    } catch (const ConfigMismatch& e) {
        std::cerr << "config mismatch: " << e.what() << "\n";
        return kMismatch;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const DimensionError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const Interrupted& e) {
        std::cerr << "interrupted: " << e.what() << "; run `resume` to continue\n";
        return kInterrupted;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kUsage;
}
