#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "oocsvd/oocsvd.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace oocsvd;
using testutil::q;
using testutil::run_cli;
using testutil::slurp;
using testutil::TempDir;

namespace {

void write_mtx(const fs::path& p, const oracle::Mat& a, std::size_t m, std::size_t n) {
    std::ofstream out(p);
    write_matrix_market(out, m, n, oracle::triplets_of(a, m, n));
}

void write_image(const fs::path& p, const std::vector<double>& px, std::size_t w, std::size_t h) {
    PgmImage img;
    img.width = w;
    img.height = h;
    for (double v : px) img.pixels.push_back(static_cast<std::uint8_t>(v));
    std::ofstream out(p, std::ios::binary);
    write_pgm(out, img);
}

std::vector<double> read_image(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    const auto img = read_pgm(in);
    return {img.pixels.begin(), img.pixels.end()};
}

oracle::Mat rank_ten(std::size_t m, std::size_t n) {
    std::mt19937_64 g(31);
    return oracle::multiply(oracle::gaussian(g, m, 10), oracle::gaussian(g, 10, n), m, 10, n);
}

void expect_same_files(const fs::path& a, const fs::path& b) {
    for (const char* f : {"U.blk", "S.blk", "V.blk", "S.txt"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

}  // namespace

TEST(Cli, RsvdMatchesDenseOracle) {
    TempDir dir("cli");
    const auto a = rank_ten(80, 60);
    write_mtx(dir / "in.mtx", a, 80, 60);
    auto r = run_cli("rsvd --rank 10 --power auto --memory-per-matrix 1M --seed 7 " + q(dir / "in.mtx") + " " +
                         q(dir / "out"),
                     dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto s = read_values_text(dir / "out" / "S.txt");
    const auto ref = oracle::jacobi_singular_values(a, 80, 60);
    ASSERT_EQ(s.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_LE(std::abs(s[i] - ref[i]) / ref[i], 1e-6) << i;
    EXPECT_TRUE(fs::exists(dir / "out" / "U.blk"));
    EXPECT_TRUE(fs::exists(dir / "out" / "V.blk"));
    EXPECT_TRUE(fs::exists(dir / "out" / "S.blk"));
    // the native S file carries the same values
    auto S = import_block_file<double>(dir / "out" / "S.blk");
    EXPECT_EQ(S, s);
}

TEST(Cli, RepeatedRunsAreBitwiseIdentical) {
    TempDir dir("cli");
    write_mtx(dir / "in.mtx", rank_ten(50, 40), 50, 40);
    for (const char* out : {"a", "b"}) {
        auto r = run_cli("rsvd --rank 6 --seed 3 --memory-per-matrix 2K " + q(dir / "in.mtx") + " " + q(dir / out),
                         dir / "log");
        ASSERT_EQ(r.code, 0) << r.output;
    }
    auto r = run_cli("rsvd --rank 6 --seed 3 --memory-per-matrix 2K --threads 3 " + q(dir / "in.mtx") + " " +
                         q(dir / "c"),
                     dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    expect_same_files(dir / "a", dir / "b");
    expect_same_files(dir / "a", dir / "c");
}

TEST(Cli, UsageErrors) {
    TempDir dir("cli");
    write_mtx(dir / "in.mtx", rank_ten(10, 10), 10, 10);
    const std::string in = q(dir / "in.mtx"), out = q(dir / "out");
    EXPECT_EQ(run_cli("rsvd --rank 0 " + in + " " + out, dir / "log").code, 2);
    EXPECT_EQ(run_cli("rsvd " + in + " " + out, dir / "log").code, 2);
    EXPECT_EQ(run_cli("rsvd --rank 3 --power 6 " + in + " " + out, dir / "log").code, 2);
    EXPECT_EQ(run_cli("rsvd --rank 3 --precision quad " + in + " " + out, dir / "log").code, 2);
    EXPECT_EQ(run_cli("rsvd --rank 3 --memory-per-matrix 12Q " + in + " " + out, dir / "log").code, 2);
    EXPECT_EQ(run_cli("rsvd --rank 3 --bogus " + in + " " + out, dir / "log").code, 2);
    EXPECT_EQ(run_cli("frobnicate", dir / "log").code, 2);
    EXPECT_FALSE(fs::exists(dir / "out"));
    // rank larger than the matrix is rejected at validation time
    EXPECT_EQ(run_cli("rsvd --rank 11 " + in + " " + out, dir / "log").code, 2);
}

TEST(Cli, ParseErrorReportsLine) {
    TempDir dir("cli");
    testutil::spit(dir / "bad.mtx", "%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 1.0\n2 x 4\n");
    auto r = run_cli("rsvd --rank 1 " + q(dir / "bad.mtx") + " " + q(dir / "out"), dir / "log");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find("line 4"), std::string::npos) << r.output;
    EXPECT_EQ(run_cli("info " + q(dir / "bad.mtx"), dir / "log").code, 3);
    testutil::spit(dir / "bad.pgm", "P2\n2 2\n255\n0 0 0 0\n");
    EXPECT_EQ(run_cli("compress-image --rank 1 " + q(dir / "bad.pgm") + " " + q(dir / "o.pgm"), dir / "log").code, 3);
}

TEST(Cli, IoAndBudgetErrors) {
    TempDir dir("cli");
    EXPECT_EQ(run_cli("rsvd --rank 1 " + q(dir / "missing.mtx") + " " + q(dir / "out"), dir / "log").code, 5);
    write_mtx(dir / "in.mtx", rank_ten(20, 20), 20, 20);
    // a single double scalar does not fit in 4 bytes
    EXPECT_EQ(run_cli("rsvd --rank 2 --memory-per-matrix 4 " + q(dir / "in.mtx") + " " + q(dir / "out"), dir / "log")
                  .code,
              4);
}

TEST(Cli, ResumeExitCodes) {
    TempDir dir("cli");
    fs::create_directories(dir / "empty");
    EXPECT_EQ(run_cli("resume " + q(dir / "empty"), dir / "log").code, 6);
    EXPECT_EQ(run_cli("resume " + q(dir / "nowhere"), dir / "log").code, 6);

    write_mtx(dir / "in.mtx", rank_ten(30, 25), 30, 25);
    const std::string job = "rsvd --rank 4 --power 1 --seed 2 --memory-per-matrix 1K " + q(dir / "in.mtx") + " " +
                            q(dir / "out") + " --workdir " + q(dir / "wd");
    auto r = run_cli(job + " --halt-after-step 4", dir / "log");
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(run_cli("resume " + q(dir / "wd") + " --rank 5", dir / "log").code, 7);
    EXPECT_EQ(run_cli("resume " + q(dir / "wd") + " --precision single", dir / "log").code, 7);
    EXPECT_EQ(run_cli("resume " + q(dir / "wd") + " --memory-per-matrix 2K", dir / "log").code, 7);
    r = run_cli("resume " + q(dir / "wd"), dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;

    // a second resume on the complete plan leaves the outputs untouched
    const auto before = fs::last_write_time(dir / "out" / "U.blk");
    const auto bytes = slurp(dir / "out" / "U.blk");
    r = run_cli("resume " + q(dir / "wd"), dir / "log");
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(fs::last_write_time(dir / "out" / "U.blk"), before);
    EXPECT_EQ(slurp(dir / "out" / "U.blk"), bytes);
}

TEST(Cli, HaltAndResumeMatchesUninterrupted) {
    TempDir dir("cli");
    write_mtx(dir / "in.mtx", rank_ten(40, 30), 40, 30);
    const std::string flags = "rsvd --rank 5 --power 2 --seed 11 --memory-per-matrix 512 " + q(dir / "in.mtx") + " ";
    ASSERT_EQ(run_cli(flags + q(dir / "ref"), dir / "log").code, 0);
    // 13 pipeline steps plus the export step
    for (int k : {0, 3, 7, 12, 13}) {
        const fs::path out = dir / ("o" + std::to_string(k));
        auto r = run_cli(flags + q(out) + " --halt-after-step " + std::to_string(k), dir / "log");
        EXPECT_EQ(r.code, 86) << k;
        r = run_cli("resume " + q(out / "work"), dir / "log");
        ASSERT_EQ(r.code, 0) << r.output;
        expect_same_files(dir / "ref", out);
    }
}

TEST(Cli, InfoSummaries) {
    TempDir dir("cli");
    testutil::spit(dir / "one.mtx", "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 5.0\n");
    auto r = run_cli("info " + q(dir / "one.mtx"), dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("density\t0.25\n"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("rows\t2\n"), std::string::npos);
    EXPECT_NE(r.output.find("nnz\t1\n"), std::string::npos);
    EXPECT_NE(r.output.find("dense_equivalent_bytes\t32 "), std::string::npos);

    // header-only check of the large-matrix arithmetic
    std::ofstream big(dir / "big.mtx");
    big << "%%MatrixMarket matrix coordinate real general\n1447360 1447360 1\n1 1 1\n";
    big.close();
    r = run_cli("info " + q(dir / "big.mtx") + " --memory-per-matrix 128M", dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("dense_equivalent_bytes\t16758807756800 (16.76 TB)"), std::string::npos)
        << r.output;
}

TEST(Cli, ExactSvdCommand) {
    TempDir dir("cli");
    std::mt19937_64 g(5);
    const auto a = oracle::gaussian(g, 12, 9);
    write_mtx(dir / "in.mtx", a, 12, 9);
    auto r = run_cli("svd " + q(dir / "in.mtx") + " " + q(dir / "out"), dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto s = read_values_text(dir / "out" / "S.txt");
    const auto ref = oracle::jacobi_singular_values(a, 12, 9);
    ASSERT_EQ(s.size(), 9u);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_LE(std::abs(s[i] - ref[i]) / ref[0], 1e-10);
}

TEST(Cli, FullRankImageIsReproduced) {
    TempDir dir("cli");
    const auto px = testutil::synthetic_image(40, 32, 1);
    write_image(dir / "in.pgm", px, 40, 32);
    auto r = run_cli("compress-image --rank 32 --power 0 " + q(dir / "in.pgm") + " " + q(dir / "out.pgm"), dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto out = read_image(dir / "out.pgm");
    ASSERT_EQ(out.size(), px.size());
    for (std::size_t i = 0; i < px.size(); ++i) EXPECT_LE(std::abs(out[i] - px[i]), 1.0) << i;
}

TEST(Cli, ImageDemoPowerAndPrecision) {
    TempDir dir("cli");
    const std::size_t w = 512, h = 512;
    const auto px = testutil::synthetic_image(w, h, 2);
    write_image(dir / "in.pgm", px, w, h);
    auto compress = [&](const std::string& extra, const char* name) {
        auto r = run_cli("compress-image --rank 50 --seed 1 " + extra + " " + q(dir / "in.pgm") + " " +
                             q(dir / name),
                         dir / "log");
        EXPECT_EQ(r.code, 0) << r.output;
        return read_image(dir / name);
    };
    const auto q0 = compress("--power 0", "q0.pgm");
    const auto qa = compress("--power auto", "qa.pgm");
    const auto half = compress("--power 0 --precision half", "half.pgm");
    EXPECT_LT(oracle::rel_diff(qa, px), oracle::rel_diff(q0, px));
    double mad = 0;
    for (std::size_t i = 0; i < q0.size(); ++i) mad += std::abs(half[i] - q0[i]);
    EXPECT_LE(mad / double(q0.size()), 2.0);
}

TEST(Cli, ProfileReport) {
    TempDir dir("cli");
    write_mtx(dir / "in.mtx", rank_ten(300, 200), 300, 200);
    auto r = run_cli("rsvd --rank 10 --power 2 --memory-per-matrix 64K --profile-out " + q(dir / "p.txt") + " " +
                         q(dir / "in.mtx") + " " + q(dir / "out"),
                     dir / "log");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto rep = ProfileReport::read(dir / "p.txt");
    const auto& e = rep.entries();
    double sum = 0;
    for (const char* k : kStageNames) {
        ASSERT_TRUE(e.count(k)) << k;
        sum += std::stod(e.at(k));
    }
    for (const char* k : {"total_seconds", "peak_resident_bytes", "max_matrix_peak_bytes", "budget_violations",
                          "chosen_q", "threads", "blocks.U", "blocks.V"})
        EXPECT_TRUE(e.count(k)) << k;
    EXPECT_EQ(e.at("budget_violations"), "0");
    EXPECT_LE(std::stoull(e.at("max_matrix_peak_bytes")), 64u * 1024u);
    const double total = std::stod(e.at("total_seconds"));
    EXPECT_LE(std::abs(total - sum), 0.05 * total) << "stages " << sum << " total " << total;
}
