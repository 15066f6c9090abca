#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "protoclr/data.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path scratch_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "protoclr_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path out = scratch_dir() / ("stdout." + std::to_string(counter));
    const fs::path err = scratch_dir() / ("stderr." + std::to_string(counter));
    ++counter;
    const std::string cmd = std::string("\"") + PROTOCLR_CLI_PATH + "\" " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CmdResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = slurp(out);
    result.err = slurp(err);
    return result;
}

std::string trailer_of(const std::string& out) {
    const std::size_t pos = out.find("== trailer ==");
    REQUIRE(pos != std::string::npos);
    return out.substr(pos);
}

double trailer_value(const std::string& out, const std::string& key) {
    const std::string needle = "\n" + key + "=";
    const std::size_t pos = out.find(needle);
    REQUIRE(pos != std::string::npos);
    const std::size_t start = pos + needle.size();
    return std::stod(out.substr(start, out.find('\n', start) - start));
}

} // namespace

TEST_CASE("gradcheck passes for every loss at the documented operating point") {
    for (const std::string loss : {"supcon", "protoclr", "infonce", "ce"}) {
        const auto r = run_cli("gradcheck --loss " + loss +
                               " --n 16 --d 6 --classes 4 --tau 0.5 --trials 5 --seed 7");
        INFO(loss << "\n" << r.out << r.err);
        CHECK(r.exit_code == 0);
        CHECK(r.out.find("status=pass") != std::string::npos);
    }
}

TEST_CASE("gradcheck --tau 0 exits 64 and names the flag") {
    const auto r = run_cli("gradcheck --loss supcon --tau 0");
    CHECK(r.exit_code == 64);
    CHECK(r.err.find("--tau") != std::string::npos);
}

TEST_CASE("gradcheck singleton batch with error policy exits 2 and reports it") {
    const auto r =
        run_cli("gradcheck --loss supcon --n 2 --classes 2 --singleton-policy error --trials 1");
    CHECK(r.exit_code == 2);
    CHECK(r.out.find("SingletonAnchor") != std::string::npos);
}

TEST_CASE("synth from a minimal spec file") {
    const fs::path spec = scratch_dir() / "minimal.spec";
    std::ofstream(spec) << "num_classes=2\nnum_domains=1\ndim=4\nsamples_per_class_domain=8\n"
                        << "class_separation=2\nnoise_sigma=0.3\nseed=5\n";
    const fs::path out = scratch_dir() / "minimal.emb";
    const auto r = run_cli("synth --spec " + spec.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    const auto set = protoclr::load_emb1(out.string());
    CHECK(set.rows() == 16);
    CHECK(set.dim() == 4);
}

TEST_CASE("synth is byte-deterministic for a fixed seed") {
    const fs::path a = scratch_dir() / "det_a.emb";
    const fs::path b = scratch_dir() / "det_b.emb";
    const std::string flags = "synth --classes 3 --domains 2 --dim 5 --per 4 --seed 42 --out ";
    REQUIRE(run_cli(flags + a.string()).exit_code == 0);
    REQUIRE(run_cli(flags + b.string()).exit_code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(!slurp(a).empty());
}

TEST_CASE("synth validation and io errors") {
    CHECK(run_cli("synth --classes 1 --out " + (scratch_dir() / "x.emb").string()).exit_code == 65);
    CHECK(run_cli("synth --spec /nonexistent.spec --out " + (scratch_dir() / "y.emb").string())
              .exit_code == 66);
    CHECK(run_cli("synth --classes 2 --out /nonexistent_dir/z.emb").exit_code == 73);
    // flags win over the spec file
    const fs::path spec = scratch_dir() / "override.spec";
    std::ofstream(spec) << "num_classes=1\n";
    const fs::path out = scratch_dir() / "override.emb";
    CHECK(run_cli("synth --spec " + spec.string() + " --classes 2 --out " + out.string())
              .exit_code == 0);
}

TEST_CASE("train: lr 0 leaves the checkpoint at its initialization") {
    const fs::path data = scratch_dir() / "train_data.emb";
    REQUIRE(run_cli("synth --classes 4 --dim 6 --per 16 --seed 9 --out " + data.string()).exit_code == 0);
    const fs::path ck1 = scratch_dir() / "lr0_e1.mlp";
    const fs::path ck5 = scratch_dir() / "lr0_e5.mlp";
    REQUIRE(run_cli("train --data " + data.string() + " --loss protoclr --lr 0 --epochs 1 --batch 16 "
                    "--seed 2 --out " + ck1.string()).exit_code == 0);
    REQUIRE(run_cli("train --data " + data.string() + " --loss protoclr --lr 0 --epochs 5 --batch 16 "
                    "--seed 2 --out " + ck5.string()).exit_code == 0);
    CHECK(slurp(ck1) == slurp(ck5)); // parameters never moved
}

TEST_CASE("train: loss decreases on separable data and reruns are byte-identical") {
    const fs::path data = scratch_dir() / "train_sep.emb";
    REQUIRE(run_cli("synth --classes 4 --dim 8 --per 24 --separation 3 --noise 0.5 --seed 14 --out " +
                    data.string()).exit_code == 0);
    const fs::path ck_a = scratch_dir() / "sep_a.mlp";
    const fs::path ck_b = scratch_dir() / "sep_b.mlp";
    const std::string flags = "train --data " + data.string() +
                              " --loss protoclr --epochs 50 --batch 32 --seed 6 --out ";
    const auto ra = run_cli(flags + ck_a.string());
    REQUIRE(ra.exit_code == 0);
    const auto rb = run_cli(flags + ck_b.string());
    REQUIRE(rb.exit_code == 0);

    CHECK(trailer_value(ra.out, "final_loss") < trailer_value(ra.out, "loss.epoch0"));
    CHECK(slurp(ck_a) == slurp(ck_b));
    // trailers identical apart from nothing: they contain no timing
    CHECK(trailer_of(ra.out) == trailer_of(rb.out));
}

TEST_CASE("train: unreadable data exits 66, bad config exits 65") {
    CHECK(run_cli("train --data /nonexistent.emb --out " + (scratch_dir() / "x.mlp").string())
              .exit_code == 66);
    const fs::path data = scratch_dir() / "small.emb";
    REQUIRE(run_cli("synth --classes 2 --per 2 --dim 4 --out " + data.string()).exit_code == 0);
    // batch larger than the dataset
    CHECK(run_cli("train --data " + data.string() + " --batch 64 --out " +
                  (scratch_dir() / "y.mlp").string())
              .exit_code == 65);
    // odd batch for a contrastive loss
    CHECK(run_cli("train --data " + data.string() + " --loss supcon --batch 3 --out " +
                  (scratch_dir() / "z.mlp").string())
              .exit_code == 65);
}

TEST_CASE("eval: uninformative features land at chance for 27 balanced classes") {
    const fs::path data = scratch_dir() / "chance27.emb";
    REQUIRE(run_cli("synth --classes 27 --dim 8 --per 11 --separation 0 --noise 1 --seed 100 --out " +
                    data.string()).exit_code == 0);
    const auto r = run_cli("eval --data " + data.string() + " --k 1 --runs 10 --seed 3");
    REQUIRE(r.exit_code == 0);
    const double mean = trailer_value(r.out, "acc.mean");
    const double p = 1.0 / 27.0;
    const double se = 100.0 * std::sqrt(p * (1 - p) / (27.0 * 10.0 * 10.0));
    CHECK(std::fabs(mean - 100.0 * p) <= 3.0 * se);
    // display convention: two decimals for means below 10
    CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("mean +/- std: ") &&
                          Catch::Matchers::Matches("(.|\n)*mean \\+/- std: [0-9]\\.[0-9][0-9] (.|\n)*"));
}

TEST_CASE("eval: five-shot mean is at least the one-shot mean on clustered data") {
    const fs::path data = scratch_dir() / "clustered.emb";
    REQUIRE(run_cli("synth --classes 6 --dim 8 --per 20 --separation 2 --noise 1 --seed 77 --out " +
                    data.string()).exit_code == 0);
    const auto k1 = run_cli("eval --data " + data.string() + " --k 1 --runs 10 --seed 12");
    const auto k5 = run_cli("eval --data " + data.string() + " --k 5 --runs 10 --seed 12");
    REQUIRE(k1.exit_code == 0);
    REQUIRE(k5.exit_code == 0);
    CHECK(trailer_value(k5.out, "acc.mean") >= trailer_value(k1.out, "acc.mean"));
}

TEST_CASE("eval: k too large for a class exits 65 and names the class") {
    const fs::path data = scratch_dir() / "five_per.emb";
    REQUIRE(run_cli("synth --classes 3 --dim 4 --per 5 --seed 4 --out " + data.string()).exit_code == 0);
    const auto r = run_cli("eval --data " + data.string() + " --k 5");
    CHECK(r.exit_code == 65);
    CHECK(r.err.find("class 0") != std::string::npos);
}

TEST_CASE("eval: checkpoint path, domain filter, and holdout work together") {
    const fs::path data = scratch_dir() / "domains.emb";
    REQUIRE(run_cli("synth --classes 4 --domains 3 --dim 6 --per 12 --offset 0.5 --seed 21 --out " +
                    data.string()).exit_code == 0);
    const fs::path ck = scratch_dir() / "domains.mlp";
    REQUIRE(run_cli("train --data " + data.string() +
                    " --loss protoclr --epochs 10 --batch 16 --seed 1 --out " + ck.string())
                .exit_code == 0);

    const auto filtered = run_cli("eval --data " + data.string() + " --checkpoint " + ck.string() +
                                  " --k 1 --runs 3 --seed 5 --domain 2");
    REQUIRE(filtered.exit_code == 0);
    CHECK((int)trailer_value(filtered.out, "n") == 4 * 12);

    const auto held = run_cli("eval --data " + data.string() + " --k 1 --runs 3 --seed 5 --holdout 0.5");
    REQUIRE(held.exit_code == 0);
    CHECK((int)trailer_value(held.out, "n") == 4 * 12 * 3 / 2);

    // dimension mismatch between checkpoint and data
    const fs::path other = scratch_dir() / "otherdim.emb";
    REQUIRE(run_cli("synth --classes 4 --dim 5 --per 8 --seed 2 --out " + other.string()).exit_code == 0);
    CHECK(run_cli("eval --data " + other.string() + " --checkpoint " + ck.string()).exit_code == 65);
}

TEST_CASE("probe subcommands pass their acceptance inequalities") {
    const auto conv = run_cli("probe --probe convergence --classes 8 --per 8 --dim 16 --tau 0.5 --seed 11");
    CHECK(conv.exit_code == 0);
    CHECK(conv.out.find("status=pass") != std::string::npos);

    const auto var = run_cli("probe --probe variance --dim 8 --sizes 2,8,32 --resamples 10000 --seed 11");
    CHECK(var.exit_code == 0);
    CHECK(var.out.find("status=pass") != std::string::npos);
}

TEST_CASE("cost: tiny equal-cost batch, crossover, and the published-scale ratio") {
    const auto tiny = run_cli("cost --n 4 --classes 2 --d 2");
    REQUIRE(tiny.exit_code == 0);
    CHECK((long long)trailer_value(tiny.out, "supcon_macs") == 24);
    CHECK((long long)trailer_value(tiny.out, "protoclr_macs") == 24);

    const auto big = run_cli("cost --n 512 --classes 180 --d 128");
    REQUIRE(big.exit_code == 0);
    CHECK(trailer_value(big.out, "ratio") == Catch::Approx(2.823).margin(5e-4));

    const auto verified = run_cli("cost --n 64 --classes 7 --d 16 --verify-instrumented --seed 9");
    REQUIRE(verified.exit_code == 0);
    CHECK(trailer_value(verified.out, "instrumented_supcon_macs") ==
          trailer_value(verified.out, "supcon_macs"));
}

TEST_CASE("every command is trailer-deterministic under identical flags and seed") {
    const fs::path data = scratch_dir() / "det_data.emb";
    REQUIRE(run_cli("synth --classes 4 --domains 2 --dim 6 --per 10 --seed 33 --out " + data.string())
                .exit_code == 0);
    const fs::path ck = scratch_dir() / "det.mlp";
    REQUIRE(run_cli("train --data " + data.string() + " --epochs 3 --batch 16 --seed 8 --out " +
                    ck.string()).exit_code == 0);

    const std::vector<std::string> commands = {
        "gradcheck --loss supcon --n 12 --d 4 --classes 3 --trials 3 --seed 5",
        "synth --classes 3 --dim 4 --per 6 --seed 77 --out " + (scratch_dir() / "det_out.emb").string(),
        "train --data " + data.string() + " --epochs 2 --batch 16 --seed 9 --out " +
            (scratch_dir() / "det_ck.mlp").string(),
        "eval --data " + data.string() + " --checkpoint " + ck.string() + " --k 1 --runs 4 --seed 2",
        "probe --probe convergence --classes 4 --per 4 --dim 8 --seed 3",
        "probe --probe variance --dim 4 --sizes 2,8 --resamples 1000 --seed 3",
        "cost --n 32 --classes 5 --d 8 --verify-instrumented --seed 1",
    };
    for (const auto& cmd : commands) {
        const auto a = run_cli(cmd);
        const auto b = run_cli(cmd);
        INFO(cmd);
        REQUIRE(a.exit_code == 0);
        REQUIRE(b.exit_code == 0);
        CHECK(trailer_of(a.out) == trailer_of(b.out));
    }
}
