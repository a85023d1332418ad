#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "causalforge/idx.hpp"
#include "causalforge/synthetic.hpp"

namespace fs = std::filesystem;
using namespace causalforge;

namespace {

int run(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// One shared workspace: a small digit corpus in IDX form plus the
// artifacts the subcommands produce from it.
struct CliFixture {
    fs::path dir;
    std::string cli = CF_CLI_BIN;

    CliFixture() {
        dir = fs::temp_directory_path() / "causal_forge_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir / "data");
        Corpus corpus = synth_corpus(150, 42);
        write_idx(dir / "data" / "train-images-idx3-ubyte",
                  dir / "data" / "train-labels-idx1-ubyte", corpus.images);
    }

    std::string data() const { return (dir / "data").string(); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

CliFixture& fixture() {
    static CliFixture f;
    return f;
}

std::size_t csv_data_rows(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::size_t rows = 0;
    std::getline(in, line);  // header
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    return rows;
}

}  // namespace

TEST_CASE("simulate is byte-deterministic and honors --n") {
    auto& f = fixture();
    const std::string base = f.cli + " simulate --mnist-dir " + f.data() + " --seed 9 --n 100 ";
    REQUIRE(run(base + "--out " + f.path("ds_a")) == 0);
    REQUIRE(run(base + "--out " + f.path("ds_b")) == 0);
    CHECK(slurp(f.path("ds_a") + ".csv") == slurp(f.path("ds_b") + ".csv"));
    CHECK(slurp(f.path("ds_a") + ".meta.json") == slurp(f.path("ds_b") + ".meta.json"));
    CHECK(csv_data_rows(f.path("ds_a") + ".csv") == 100);

    REQUIRE(run(f.cli + " simulate --mnist-dir " + f.data() + " --seed 10 --n 100 --out " +
                f.path("ds_c")) == 0);
    CHECK(slurp(f.path("ds_a") + ".csv") != slurp(f.path("ds_c") + ".csv"));
}

TEST_CASE("simulate on a corpus with missing labels exits with the integrity code") {
    auto& f = fixture();
    fs::create_directories(f.dir / "broken");
    fs::copy_file(f.dir / "data" / "train-images-idx3-ubyte",
                  f.dir / "broken" / "train-images-idx3-ubyte",
                  fs::copy_options::overwrite_existing);
    CHECK(run(f.cli + " simulate --mnist-dir " + (f.dir / "broken").string() + " --out " +
              f.path("ds_broken")) == 3);
}

TEST_CASE("invalid configuration exits with the config code") {
    auto& f = fixture();
    CHECK(run(f.cli + " simulate --mnist-dir " + f.data() + " --scorer0-dropout 1.5 --out " +
              f.path("ds_bad")) == 2);
    CHECK(run(f.cli + " train --dataset " + f.path("ds_a") + " --mnist-dir " + f.data() +
              " --treg maybe --out " + f.path("m_bad.ckpt")) == 2);
    CHECK(run(f.cli + " report --runs-dir " + f.path("no_such_dir")) == 2);
}

TEST_CASE("train, evaluate, and report run end to end") {
    auto& f = fixture();
    const std::string train_cmd = f.cli + " train --dataset " + f.path("ds_a") +
                                  " --mnist-dir " + f.data() +
                                  " --encoder dense --epochs 2 --batch-size 32 --seed 3";
    REQUIRE(run(train_cmd + " --treg on --out " + f.path("m_on.ckpt")) == 0);
    REQUIRE(run(train_cmd + " --treg off --out " + f.path("m_off.ckpt")) == 0);

    // training log: epoch trajectory with epsilon starting from 0
    std::ifstream log(f.path("m_on.ckpt") + ".log.csv");
    std::string header, row1, row2;
    REQUIRE(std::getline(log, header));
    CHECK(header == "epoch,mean_loss,epsilon");
    REQUIRE(std::getline(log, row1));
    REQUIRE(std::getline(log, row2));
    CHECK(row1.rfind("0,", 0) == 0);
    CHECK(row2.rfind("1,", 0) == 0);

    // with t-reg off, epsilon receives no gradient and stays exactly 0
    std::ifstream log_off(f.path("m_off.ckpt") + ".log.csv");
    std::getline(log_off, header);
    std::string row;
    while (std::getline(log_off, row))
        CHECK(row.substr(row.rfind(',') + 1) == "0");

    fs::create_directories(f.dir / "runs");
    REQUIRE(run(f.cli + " evaluate --dataset " + f.path("ds_a") + " --mnist-dir " + f.data() +
                " --model " + f.path("m_on.ckpt") + " --out " +
                (f.dir / "runs" / "r_on.json").string()) == 0);
    REQUIRE(run(f.cli + " evaluate --dataset " + f.path("ds_a") + " --mnist-dir " + f.data() +
                " --model " + f.path("m_off.ckpt") + " --out " +
                (f.dir / "runs" / "r_off.json").string()) == 0);

    const std::string report = slurp(f.dir / "runs" / "r_on.json");
    CHECK(report.find("\"accuracy\"") != std::string::npos);
    CHECK(report.find("\"ate_ae\"") != std::string::npos);
    CHECK(report.find("\"pretreatment_bias_est\"") != std::string::npos);

    // evaluating against a dataset the model was not trained on fails closed
    CHECK(run(f.cli + " evaluate --dataset " + f.path("ds_c") + " --mnist-dir " + f.data() +
              " --model " + f.path("m_on.ckpt") + " --out " + f.path("mismatch.json")) == 3);

    const int status = std::system((f.cli + " report --runs-dir " + (f.dir / "runs").string() +
                                    " --format csv > " + f.path("table.csv") + " 2>/dev/null")
                                       .c_str());
    REQUIRE(WEXITSTATUS(status) == 0);
    const std::string table = slurp(f.path("table.csv"));
    CHECK(table.find("table,encoder,metric,wo_treg,treg") != std::string::npos);
    CHECK(table.find("outcome,dense,ate_ae,") != std::string::npos);
    CHECK(table.find("bias,dense,pretreatment_bias_est,") != std::string::npos);
}
