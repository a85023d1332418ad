// synth-corpus: writes a procedural digit corpus as IDX files so the
// pipeline can be exercised without the real MNIST download.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "causalforge/idx.hpp"
#include "causalforge/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"write a synthetic digit corpus in IDX format"};
    std::string out_dir = "data";
    std::size_t n = 10000;
    std::uint64_t seed = 0;
    app.add_option("--out-dir", out_dir, "output directory");
    app.add_option("--n", n, "image count");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(out_dir);
        causalforge::Corpus corpus = causalforge::synth_corpus(n, seed);
        const auto dir = std::filesystem::path(out_dir);
        causalforge::write_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
                               corpus.images);
        std::printf("wrote %zu images to %s\n", corpus.size(), out_dir.c_str());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
