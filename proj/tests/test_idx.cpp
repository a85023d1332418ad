#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "causalforge/idx.hpp"
#include "causalforge/synthetic.hpp"

using namespace causalforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "causalforge_idx_tests";
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct IdxPair {
    fs::path images, labels;
};

IdxPair write_corpus(const std::string& tag, std::size_t n, std::uint64_t seed) {
    Corpus c = synth_corpus(n, seed);
    IdxPair p{temp_dir() / (tag + "-images"), temp_dir() / (tag + "-labels")};
    write_idx(p.images, p.labels, c.images);
    return p;
}

}  // namespace

TEST_CASE("load_idx round-trips a written corpus") {
    auto p = write_corpus("roundtrip", 50, 3);
    Corpus c = load_idx(p.images, p.labels);
    CHECK(c.size() == 50);
    for (const auto& im : c.images) {
        CHECK(im.label >= 0);
        CHECK(im.label <= 9);
        for (float v : im.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    // indices unique and in source order
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.images[i].index == i);
}

TEST_CASE("load_idx is deterministic including checksum") {
    auto p = write_corpus("determinism", 20, 9);
    Corpus a = load_idx(p.images, p.labels);
    Corpus b = load_idx(p.images, p.labels);
    CHECK(a.source_checksum == b.source_checksum);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.images[i].label == b.images[i].label);
        CHECK(a.images[i].pixels == b.images[i].pixels);
    }
}

TEST_CASE("normalization endpoints and monotonicity") {
    // byte 255 -> 1.0, byte 0 -> 0.0, and a < b stays ordered
    for (int a = 0; a < 255; a += 17) {
        const float fa = static_cast<float>(a) / 255.0f;
        const float fb = static_cast<float>(a + 1) / 255.0f;
        CHECK(fa < fb);
    }
    CHECK(0.0f / 255.0f == 0.0f);
    CHECK(255.0f / 255.0f == 1.0f);
}

TEST_CASE("bad magic numbers are format errors") {
    auto p = write_corpus("magic", 5, 1);
    // images file opened as labels and vice versa
    CHECK_THROWS_AS(load_idx(p.labels, p.images), FormatError);
}

TEST_CASE("count mismatch is an integrity error") {
    auto a = write_corpus("mismatch_a", 5, 1);
    auto b = write_corpus("mismatch_b", 7, 1);
    CHECK_THROWS_AS(load_idx(a.images, b.labels), IntegrityError);
}

TEST_CASE("truncated payload is an integrity error") {
    auto p = write_corpus("truncated", 5, 1);
    fs::path cut = temp_dir() / "truncated-images-cut";
    {
        std::ifstream in(p.images, std::ios::binary);
        std::ofstream out(cut, std::ios::binary);
        std::vector<char> buf(16 + 3 * kImagePixels + 10);
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        out.write(buf.data(), in.gcount());
    }
    CHECK_THROWS_AS(load_idx(cut, p.labels), IntegrityError);
}

TEST_CASE("split: identity fractions keep the whole corpus in train") {
    Corpus c = synth_corpus(30, 4);
    auto [train, val, test] = split(c, {1.0, 0.0, 0.0}, 11);
    CHECK(train.size() == 30);
    CHECK(val.size() == 0);
    CHECK(test.size() == 0);
}

TEST_CASE("split: bad fraction sum is a config error") {
    Corpus c = synth_corpus(10, 4);
    CHECK_THROWS_AS(split(c, {0.5, 0.5, 0.1}, 0), ConfigError);
}

TEST_CASE("split: same seed gives identical partitions") {
    Corpus c = synth_corpus(100, 5);
    auto [a1, b1, c1] = split(c, {0.8, 0.1, 0.1}, 77);
    auto [a2, b2, c2] = split(c, {0.8, 0.1, 0.1}, 77);
    REQUIRE(a1.size() == a2.size());
    for (std::size_t i = 0; i < a1.size(); ++i) CHECK(a1.images[i].index == a2.images[i].index);
    REQUIRE(c1.size() == c2.size());
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1.images[i].index == c2.images[i].index);
}

TEST_CASE("split: disjoint and exhaustive for many seeds") {
    Corpus c = synth_corpus(53, 6);
    for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 987654321ULL}) {
        auto [train, val, test] = split(c, {0.6, 0.2, 0.2}, seed);
        std::set<std::size_t> seen;
        for (const auto* part : {&train, &val, &test})
            for (const auto& im : part->images) CHECK(seen.insert(im.index).second);
        CHECK(seen.size() == 53);
        // floor/floor/remainder sizing
        CHECK(train.size() == 31);
        CHECK(val.size() == 10);
        CHECK(test.size() == 12);
    }
}
