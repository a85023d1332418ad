#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include "causalforge/errors.hpp"
#include "causalforge/rng.hpp"

namespace causalforge {

inline constexpr int kImageHeight = 28;
inline constexpr int kImageWidth = 28;
inline constexpr int kImagePixels = kImageHeight * kImageWidth;
inline constexpr int kNumClasses = 10;

// One grayscale digit. Pixels are row-major, normalized to [0,1].
struct LabeledImage {
    std::array<float, kImagePixels> pixels{};
    int label = 0;
    std::size_t index = 0;  // position in the source file, unique per corpus
};

struct Corpus {
    std::vector<LabeledImage> images;
    std::string source_checksum;  // hex digest over both raw files

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw IntegrityError("truncated IDX file while reading " + what);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

// FNV-1a 64-bit, streamed over raw file bytes.
class Fnv1a {
public:
    void update(const char* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= static_cast<unsigned char>(data[i]);
            hash_ *= 0x100000001b3ULL;
        }
    }
    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 0; i < 16; ++i) out[15 - i] = digits[(hash_ >> (4 * i)) & 0xf];
        return out;
    }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline void hash_file(const std::filesystem::path& path, Fnv1a& h) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("cannot open " + path.string());
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
}

}  // namespace detail

// IDX magic numbers: 2051 for image files, 2049 for label files.
inline constexpr std::uint32_t kIdxImagesMagic = 2051;
inline constexpr std::uint32_t kIdxLabelsMagic = 2049;

inline Corpus load_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IntegrityError("cannot open images file: " + images_path.string());
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IntegrityError("cannot open labels file: " + labels_path.string());

    const std::uint32_t img_magic = detail::read_be32(img, "images magic");
    if (img_magic != kIdxImagesMagic)
        throw FormatError("bad magic number in images file: got " + std::to_string(img_magic) +
                          ", expected " + std::to_string(kIdxImagesMagic));
    const std::uint32_t lab_magic = detail::read_be32(lab, "labels magic");
    if (lab_magic != kIdxLabelsMagic)
        throw FormatError("bad magic number in labels file: got " + std::to_string(lab_magic) +
                          ", expected " + std::to_string(kIdxLabelsMagic));

    const std::uint32_t n_images = detail::read_be32(img, "image count");
    const std::uint32_t rows = detail::read_be32(img, "row count");
    const std::uint32_t cols = detail::read_be32(img, "column count");
    const std::uint32_t n_labels = detail::read_be32(lab, "label count");

    if (rows != kImageHeight || cols != kImageWidth)
        throw FormatError("unexpected image dimensions " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    if (n_images != n_labels)
        throw IntegrityError("image count " + std::to_string(n_images) +
                             " does not match label count " + std::to_string(n_labels));

    Corpus corpus;
    corpus.images.resize(n_images);
    std::vector<unsigned char> pixel_buf(kImagePixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!img.read(reinterpret_cast<char*>(pixel_buf.data()), kImagePixels))
            throw IntegrityError("truncated image payload at record " + std::to_string(i));
        char label_byte;
        if (!lab.read(&label_byte, 1))
            throw IntegrityError("truncated label payload at record " + std::to_string(i));
        const int label = static_cast<unsigned char>(label_byte);
        if (label > 9) throw IntegrityError("label out of range at record " + std::to_string(i));

        LabeledImage& li = corpus.images[i];
        li.label = label;
        li.index = i;
        for (int p = 0; p < kImagePixels; ++p)
            li.pixels[p] = static_cast<float>(pixel_buf[p]) / 255.0f;
    }

    detail::Fnv1a h;
    detail::hash_file(images_path, h);
    detail::hash_file(labels_path, h);
    corpus.source_checksum = h.hex();
    return corpus;
}

// Writes a (corpus-shaped) image/label pair in IDX format. Used by tools and
// tests to materialize corpora; the loader above is the read side.
inline void write_idx(const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path,
                      const std::vector<LabeledImage>& images) {
    auto put_be32 = [](std::ostream& out, std::uint32_t v) {
        unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<char*>(buf), 4);
    };
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw IntegrityError("cannot open IDX output files for writing");
    put_be32(img, kIdxImagesMagic);
    put_be32(img, static_cast<std::uint32_t>(images.size()));
    put_be32(img, kImageHeight);
    put_be32(img, kImageWidth);
    put_be32(lab, kIdxLabelsMagic);
    put_be32(lab, static_cast<std::uint32_t>(images.size()));
    for (const auto& im : images) {
        unsigned char row[kImagePixels];
        for (int p = 0; p < kImagePixels; ++p) {
            float v = im.pixels[p];
            if (v < 0.0f) v = 0.0f;
            if (v > 1.0f) v = 1.0f;
            row[p] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        img.write(reinterpret_cast<char*>(row), kImagePixels);
        char lb = static_cast<char>(im.label);
        lab.write(&lb, 1);
    }
}

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

// Disjoint, exhaustive, seeded partition. Sizes: floor for train and val,
// remainder to test.
inline std::tuple<Corpus, Corpus, Corpus> split(const Corpus& corpus, SplitFractions fractions,
                                                std::uint64_t seed) {
    const double sum = fractions.train + fractions.val + fractions.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1, got " + std::to_string(sum));
    if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0)
        throw ConfigError("split fractions must be non-negative");

    const std::size_t n = corpus.size();
    const auto perm = seeded_permutation(n, seed);
    const auto n_train = static_cast<std::size_t>(std::floor(fractions.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(fractions.val * static_cast<double>(n)));

    Corpus train, val, test;
    train.source_checksum = val.source_checksum = test.source_checksum = corpus.source_checksum;
    for (std::size_t i = 0; i < n; ++i) {
        const LabeledImage& im = corpus.images[perm[i]];
        if (i < n_train)
            train.images.push_back(im);
        else if (i < n_train + n_val)
            val.images.push_back(im);
        else
            test.images.push_back(im);
    }
    return {std::move(train), std::move(val), std::move(test)};
}

}  // namespace causalforge
