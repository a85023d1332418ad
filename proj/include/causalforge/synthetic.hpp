#pragma once

#include <cstdint>
#include <vector>

#include "causalforge/idx.hpp"
#include "causalforge/rng.hpp"

namespace causalforge {

// Procedural stand-in corpus in MNIST's shape: seven-segment style digits
// rendered at 28x28 with per-sample jitter and noise. Lets the full
// pipeline (scorers, encoders, metrics) run offline when the real IDX
// files are not present.

namespace detail {

// Segment layout: 0 top, 1 top-left, 2 top-right, 3 middle, 4 bottom-left,
// 5 bottom-right, 6 bottom.
inline constexpr unsigned char kSegments[10] = {
    0b1110111,  // 0
    0b0100100,  // 1
    0b1011101,  // 2
    0b1101101,  // 3
    0b0101110,  // 4
    0b1101011,  // 5
    0b1111011,  // 6
    0b0100101,  // 7
    0b1111111,  // 8
    0b1101111,  // 9
};

}  // namespace detail

inline LabeledImage synth_digit(int label, std::size_t index, Rng& rng) {
    LabeledImage im;
    im.label = label;
    im.index = index;

    const int dx = static_cast<int>(rng.below(5)) - 2;  // jitter +-2 px
    const int dy = static_cast<int>(rng.below(5)) - 2;
    const float fg = 0.6f + 0.4f * static_cast<float>(rng.uniform());
    // glyph box: rows 4..23, cols 9..18 before jitter
    const int top = 4 + dy, bottom = 23 + dy, left = 9 + dx, right = 18 + dx, mid = (4 + 23) / 2 + dy;

    auto paint = [&](int r0, int r1, int c0, int c1) {
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c)
                if (r >= 0 && r < kImageHeight && c >= 0 && c < kImageWidth)
                    im.pixels[r * kImageWidth + c] = fg;
    };

    const unsigned char segs = detail::kSegments[label];
    if (segs & (1 << 0)) paint(top, top + 1, left, right);                    // top
    if (segs & (1 << 1)) paint(top, mid, left, left + 1);                     // top-left
    if (segs & (1 << 2)) paint(top, mid, right - 1, right);                   // top-right
    if (segs & (1 << 3)) paint(mid, mid + 1, left, right);                    // middle
    if (segs & (1 << 4)) paint(mid, bottom, left, left + 1);                  // bottom-left
    if (segs & (1 << 5)) paint(mid, bottom, right - 1, right);                // bottom-right
    if (segs & (1 << 6)) paint(bottom - 1, bottom, left, right);              // bottom

    for (int p = 0; p < kImagePixels; ++p) {
        const float noise = 0.15f * static_cast<float>(rng.uniform());
        float v = im.pixels[p] + noise;
        im.pixels[p] = v > 1.0f ? 1.0f : v;
    }
    return im;
}

inline Corpus synth_corpus(std::size_t n, std::uint64_t seed) {
    Corpus corpus;
    corpus.images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(splitmix64(seed ^ 0x5e6d1ULL) + i);
        const int label = static_cast<int>(rng.below(10));
        corpus.images.push_back(synth_digit(label, i, rng));
    }
    corpus.source_checksum = "synthetic";
    return corpus;
}

}  // namespace causalforge
