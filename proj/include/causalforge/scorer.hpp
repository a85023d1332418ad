#pragma once

#include <cstdint>
#include <string>
#include <algorithm>
#include <vector>

#include "causalforge/errors.hpp"
#include "causalforge/idx.hpp"
#include "causalforge/nn/autodiff.hpp"
#include "causalforge/nn/optim.hpp"
#include "causalforge/rng.hpp"

namespace causalforge {

// Configuration of one noisy scorer CNN. Two scorers with different
// configurations generate the two potential-outcome distributions.
struct ScorerConfig {
    std::uint64_t seed = 0;
    std::vector<double> dropout_rates = {0.2};  // one per site, or one broadcast to all
    std::vector<int> hidden_widths = {64};
    int train_epochs = 1;
    double learning_rate = 1e-3;
    int batch_size = 128;

    bool operator==(const ScorerConfig&) const = default;

    // Sites: one per conv block (2) plus one per hidden layer.
    std::size_t dropout_sites() const { return 2 + hidden_widths.size(); }

    double rate_at(std::size_t site) const {
        if (dropout_rates.size() == 1) return dropout_rates[0];
        return dropout_rates.at(site);
    }

    void validate() const {
        for (double r : dropout_rates)
            if (r < 0.0 || r >= 1.0) throw ConfigError("scorer dropout rates must lie in [0,1)");
        if (dropout_rates.size() != 1 && dropout_rates.size() != dropout_sites())
            throw ConfigError("scorer dropout_rates must have 1 entry or one per site");
        for (int w : hidden_widths)
            if (w <= 0) throw ConfigError("scorer hidden widths must be positive");
        if (train_epochs < 0) throw ConfigError("scorer train_epochs must be non-negative");
        if (learning_rate <= 0) throw ConfigError("scorer learning rate must be positive");
    }
};

// The simulator requires the two scorers to actually differ.
inline bool scorer_configs_differ(const ScorerConfig& a, const ScorerConfig& b) {
    return a.seed != b.seed || a.dropout_rates != b.dropout_rates ||
           a.hidden_widths != b.hidden_widths;
}

// Noisy CNN scorer: two strided conv blocks, a fully-connected stage, and a
// 10-way log-softmax. Dropout stays active at scoring time; the masks are
// the noise that differentiates repeated scores of one image.
class Scorer {
public:
    explicit Scorer(const ScorerConfig& config) : config_(config) {
        config_.validate();
        Rng init(splitmix64(config_.seed ^ 0x5c0e125ULL));
        conv1_w_ = params_.add("conv1.w", nn::glorot_uniform(kConv1.out_channels, kConv1.patch_size(), init));
        conv1_b_ = params_.add("conv1.b", nn::Mat::Zero(1, kConv1.out_channels));
        conv2_w_ = params_.add("conv2.w", nn::glorot_uniform(kConv2.out_channels, kConv2.patch_size(), init));
        conv2_b_ = params_.add("conv2.b", nn::Mat::Zero(1, kConv2.out_channels));
        int in_width = kConv2.out_channels * kConv2.out_h() * kConv2.out_w();
        for (std::size_t i = 0; i < config_.hidden_widths.size(); ++i) {
            const int w = config_.hidden_widths[i];
            fc_w_.push_back(params_.add("fc" + std::to_string(i) + ".w",
                                        nn::glorot_uniform(in_width, w, init)));
            fc_b_.push_back(params_.add("fc" + std::to_string(i) + ".b", nn::Mat::Zero(1, w)));
            in_width = w;
        }
        out_w_ = params_.add("out.w", nn::glorot_uniform(in_width, kNumClasses, init));
        out_b_ = params_.add("out.b", nn::Mat::Zero(1, kNumClasses));
    }

    const ScorerConfig& config() const { return config_; }
    nn::ParamStore& params() { return params_; }

    // Batched log-softmax logits; dropout masks drawn from `noise`.
    nn::Var forward(const nn::Var& x, Rng& noise) const {
        using namespace nn;
        Var h = relu(conv2d(x, conv1_w_, conv1_b_, kConv1));
        h = dropout(h, config_.rate_at(0), noise);
        h = relu(conv2d(h, conv2_w_, conv2_b_, kConv2));
        h = dropout(h, config_.rate_at(1), noise);
        for (std::size_t i = 0; i < fc_w_.size(); ++i) {
            h = relu(add_rowvec(matmul(h, fc_w_[i]), fc_b_[i]));
            h = dropout(h, config_.rate_at(2 + i), noise);
        }
        return log_softmax_rows(add_rowvec(matmul(h, out_w_), out_b_));
    }

private:
    static constexpr nn::ConvShape kConv1{1, kImageHeight, kImageWidth, 4, 3, 2, 1};
    static constexpr nn::ConvShape kConv2{4, 14, 14, 8, 3, 2, 1};

    ScorerConfig config_;
    nn::ParamStore params_;
    nn::Var conv1_w_, conv1_b_, conv2_w_, conv2_b_;
    std::vector<nn::Var> fc_w_, fc_b_;
    nn::Var out_w_, out_b_;
};

namespace detail {

inline nn::Mat batch_matrix(const Corpus& corpus, const std::vector<std::size_t>& rows) {
    nn::Mat x(rows.size(), kImagePixels);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (int p = 0; p < kImagePixels; ++p)
            x(r, p) = static_cast<double>(corpus.images[rows[r]].pixels[p]);
    return x;
}

}  // namespace detail

// Builds a scorer and, when train_epochs > 0, fits it to digit
// classification on the corpus (negative log-likelihood, Adam). Training
// keeps dropout active; everything is a function of config.seed.
// Batches are drawn in canonical (index-sorted) order so the fitted scorer
// does not depend on how the corpus happens to be ordered in memory.
inline Scorer build_scorer(const ScorerConfig& config, const Corpus& corpus) {
    if (corpus.empty()) throw ConfigError("build_scorer: corpus is empty");
    Scorer scorer(config);
    if (config.train_epochs == 0) return scorer;

    std::vector<std::size_t> canonical(corpus.size());
    for (std::size_t i = 0; i < canonical.size(); ++i) canonical[i] = i;
    std::sort(canonical.begin(), canonical.end(), [&](std::size_t a, std::size_t b) {
        return corpus.images[a].index < corpus.images[b].index;
    });

    nn::Adam opt(config.learning_rate);
    Rng noise(splitmix64(config.seed ^ 0x7aa1b0123ULL));
    const std::size_t n = corpus.size();
    for (int epoch = 0; epoch < config.train_epochs; ++epoch) {
        auto perm = seeded_permutation(n, splitmix64(config.seed) + static_cast<std::uint64_t>(epoch));
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t stop = std::min(n, start + config.batch_size);
            std::vector<std::size_t> rows;
            rows.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) rows.push_back(canonical[perm[i]]);
            nn::Var x = nn::constant(detail::batch_matrix(corpus, rows));
            nn::Mat onehot = nn::Mat::Zero(rows.size(), kNumClasses);
            for (std::size_t r = 0; r < rows.size(); ++r)
                onehot(r, corpus.images[rows[r]].label) = 1.0;
            nn::Var log_probs = scorer.forward(x, noise);
            // NLL = -sum(onehot .* log_probs)/B; mean_all divides by B*10.
            nn::Var loss = nn::scale(nn::mean_all(nn::hadamard(nn::constant(onehot), log_probs)),
                                     -static_cast<double>(kNumClasses));
            scorer.params().zero_grads();
            nn::backward(loss);
            opt.step(scorer.params());
        }
    }
    return scorer;
}

// One stochastic forward pass; returns the maximum softmax probability,
// always in [1/10, 1].
inline double score_image(const Scorer& scorer, const LabeledImage& image, Rng& noise) {
    nn::Mat x(1, kImagePixels);
    for (int p = 0; p < kImagePixels; ++p) x(0, p) = static_cast<double>(image.pixels[p]);
    nn::Var log_probs = scorer.forward(nn::constant(std::move(x)), noise);
    return std::exp(log_probs->value.row(0).maxCoeff());
}

}  // namespace causalforge
