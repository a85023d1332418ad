#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "causalforge/dragon.hpp"
#include "causalforge/errors.hpp"
#include "causalforge/idx.hpp"
#include "causalforge/nn/optim.hpp"
#include "causalforge/objectives.hpp"
#include "causalforge/simulate.hpp"

namespace causalforge {

// Projected view of a dataset split holding only what training is allowed
// to see: covariates X, observed outcome y, and treatment t. Potential
// outcomes and Bernoulli parameters are dropped at construction, so no
// training code path can read them.
struct TrainingView {
    nn::Mat x;          // (n x 784)
    Eigen::VectorXd t;  // binary
    Eigen::VectorXd y;  // binary

    std::size_t size() const { return static_cast<std::size_t>(t.size()); }

    static TrainingView from_records(const std::vector<CausalRecord>& records,
                                     const Corpus& corpus) {
        std::unordered_map<std::size_t, const LabeledImage*> by_index;
        for (const auto& im : corpus.images) by_index[im.index] = &im;
        TrainingView v;
        const Eigen::Index n = static_cast<Eigen::Index>(records.size());
        v.x.resize(n, kImagePixels);
        v.t.resize(n);
        v.y.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto it = by_index.find(records[i].index);
            if (it == by_index.end())
                throw IntegrityError("record index " + std::to_string(records[i].index) +
                                     " not present in corpus");
            for (int p = 0; p < kImagePixels; ++p)
                v.x(i, p) = static_cast<double>(it->second->pixels[p]);
            v.t(i) = records[i].t;
            v.y(i) = records[i].y;
        }
        return v;
    }
};

// Deterministic record split mirroring corpus::split (floor train/val,
// remainder to test).
struct RecordSplit {
    std::vector<CausalRecord> train, val, test;
};

inline RecordSplit split_records(const std::vector<CausalRecord>& records, SplitFractions f,
                                 std::uint64_t seed) {
    const double sum = f.train + f.val + f.test;
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    const std::size_t n = records.size();
    const auto perm = seeded_permutation(n, seed);
    const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n)));
    RecordSplit out;
    for (std::size_t i = 0; i < n; ++i) {
        const CausalRecord& r = records[perm[i]];
        if (i < n_train)
            out.train.push_back(r);
        else if (i < n_train + n_val)
            out.val.push_back(r);
        else
            out.test.push_back(r);
    }
    return out;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 64;
    int epochs = 20;
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double epsilon = 0.0;
};

// Minibatch Adam over the composite objective. Fully determined by
// (initial parameters, view, configs, seed); batch order comes from our own
// seeded permutation.
inline std::vector<EpochLog> train_model(DragonModel& model, const TrainingView& view,
                                         const LossConfig& loss_config,
                                         const TrainConfig& train_config) {
    loss_config.validate();
    if (view.size() == 0) throw ConfigError("train_model: empty training view");
    if (train_config.batch_size <= 0 || train_config.epochs < 0)
        throw ConfigError("train_model: bad batch size or epoch count");

    nn::Adam opt(train_config.learning_rate);
    std::vector<EpochLog> log;
    const std::size_t n = view.size();
    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        const auto perm = seeded_permutation(
            n, splitmix64(train_config.seed ^ 0xe90c4ULL) + static_cast<std::uint64_t>(epoch));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += train_config.batch_size) {
            const std::size_t stop = std::min(n, start + train_config.batch_size);
            const Eigen::Index bn = static_cast<Eigen::Index>(stop - start);
            nn::Mat xb(bn, kImagePixels);
            Eigen::VectorXd tb(bn), yb(bn);
            for (Eigen::Index i = 0; i < bn; ++i) {
                const std::size_t row = perm[start + i];
                xb.row(i) = view.x.row(static_cast<Eigen::Index>(row));
                tb(i) = view.t(static_cast<Eigen::Index>(row));
                yb(i) = view.y(static_cast<Eigen::Index>(row));
            }
            DragonForward fwd = model.forward_vars(nn::constant(std::move(xb)));
            nn::Var loss = total_loss(fwd, tb, yb, loss_config, model.epsilon());
            model.params().zero_grads();
            nn::backward(loss);
            opt.step(model.params());
            loss_sum += loss->value(0, 0);
            ++batches;
        }
        log.push_back({epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                       model.epsilon_value()});
    }
    return log;
}

}  // namespace causalforge
