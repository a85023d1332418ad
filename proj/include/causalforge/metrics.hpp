#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalforge/dragon.hpp"
#include "causalforge/errors.hpp"
#include "causalforge/objectives.hpp"
#include "causalforge/simulate.hpp"

namespace causalforge {

struct MetricsReport {
    double accuracy = 0.0;
    double ate_ae = 0.0;
    double ate_est = 0.0;
    double ate_true = 0.0;
    double att_true = 0.0;
    double association = 0.0;
    double pretreatment_bias_true = 0.0;
    double pretreatment_bias_est = 0.0;
    bool treg_enabled = false;
    std::string encoder_variant;
    std::uint64_t seed = 0;
};

inline double ate_ae(double ate_true, double ate_est) { return std::abs(ate_true - ate_est); }

// Fraction of records where the factual head, thresholded at 0.5, matches
// the observed outcome.
inline double factual_accuracy(const DragonOutputs& outputs, const Eigen::VectorXd& t,
                               const Eigen::VectorXd& y) {
    const Eigen::Index n = t.size();
    if (outputs.q0.size() != n || outputs.q1.size() != n || y.size() != n)
        throw ShapeError("factual_accuracy: length mismatch");
    if (n == 0) throw DegenerateGroupError("factual_accuracy: empty inputs");
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double q = t(i) == 1.0 ? outputs.q1(i) : outputs.q0(i);
        const int pred = q >= 0.5 ? 1 : 0;
        if (pred == static_cast<int>(y(i))) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

namespace detail {

// Difference of group means; shared by association / pretreatment_bias.
inline double group_mean_difference(const Eigen::VectorXd& values, const Eigen::VectorXd& t,
                                    const char* what) {
    if (values.size() != t.size()) throw ShapeError(std::string(what) + ": length mismatch");
    double sum1 = 0, n1 = 0, sum0 = 0, n0 = 0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        if (t(i) == 1.0) {
            sum1 += values(i);
            n1 += 1;
        } else {
            sum0 += values(i);
            n0 += 1;
        }
    }
    if (n1 == 0 || n0 == 0)
        throw DegenerateGroupError(std::string(what) + ": both groups must be non-empty");
    return sum1 / n1 - sum0 / n0;
}

}  // namespace detail

// mean(y | t=1) - mean(y | t=0)
inline double association(const Eigen::VectorXd& y, const Eigen::VectorXd& t) {
    return detail::group_mean_difference(y, t, "association");
}

// mean(y1 - y0) over treated records, as a difference of treated-group means.
inline double att(const Eigen::VectorXd& y0, const Eigen::VectorXd& y1, const Eigen::VectorXd& t) {
    if (y0.size() != t.size() || y1.size() != t.size()) throw ShapeError("att: length mismatch");
    double sum_y1 = 0, sum_y0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < t.size(); ++i)
        if (t(i) == 1.0) {
            sum_y1 += y1(i);
            sum_y0 += y0(i);
            n1 += 1;
        }
    if (n1 == 0) throw DegenerateGroupError("att: no treated records");
    return sum_y1 / n1 - sum_y0 / n1;
}

// mean(y0 | t=1) - mean(y0 | t=0). Accepts simulated binary y0 (true
// variant) or model q0 probabilities (estimated variant).
inline double pretreatment_bias(const Eigen::VectorXd& y0_values, const Eigen::VectorXd& t) {
    return detail::group_mean_difference(y0_values, t, "pretreatment_bias");
}

// association - att - pretreatment_bias on the same records. Zero (to
// floating-point identity) because y equals the factual potential outcome.
inline double decomposition_check(const std::vector<CausalRecord>& records) {
    const Eigen::Index n = static_cast<Eigen::Index>(records.size());
    Eigen::VectorXd y(n), y0(n), y1(n), t(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i) = records[i].y;
        y0(i) = records[i].y0;
        y1(i) = records[i].y1;
        t(i) = records[i].t;
    }
    return association(y, t) - att(y0, y1, t) - pretreatment_bias(y0, t);
}

// Runs the model over one split and assembles the full report. True
// estimands are recomputed on exactly the split's records.
inline MetricsReport evaluate_model(const DragonModel& model, const Corpus& corpus,
                                    const std::vector<CausalRecord>& records,
                                    const LossConfig& loss_config) {
    if (records.empty()) throw DegenerateGroupError("evaluate_model: empty split");
    std::unordered_map<std::size_t, const LabeledImage*> by_index;
    for (const auto& im : corpus.images) by_index[im.index] = &im;

    const Eigen::Index n = static_cast<Eigen::Index>(records.size());
    nn::Mat x(n, kImagePixels);
    Eigen::VectorXd t(n), y(n), y0(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto it = by_index.find(records[i].index);
        if (it == by_index.end())
            throw IntegrityError("record index " + std::to_string(records[i].index) +
                                 " not present in corpus");
        for (int p = 0; p < kImagePixels; ++p)
            x(i, p) = static_cast<double>(it->second->pixels[p]);
        t(i) = records[i].t;
        y(i) = records[i].y;
        y0(i) = records[i].y0;
    }

    const DragonOutputs outputs = model.forward(x);
    const auto [ite, ate_est] = estimate_effects(outputs);
    const TrueEstimands truth = true_estimands(records);

    MetricsReport r;
    r.accuracy = factual_accuracy(outputs, t, y);
    r.ate_est = ate_est;
    r.ate_true = truth.ate_true;
    r.ate_ae = ate_ae(truth.ate_true, ate_est);
    r.att_true = truth.att_true;
    r.association = truth.association;
    r.pretreatment_bias_true = truth.pretreatment_bias_true;
    r.pretreatment_bias_est = pretreatment_bias(outputs.q0, t);
    r.treg_enabled = loss_config.treg_enabled;
    r.encoder_variant = to_string(model.spec().variant);
    r.seed = model.seed();
    return r;
}

inline nlohmann::json metrics_report_to_json(const MetricsReport& r) {
    return {{"accuracy", r.accuracy},
            {"ate_ae", r.ate_ae},
            {"ate_est", r.ate_est},
            {"ate_true", r.ate_true},
            {"att_true", r.att_true},
            {"association", r.association},
            {"pretreatment_bias_true", r.pretreatment_bias_true},
            {"pretreatment_bias_est", r.pretreatment_bias_est},
            {"treg_enabled", r.treg_enabled},
            {"encoder_variant", r.encoder_variant},
            {"seed", r.seed}};
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.ate_ae = j.at("ate_ae").get<double>();
    r.ate_est = j.at("ate_est").get<double>();
    r.ate_true = j.at("ate_true").get<double>();
    r.att_true = j.at("att_true").get<double>();
    r.association = j.at("association").get<double>();
    r.pretreatment_bias_true = j.at("pretreatment_bias_true").get<double>();
    r.pretreatment_bias_est = j.at("pretreatment_bias_est").get<double>();
    r.treg_enabled = j.at("treg_enabled").get<bool>();
    r.encoder_variant = j.at("encoder_variant").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

}  // namespace causalforge
