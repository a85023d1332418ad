#pragma once

#include <Eigen/Dense>

#include "causalforge/dragon.hpp"
#include "causalforge/errors.hpp"
#include "causalforge/nn/autodiff.hpp"

namespace causalforge {

// Weights of the composite objective. treg_enabled = false removes the
// beta term entirely (not just zeroes its weight).
struct LossConfig {
    double alpha = 1.0;
    double beta = 1.0;
    bool treg_enabled = true;
    double clip_delta = 1e-3;  // clip bound for the perturbed prediction

    void validate() const {
        if (alpha < 0 || beta < 0) throw ConfigError("loss weights must be non-negative");
        if (!(clip_delta > 0.0) || clip_delta >= 0.5)
            throw ConfigError("clip_delta must lie in (0, 0.5)");
    }
};

namespace detail {

inline void check_lengths(const DragonForward& outputs, const Eigen::VectorXd& t,
                          const Eigen::VectorXd& y) {
    const Eigen::Index n = outputs.q0->value.rows();
    if (outputs.q1->value.rows() != n || outputs.g->value.rows() != n || t.size() != n ||
        y.size() != n)
        throw ShapeError("loss inputs must have equal lengths");
}

// Factual prediction: q1 where t = 1, q0 where t = 0.
inline nn::Var factual_prediction(const DragonForward& outputs, const Eigen::VectorXd& t) {
    using namespace nn;
    Var t_v = constant(t);
    Var one_minus_t = constant((1.0 - t.array()).matrix());
    return add(hadamard(t_v, outputs.q1), hadamard(one_minus_t, outputs.q0));
}

}  // namespace detail

// Mean BCE of the factual head against the observed outcome. The
// counterfactual head does not enter (and receives no gradient).
inline nn::Var factual_outcome_loss(const DragonForward& outputs, const Eigen::VectorXd& t,
                                    const Eigen::VectorXd& y) {
    causalforge::detail::check_lengths(outputs, t, y);
    return nn::bce_mean(y, detail::factual_prediction(outputs, t));
}

// Mean BCE of the propensity head against the realized treatment.
inline nn::Var propensity_loss(const nn::Var& g, const Eigen::VectorXd& t) {
    if (g->value.rows() != t.size()) throw ShapeError("propensity_loss: length mismatch");
    return nn::bce_mean(t, g);
}

// Targeted-regularization term for binary outcomes: the factual prediction
// is fluctuated by epsilon along (t/g - (1-t)/(1-g)), clipped into
// [delta, 1-delta], and penalized with BCE against y instead of squared
// error. Differentiable in model parameters and epsilon wherever the clip
// is inactive.
inline nn::Var treg_term(const DragonForward& outputs, const Eigen::VectorXd& t,
                         const Eigen::VectorXd& y, const nn::Var& epsilon, double clip_delta) {
    using namespace nn;
    causalforge::detail::check_lengths(outputs, t, y);
    if ((outputs.g->value.array() <= 0.0).any() || (outputs.g->value.array() >= 1.0).any())
        throw DomainError("treg_term: propensities must lie strictly in (0,1)");
    Var q_fact = causalforge::detail::factual_prediction(outputs, t);
    Var t_v = constant(t);
    Var one_minus_t = constant((1.0 - t.array()).matrix());
    // h = t/g - (1-t)/(1-g)
    Var h = sub(cdiv(t_v, outputs.g), cdiv(one_minus_t, affine(outputs.g, -1.0, 1.0)));
    Var q_tilde = clip(add(q_fact, scale_by(epsilon, h)), clip_delta, 1.0 - clip_delta);
    return bce_mean(y, q_tilde);
}

// factual + alpha * propensity (+ beta * treg when enabled).
inline nn::Var total_loss(const DragonForward& outputs, const Eigen::VectorXd& t,
                          const Eigen::VectorXd& y, const LossConfig& config,
                          const nn::Var& epsilon) {
    using namespace nn;
    config.validate();
    Var loss = add(factual_outcome_loss(outputs, t, y),
                   scale(propensity_loss(outputs.g, t), config.alpha));
    if (config.treg_enabled)
        loss = add(loss, scale(treg_term(outputs, t, y, epsilon, config.clip_delta), config.beta));
    return loss;
}

}  // namespace causalforge
