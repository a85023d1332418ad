#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "causalforge/nn/autodiff.hpp"
#include "causalforge/nn/optim.hpp"
#include "causalforge/simulate.hpp"

namespace cf_test {

using causalforge::nn::Mat;
using causalforge::nn::Var;

inline bool bit_equal(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Central finite differences (step h) against the tape's analytic gradient.
// `loss_fn` must rebuild the forward pass from the current parameter values.
inline GradCheckResult check_gradients(causalforge::nn::ParamStore& params,
                                       const std::function<Var()>& loss_fn, double h = 1e-3,
                                       double abs_floor = 1e-8) {
    params.zero_grads();
    Var loss = loss_fn();
    causalforge::nn::backward(loss);

    std::vector<Mat> analytic;
    for (const auto& [name, p] : params.items()) analytic.push_back(p->grad);

    GradCheckResult result;
    std::size_t pi = 0;
    for (const auto& [name, p] : params.items()) {
        for (Eigen::Index i = 0; i < p->value.rows(); ++i)
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                const double orig = p->value(i, j);
                p->value(i, j) = orig + h;
                const double up = loss_fn()->value(0, 0);
                p->value(i, j) = orig - h;
                const double down = loss_fn()->value(0, 0);
                p->value(i, j) = orig;
                const double numeric = (up - down) / (2.0 * h);
                const double exact = analytic[pi](i, j);
                const double denom = std::max({std::abs(numeric), std::abs(exact), abs_floor});
                result.max_rel_err = std::max(result.max_rel_err,
                                              std::abs(numeric - exact) / denom);
                ++result.checked;
            }
        ++pi;
    }
    return result;
}

// Independent enumerate-and-average oracle for the causal metrics; kept
// deliberately naive and separate from the library implementations.
struct EnumerateOracle {
    static double mean_where(const std::vector<causalforge::CausalRecord>& rs,
                             const std::function<bool(const causalforge::CausalRecord&)>& pred,
                             const std::function<double(const causalforge::CausalRecord&)>& val) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : rs)
            if (pred(r)) {
                sum += val(r);
                ++n;
            }
        return sum / n;
    }
    static double ate(const std::vector<causalforge::CausalRecord>& rs) {
        return mean_where(rs, [](auto&) { return true; }, [](auto& r) { return double(r.y1 - r.y0); });
    }
    static double att(const std::vector<causalforge::CausalRecord>& rs) {
        return mean_where(rs, [](auto& r) { return r.t == 1; },
                          [](auto& r) { return double(r.y1); }) -
               mean_where(rs, [](auto& r) { return r.t == 1; },
                          [](auto& r) { return double(r.y0); });
    }
    static double bias(const std::vector<causalforge::CausalRecord>& rs) {
        return mean_where(rs, [](auto& r) { return r.t == 1; },
                          [](auto& r) { return double(r.y0); }) -
               mean_where(rs, [](auto& r) { return r.t == 0; },
                          [](auto& r) { return double(r.y0); });
    }
    static double association(const std::vector<causalforge::CausalRecord>& rs) {
        return mean_where(rs, [](auto& r) { return r.t == 1; },
                          [](auto& r) { return double(r.y); }) -
               mean_where(rs, [](auto& r) { return r.t == 0; },
                          [](auto& r) { return double(r.y); });
    }
};

inline causalforge::CausalRecord make_record(std::size_t index, int t, int y0, int y1,
                                             double p0 = 0.5, double p1 = 0.5, int label = 0) {
    causalforge::CausalRecord r;
    r.index = index;
    r.label = label;
    r.t = t;
    r.y0 = y0;
    r.y1 = y1;
    r.p0 = p0;
    r.p1 = p1;
    r.y = t == 1 ? y1 : y0;
    return r;
}

// The 4-record fixture used throughout: {(t,y0,y1)} =
// {(1,0,1),(0,1,0),(1,1,1),(0,0,0)}.
inline std::vector<causalforge::CausalRecord> fixture_records() {
    return {make_record(0, 1, 0, 1), make_record(1, 0, 1, 0), make_record(2, 1, 1, 1),
            make_record(3, 0, 0, 0)};
}

}  // namespace cf_test
