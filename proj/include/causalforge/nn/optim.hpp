#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "causalforge/nn/autodiff.hpp"
#include "causalforge/rng.hpp"

namespace causalforge::nn {

// Named parameter registry. Models register parameters at construction time;
// checkpoints and the optimizer iterate the same ordered list.
class ParamStore {
public:
    Var add(const std::string& name, Mat init) {
        Var p = parameter(std::move(init));
        items_.emplace_back(name, p);
        return p;
    }

    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }

    void zero_grads() {
        for (auto& [name, p] : items_) p->zero_grad();
    }

    std::size_t count_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, p] : items_) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

private:
    std::vector<std::pair<std::string, Var>> items_;
};

// Glorot-uniform init from our own Rng (std distributions are not
// reproducible across standard libraries).
inline Mat glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
    return m;
}

// Adam with bias correction.
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params) {
        if (m_.empty()) {
            for (const auto& [name, p] : params.items()) {
                m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
                v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        std::size_t i = 0;
        for (const auto& [name, p] : params.items()) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            p->value -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
            ++i;
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

}  // namespace causalforge::nn
