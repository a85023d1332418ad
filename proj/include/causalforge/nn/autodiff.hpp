#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "causalforge/errors.hpp"
#include "causalforge/rng.hpp"

namespace causalforge::nn {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff on a dynamic tape of matrix-valued nodes. Each
// forward pass builds a fresh expression graph over persistent parameter
// leaves; backward() walks the graph once in reverse topological order.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    Node(Mat v, bool rg) : value(std::move(v)), requires_grad(rg) {}

    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = Mat::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad = Mat::Zero(value.rows(), value.cols()); }
};

inline Var constant(Mat v) { return std::make_shared<Node>(std::move(v), false); }
inline Var parameter(Mat v) {
    auto p = std::make_shared<Node>(std::move(v), true);
    p->zero_grad();
    return p;
}
inline Var scalar_constant(double v) { return constant(Mat::Constant(1, 1, v)); }

namespace detail {

inline Var make_op(Mat value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    auto n = std::make_shared<Node>(std::move(value), rg);
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

inline void topo_visit(const Var& v, std::unordered_set<Node*>& seen, std::vector<Var>& order) {
    // Iterative DFS; graphs from deep models overflow the stack otherwise.
    struct Frame {
        Var node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (seen.count(v.get())) return;
    stack.push_back({v, 0});
    seen.insert(v.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Var p = f.node->parents[f.next_parent++];
            if (p->requires_grad && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.push_back({std::move(p), 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
// node with requires_grad. The loss must be 1x1.
inline void backward(const Var& loss) {
    if (loss->value.size() != 1) throw ShapeError("backward() expects a scalar loss");
    std::unordered_set<Node*> seen;
    std::vector<Var> order;
    detail::topo_visit(loss, seen, order);
    for (const auto& n : order) n->ensure_grad();
    loss->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (n.backprop) n.backprop(n);
    }
}

// ---- primitive ops ----

inline Var matmul(const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows()) throw ShapeError("matmul: inner dimensions differ");
    return detail::make_op(a->value * b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->ensure_grad(), a->grad.noalias() += n.grad * b->value.transpose();
        if (b->requires_grad) b->ensure_grad(), b->grad.noalias() += a->value.transpose() * n.grad;
    });
}

inline Var add(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw ShapeError("add: shape mismatch");
    return detail::make_op(a->value + b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->ensure_grad(), a->grad += n.grad;
        if (b->requires_grad) b->ensure_grad(), b->grad += n.grad;
    });
}

inline Var sub(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw ShapeError("sub: shape mismatch");
    return detail::make_op(a->value - b->value, {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->ensure_grad(), a->grad += n.grad;
        if (b->requires_grad) b->ensure_grad(), b->grad -= n.grad;
    });
}

// Broadcasts a 1xC row vector over every row of a.
inline Var add_rowvec(const Var& a, const Var& bias) {
    if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols())
        throw ShapeError("add_rowvec: bias must be 1 x cols(a)");
    Mat out = a->value.rowwise() + bias->value.row(0);
    return detail::make_op(std::move(out), {a, bias}, [a, bias](Node& n) {
        if (a->requires_grad) a->ensure_grad(), a->grad += n.grad;
        if (bias->requires_grad) bias->ensure_grad(), bias->grad.row(0) += n.grad.colwise().sum();
    });
}

inline Var hadamard(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw ShapeError("hadamard: shape mismatch");
    return detail::make_op(a->value.cwiseProduct(b->value), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->ensure_grad(), a->grad += n.grad.cwiseProduct(b->value);
        if (b->requires_grad) b->ensure_grad(), b->grad += n.grad.cwiseProduct(a->value);
    });
}

// Elementwise a / b.
inline Var cdiv(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw ShapeError("cdiv: shape mismatch");
    return detail::make_op(a->value.cwiseQuotient(b->value), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->ensure_grad(), a->grad += n.grad.cwiseQuotient(b->value);
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad -= n.grad.cwiseProduct(a->value)
                           .cwiseQuotient(b->value.cwiseProduct(b->value));
        }
    });
}

// k*a + c elementwise.
inline Var affine(const Var& a, double k, double c) {
    Mat out = (a->value.array() * k + c).matrix();
    return detail::make_op(std::move(out), {a}, [a, k](Node& n) {
        if (a->requires_grad) a->ensure_grad(), a->grad += k * n.grad;
    });
}

// Broadcast-multiply by a trainable 1x1 scalar.
inline Var scale_by(const Var& s, const Var& a) {
    if (s->value.size() != 1) throw ShapeError("scale_by: scale must be 1x1");
    const double sv = s->value(0, 0);
    return detail::make_op(sv * a->value, {s, a}, [s, a, sv](Node& n) {
        if (s->requires_grad)
            s->ensure_grad(), s->grad(0, 0) += n.grad.cwiseProduct(a->value).sum();
        if (a->requires_grad) a->ensure_grad(), a->grad += sv * n.grad;
    });
}

inline Var relu(const Var& a) {
    Mat out = a->value.cwiseMax(0.0);
    return detail::make_op(std::move(out), {a}, [a](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad += n.grad.cwiseProduct((a->value.array() > 0.0).cast<double>().matrix());
    });
}

inline Var sigmoid(const Var& a) {
    Mat out = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
    return detail::make_op(out, {a}, [a, out](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad += n.grad.cwiseProduct((out.array() * (1.0 - out.array())).matrix());
    });
}

// Clamp into [lo, hi]; gradient passes through only where the clamp is
// inactive (strictly inside the interval).
inline Var clip(const Var& a, double lo, double hi) {
    Mat out = a->value.cwiseMax(lo).cwiseMin(hi);
    return detail::make_op(std::move(out), {a}, [a, lo, hi](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        Mat inside = ((a->value.array() > lo) && (a->value.array() < hi)).cast<double>().matrix();
        a->grad += n.grad.cwiseProduct(inside);
    });
}

// Row-wise log-softmax (numerically shifted by the row max).
inline Var log_softmax_rows(const Var& a) {
    Mat shifted = a->value.colwise() - a->value.rowwise().maxCoeff();
    Mat lse = shifted.array().exp().rowwise().sum().log().matrix();
    Mat out = shifted.colwise() - lse.col(0);
    return detail::make_op(out, {a}, [a, out](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        Eigen::VectorXd rowsum = n.grad.rowwise().sum();
        a->grad += n.grad - (out.array().exp().colwise() * rowsum.array()).matrix();
    });
}

// Mean of all elements -> 1x1.
inline Var mean_all(const Var& a) {
    const double n_elems = static_cast<double>(a->value.size());
    Mat out = Mat::Constant(1, 1, a->value.sum() / n_elems);
    return detail::make_op(std::move(out), {a}, [a, n_elems](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad.array() += n.grad(0, 0) / n_elems;
    });
}

inline Var scale(const Var& a, double k) { return affine(a, k, 0.0); }

// Inverted-dropout; masks drawn from the caller's stream so scoring noise is
// reproducible. rate == 0 is the identity.
inline Var dropout(const Var& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
    if (rate == 0.0) return a;
    Mat mask(a->value.rows(), a->value.cols());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            mask(i, j) = rng.uniform() < rate ? 0.0 : keep_scale;
    return detail::make_op(a->value.cwiseProduct(mask), {a}, [a, mask](Node& n) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad += n.grad.cwiseProduct(mask);
    });
}

// Mean binary cross-entropy of predictions p (strictly inside (0,1))
// against constant targets y.
inline Var bce_mean(const Mat& y, const Var& p) {
    if (y.rows() != p->value.rows() || y.cols() != p->value.cols())
        throw ShapeError("bce_mean: shape mismatch");
    if ((p->value.array() <= 0.0).any() || (p->value.array() >= 1.0).any())
        throw DomainError("bce_mean: predictions must lie strictly in (0,1)");
    const double n_elems = static_cast<double>(y.size());
    const double loss = -(y.array() * p->value.array().log() +
                          (1.0 - y.array()) * (1.0 - p->value.array()).log())
                             .sum() /
                        n_elems;
    return detail::make_op(Mat::Constant(1, 1, loss), {p}, [y, p, n_elems](Node& n) {
        if (!p->requires_grad) return;
        p->ensure_grad();
        p->grad += (n.grad(0, 0) / n_elems) *
                   ((p->value.array() - y.array()) /
                    (p->value.array() * (1.0 - p->value.array())))
                       .matrix();
    });
}

// ---- image-layout ops (rows are samples, channel-major flattening) ----

struct ConvShape {
    int in_channels, in_h, in_w;
    int out_channels, kernel, stride, pad;

    int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    int patch_size() const { return in_channels * kernel * kernel; }
};

namespace detail {

inline void im2col(const Eigen::Ref<const Eigen::RowVectorXd>& x, const ConvShape& s, Mat& cols) {
    const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
    cols.setZero();
    for (int c = 0; c < s.in_channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const int prow = (c * k + ki) * k + kj;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * s.stride + ki - s.pad;
                    if (ii < 0 || ii >= s.in_h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * s.stride + kj - s.pad;
                        if (jj < 0 || jj >= s.in_w) continue;
                        cols(prow, oi * ow + oj) = x((c * s.in_h + ii) * s.in_w + jj);
                    }
                }
            }
}

template <typename RowXpr>
inline void col2im_add(const Mat& gcols, const ConvShape& s, RowXpr gx) {
    const int oh = s.out_h(), ow = s.out_w(), k = s.kernel;
    for (int c = 0; c < s.in_channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const int prow = (c * k + ki) * k + kj;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * s.stride + ki - s.pad;
                    if (ii < 0 || ii >= s.in_h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * s.stride + kj - s.pad;
                        if (jj < 0 || jj >= s.in_w) continue;
                        gx((c * s.in_h + ii) * s.in_w + jj) += gcols(prow, oi * ow + oj);
                    }
                }
            }
}

}  // namespace detail

// 2-D convolution over batched flat images. x: (B x C_in*H*W),
// w: (C_out x C_in*k*k), b: (1 x C_out), output (B x C_out*H'*W').
inline Var conv2d(const Var& x, const Var& w, const Var& b, const ConvShape& s) {
    if (x->value.cols() != s.in_channels * s.in_h * s.in_w)
        throw ShapeError("conv2d: input width does not match shape");
    if (w->value.rows() != s.out_channels || w->value.cols() != s.patch_size())
        throw ShapeError("conv2d: weight shape mismatch");
    const int B = static_cast<int>(x->value.rows());
    const int oh = s.out_h(), ow = s.out_w(), ohw = oh * ow;
    Mat out(B, s.out_channels * ohw);
    Mat cols(s.patch_size(), ohw);
    for (int bi = 0; bi < B; ++bi) {
        detail::im2col(x->value.row(bi), s, cols);
        Mat y = w->value * cols;  // (C_out x oh*ow)
        y.colwise() += b->value.row(0).transpose();
        for (int c = 0; c < s.out_channels; ++c)
            for (int p = 0; p < ohw; ++p) out(bi, c * ohw + p) = y(c, p);
    }
    return detail::make_op(std::move(out), {x, w, b}, [x, w, b, s, B, ohw](Node& n) {
        Mat cols(s.patch_size(), ohw);
        Mat gy(s.out_channels, ohw);
        for (int bi = 0; bi < B; ++bi) {
            for (int c = 0; c < s.out_channels; ++c)
                for (int p = 0; p < ohw; ++p) gy(c, p) = n.grad(bi, c * ohw + p);
            if (w->requires_grad || b->requires_grad) {
                detail::im2col(x->value.row(bi), s, cols);
                if (w->requires_grad) w->ensure_grad(), w->grad.noalias() += gy * cols.transpose();
                if (b->requires_grad)
                    b->ensure_grad(), b->grad.row(0) += gy.rowwise().sum().transpose();
            }
            if (x->requires_grad) {
                x->ensure_grad();
                Mat gcols = w->value.transpose() * gy;
                detail::col2im_add(gcols, s, x->grad.row(bi));
            }
        }
    });
}

// Per-channel spatial average: (B x C*H*W) -> (B x C).
inline Var global_avg_pool(const Var& x, int channels, int hw) {
    if (x->value.cols() != static_cast<Eigen::Index>(channels) * hw)
        throw ShapeError("global_avg_pool: width mismatch");
    const int B = static_cast<int>(x->value.rows());
    Mat out(B, channels);
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < channels; ++c) out(bi, c) = x->value.row(bi).segment(c * hw, hw).mean();
    return detail::make_op(std::move(out), {x}, [x, channels, hw, B](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < channels; ++c)
                x->grad.row(bi).segment(c * hw, hw).array() += n.grad(bi, c) / hw;
    });
}

// Cuts each flat HxW image into non-overlapping p x p patches:
// (B x H*W) -> (B*T x p*p), T = (H/p)*(W/p), patches in row-major order.
inline Var patchify(const Var& x, int h, int w, int p) {
    if (h % p != 0 || w % p != 0) throw ConfigError("patchify: patch size must divide image size");
    if (x->value.cols() != static_cast<Eigen::Index>(h) * w)
        throw ShapeError("patchify: width mismatch");
    const int B = static_cast<int>(x->value.rows());
    const int gh = h / p, gw = w / p, T = gh * gw;
    Mat out(static_cast<Eigen::Index>(B) * T, p * p);
    for (int bi = 0; bi < B; ++bi)
        for (int ti = 0; ti < gh; ++ti)
            for (int tj = 0; tj < gw; ++tj) {
                const int trow = bi * T + ti * gw + tj;
                for (int pi = 0; pi < p; ++pi)
                    for (int pj = 0; pj < p; ++pj)
                        out(trow, pi * p + pj) = x->value(bi, (ti * p + pi) * w + tj * p + pj);
            }
    return detail::make_op(std::move(out), {x}, [x, h, w, p, B](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int gh = h / p, gw = w / p, T = gh * gw;
        for (int bi = 0; bi < B; ++bi)
            for (int ti = 0; ti < gh; ++ti)
                for (int tj = 0; tj < gw; ++tj) {
                    const int trow = bi * T + ti * gw + tj;
                    for (int pi = 0; pi < p; ++pi)
                        for (int pj = 0; pj < p; ++pj)
                            x->grad(bi, (ti * p + pi) * w + tj * p + pj) += n.grad(trow, pi * p + pj);
                }
    });
}

// Adds a (T x E) table to each sample's token block of a (B*T x E) matrix.
inline Var add_tokenwise(const Var& x, const Var& table) {
    const Eigen::Index T = table->value.rows();
    if (x->value.rows() % T != 0 || x->value.cols() != table->value.cols())
        throw ShapeError("add_tokenwise: shape mismatch");
    const Eigen::Index B = x->value.rows() / T;
    Mat out = x->value;
    for (Eigen::Index bi = 0; bi < B; ++bi) out.middleRows(bi * T, T) += table->value;
    return detail::make_op(std::move(out), {x, table}, [x, table, B, T](Node& n) {
        if (x->requires_grad) x->ensure_grad(), x->grad += n.grad;
        if (table->requires_grad) {
            table->ensure_grad();
            for (Eigen::Index bi = 0; bi < B; ++bi) table->grad += n.grad.middleRows(bi * T, T);
        }
    });
}

// Mean over each sample's tokens: (B*T x E) -> (B x E).
inline Var tokens_mean(const Var& x, int tokens) {
    if (x->value.rows() % tokens != 0) throw ShapeError("tokens_mean: row count mismatch");
    const Eigen::Index B = x->value.rows() / tokens;
    Mat out(B, x->value.cols());
    for (Eigen::Index bi = 0; bi < B; ++bi)
        out.row(bi) = x->value.middleRows(bi * tokens, tokens).colwise().mean();
    return detail::make_op(std::move(out), {x}, [x, tokens, B](Node& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (Eigen::Index bi = 0; bi < B; ++bi)
            x->grad.middleRows(bi * tokens, tokens).rowwise() += n.grad.row(bi) / tokens;
    });
}

// Row-wise layer normalization with learned gain/shift (both 1 x E).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const Eigen::Index E = x->value.cols();
    if (gamma->value.cols() != E || beta->value.cols() != E)
        throw ShapeError("layer_norm: parameter width mismatch");
    Mat xhat(x->value.rows(), E);
    Eigen::VectorXd inv_std(x->value.rows());
    for (Eigen::Index i = 0; i < x->value.rows(); ++i) {
        const double mu = x->value.row(i).mean();
        const double var = (x->value.row(i).array() - mu).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (x->value.row(i).array() - mu) * inv_std(i);
    }
    Mat out = (xhat.array().rowwise() * gamma->value.row(0).array()).rowwise() +
              beta->value.row(0).array();
    return detail::make_op(out.matrix(), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Node& n) {
        const Eigen::Index E = x->value.cols();
        if (gamma->requires_grad)
            gamma->ensure_grad(),
                gamma->grad.row(0) += n.grad.cwiseProduct(xhat).colwise().sum();
        if (beta->requires_grad) beta->ensure_grad(), beta->grad.row(0) += n.grad.colwise().sum();
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (Eigen::Index i = 0; i < x->value.rows(); ++i) {
            Eigen::RowVectorXd gy = n.grad.row(i).cwiseProduct(gamma->value.row(0));
            const double m1 = gy.mean();
            const double m2 = gy.cwiseProduct(xhat.row(i)).mean();
            x->grad.row(i) +=
                inv_std(i) * (gy.array() - m1 - xhat.row(i).array() * m2).matrix();
        }
        (void)E;
    });
}

// Multi-head self-attention over (B*T x E) token rows. Projection weights
// are E x E, biases 1 x E. Scores are scaled by 1/sqrt(head_dim).
inline Var multi_head_attention(const Var& x, int tokens, int heads, const Var& wq, const Var& bq,
                                const Var& wk, const Var& bk, const Var& wv, const Var& bv,
                                const Var& wo, const Var& bo) {
    const Eigen::Index E = x->value.cols();
    if (E % heads != 0) throw ConfigError("attention: embed width must be divisible by heads");
    if (x->value.rows() % tokens != 0) throw ShapeError("attention: row count mismatch");
    const Eigen::Index B = x->value.rows() / tokens;
    const Eigen::Index Dh = E / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));

    Mat Q = (x->value * wq->value).rowwise() + bq->value.row(0);
    Mat K = (x->value * wk->value).rowwise() + bk->value.row(0);
    Mat V = (x->value * wv->value).rowwise() + bv->value.row(0);

    // attn[b*heads + h] is the T x T softmax matrix for that sample/head.
    std::vector<Mat> attn(static_cast<std::size_t>(B) * heads);
    Mat concat(x->value.rows(), E);
    for (Eigen::Index bi = 0; bi < B; ++bi) {
        for (int h = 0; h < heads; ++h) {
            auto Qh = Q.block(bi * tokens, h * Dh, tokens, Dh);
            auto Kh = K.block(bi * tokens, h * Dh, tokens, Dh);
            auto Vh = V.block(bi * tokens, h * Dh, tokens, Dh);
            Mat S = scale * (Qh * Kh.transpose());
            Mat A(tokens, tokens);
            for (int r = 0; r < tokens; ++r) {
                Eigen::RowVectorXd e = (S.row(r).array() - S.row(r).maxCoeff()).exp();
                A.row(r) = e / e.sum();
            }
            attn[static_cast<std::size_t>(bi) * heads + h] = A;
            concat.block(bi * tokens, h * Dh, tokens, Dh) = A * Vh;
        }
    }
    Mat out = (concat * wo->value).rowwise() + bo->value.row(0);

    return detail::make_op(
        std::move(out), {x, wq, bq, wk, bk, wv, bv, wo, bo},
        [x, wq, bq, wk, bk, wv, bv, wo, bo, tokens, heads, B, Dh, scale, Q, K, V, attn,
         concat](Node& n) {
            const Eigen::Index E = x->value.cols();
            // output projection
            Mat g_concat = n.grad * wo->value.transpose();
            if (wo->requires_grad)
                wo->ensure_grad(), wo->grad.noalias() += concat.transpose() * n.grad;
            if (bo->requires_grad) bo->ensure_grad(), bo->grad.row(0) += n.grad.colwise().sum();

            Mat gQ = Mat::Zero(Q.rows(), Q.cols());
            Mat gK = Mat::Zero(K.rows(), K.cols());
            Mat gV = Mat::Zero(V.rows(), V.cols());
            for (Eigen::Index bi = 0; bi < B; ++bi) {
                for (int h = 0; h < heads; ++h) {
                    const Mat& A = attn[static_cast<std::size_t>(bi) * heads + h];
                    auto Qh = Q.block(bi * tokens, h * Dh, tokens, Dh);
                    auto Kh = K.block(bi * tokens, h * Dh, tokens, Dh);
                    auto Vh = V.block(bi * tokens, h * Dh, tokens, Dh);
                    Mat gO = g_concat.block(bi * tokens, h * Dh, tokens, Dh);
                    gV.block(bi * tokens, h * Dh, tokens, Dh).noalias() += A.transpose() * gO;
                    Mat gA = gO * Vh.transpose();
                    // softmax rows backward
                    Mat gS(tokens, tokens);
                    for (int r = 0; r < tokens; ++r) {
                        const double dot = gA.row(r).dot(A.row(r));
                        gS.row(r) = A.row(r).cwiseProduct(gA.row(r).array().matrix() -
                                                          Eigen::RowVectorXd::Constant(tokens, dot));
                    }
                    gS *= scale;
                    gQ.block(bi * tokens, h * Dh, tokens, Dh).noalias() += gS * Kh;
                    gK.block(bi * tokens, h * Dh, tokens, Dh).noalias() += gS.transpose() * Qh;
                }
            }
            auto back_proj = [&](const Mat& g_lin, const Var& w, const Var& b) {
                if (w->requires_grad)
                    w->ensure_grad(), w->grad.noalias() += x->value.transpose() * g_lin;
                if (b->requires_grad) b->ensure_grad(), b->grad.row(0) += g_lin.colwise().sum();
                if (x->requires_grad)
                    x->ensure_grad(), x->grad.noalias() += g_lin * w->value.transpose();
            };
            back_proj(gQ, wq, bq);
            back_proj(gK, wk, bk);
            back_proj(gV, wv, bv);
            (void)E;
        });
}

}  // namespace causalforge::nn
