#include <doctest.h>

#include "causalforge/nn/autodiff.hpp"
#include "causalforge/nn/optim.hpp"
#include "test_support.hpp"

using namespace causalforge;
using namespace causalforge::nn;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

}  // namespace

TEST_CASE("rng streams are deterministic and independent of draw order") {
    Rng a = record_rng(7, 123, Stream::kTreatment);
    Rng b = record_rng(7, 123, Stream::kTreatment);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    // different streams of the same record do not collide
    Rng c = record_rng(7, 123, Stream::kOutcome0);
    Rng d = record_rng(7, 123, Stream::kOutcome1);
    CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("seeded_permutation is a permutation and seed-stable") {
    auto p1 = seeded_permutation(40, 5);
    auto p2 = seeded_permutation(40, 5);
    CHECK(p1 == p2);
    std::vector<bool> seen(40, false);
    for (auto i : p1) {
        CHECK(!seen[i]);
        seen[i] = true;
    }
}

TEST_CASE("dense chain gradients match finite differences") {
    Rng rng(1);
    ParamStore params;
    Var w1 = params.add("w1", random_mat(6, 5, rng));
    Var b1 = params.add("b1", random_mat(1, 5, rng));
    Var w2 = params.add("w2", random_mat(5, 3, rng));
    Mat x = random_mat(4, 6, rng);
    Mat y = random_mat(4, 3, rng, 0.05, 0.95);

    auto loss_fn = [&] {
        Var h = relu(add_rowvec(matmul(constant(x), w1), b1));
        Var p = clip(sigmoid(matmul(h, w2)), 1e-7, 1.0 - 1e-7);
        return bce_mean(y, p);
    };
    auto res = cf_test::check_gradients(params, loss_fn);
    CHECK(res.checked == 6 * 5 + 5 + 5 * 3);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("log_softmax, hadamard and mean gradients") {
    Rng rng(2);
    ParamStore params;
    Var w = params.add("w", random_mat(7, 10, rng));
    Mat x = random_mat(3, 7, rng);
    Mat onehot = Mat::Zero(3, 10);
    onehot(0, 2) = onehot(1, 9) = onehot(2, 0) = 1.0;

    auto loss_fn = [&] {
        Var ls = log_softmax_rows(matmul(constant(x), w));
        return scale(mean_all(hadamard(constant(onehot), ls)), -10.0);
    };
    auto res = cf_test::check_gradients(params, loss_fn);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("cdiv / affine / scale_by gradients (treg building blocks)") {
    Rng rng(3);
    ParamStore params;
    Var g_raw = params.add("g_raw", random_mat(6, 1, rng));
    Var eps = params.add("eps", Mat::Constant(1, 1, 0.05));
    Mat t(6, 1);
    for (int i = 0; i < 6; ++i) t(i, 0) = i % 2;
    Mat y(6, 1);
    for (int i = 0; i < 6; ++i) y(i, 0) = (i / 2) % 2;

    auto loss_fn = [&] {
        Var g = clip(sigmoid(g_raw), 0.05, 0.95);
        Var tv = constant(t);
        Var h = sub(cdiv(tv, g), cdiv(constant((1.0 - t.array()).matrix()), affine(g, -1.0, 1.0)));
        Var q = clip(add(constant(Mat::Constant(6, 1, 0.6)), scale_by(eps, h)), 1e-3, 1.0 - 1e-3);
        return bce_mean(y, q);
    };
    auto res = cf_test::check_gradients(params, loss_fn);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(4);
    ConvShape s{2, 6, 6, 3, 3, 2, 1};
    ParamStore params;
    Var w = params.add("w", random_mat(3, s.patch_size(), rng));
    Var b = params.add("b", random_mat(1, 3, rng));
    Var x = params.add("x", random_mat(2, 2 * 6 * 6, rng));
    Mat target = random_mat(2, 3 * s.out_h() * s.out_w(), rng);

    auto loss_fn = [&] {
        Var out = conv2d(x, w, b, s);
        Var diff = sub(out, constant(target));
        return mean_all(hadamard(diff, diff));
    };
    auto res = cf_test::check_gradients(params, loss_fn);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("global_avg_pool and patchify gradients") {
    Rng rng(5);
    ParamStore params;
    Var x = params.add("x", random_mat(3, 2 * 16, rng));
    auto pool_loss = [&] {
        Var diff = sub(global_avg_pool(x, 2, 16), constant(Mat::Ones(3, 2)));
        return mean_all(hadamard(diff, diff));
    };
    CHECK(cf_test::check_gradients(params, pool_loss).max_rel_err < 1e-5);

    ParamStore params2;
    Var img = params2.add("img", random_mat(2, 28 * 28, rng));
    Mat target = random_mat(2 * 16, 49, rng);
    auto patch_loss = [&] {
        Var diff = sub(patchify(img, 28, 28, 7), constant(target));
        return mean_all(hadamard(diff, diff));
    };
    CHECK(cf_test::check_gradients(params2, patch_loss).max_rel_err < 1e-5);
}

TEST_CASE("layer_norm gradients match finite differences") {
    Rng rng(6);
    ParamStore params;
    Var x = params.add("x", random_mat(4, 8, rng));
    Var gamma = params.add("gamma", random_mat(1, 8, rng, 0.5, 1.5));
    Var beta = params.add("beta", random_mat(1, 8, rng, -0.2, 0.2));
    Mat target = random_mat(4, 8, rng);
    auto loss_fn = [&] {
        Var diff = sub(layer_norm(x, gamma, beta), constant(target));
        return mean_all(hadamard(diff, diff));
    };
    CHECK(cf_test::check_gradients(params, loss_fn).max_rel_err < 1e-4);
}

TEST_CASE("multi_head_attention gradients match finite differences") {
    Rng rng(7);
    const int T = 4, E = 6, heads = 2, B = 2;
    ParamStore params;
    Var x = params.add("x", random_mat(B * T, E, rng));
    Var wq = params.add("wq", random_mat(E, E, rng));
    Var bq = params.add("bq", random_mat(1, E, rng, -0.1, 0.1));
    Var wk = params.add("wk", random_mat(E, E, rng));
    Var bk = params.add("bk", random_mat(1, E, rng, -0.1, 0.1));
    Var wv = params.add("wv", random_mat(E, E, rng));
    Var bv = params.add("bv", random_mat(1, E, rng, -0.1, 0.1));
    Var wo = params.add("wo", random_mat(E, E, rng));
    Var bo = params.add("bo", random_mat(1, E, rng, -0.1, 0.1));
    Mat target = random_mat(B * T, E, rng);
    auto loss_fn = [&] {
        Var out = multi_head_attention(x, T, heads, wq, bq, wk, bk, wv, bv, wo, bo);
        Var diff = sub(out, constant(target));
        return mean_all(hadamard(diff, diff));
    };
    CHECK(cf_test::check_gradients(params, loss_fn).max_rel_err < 1e-4);
}

TEST_CASE("tokens_mean and add_tokenwise gradients") {
    Rng rng(8);
    ParamStore params;
    Var x = params.add("x", random_mat(6, 5, rng));  // B=2, T=3
    Var table = params.add("table", random_mat(3, 5, rng));
    Mat target = random_mat(2, 5, rng);
    auto loss_fn = [&] {
        Var diff = sub(tokens_mean(add_tokenwise(x, table), 3), constant(target));
        return mean_all(hadamard(diff, diff));
    };
    CHECK(cf_test::check_gradients(params, loss_fn).max_rel_err < 1e-5);
}

TEST_CASE("clip blocks gradient outside the interval") {
    ParamStore params;
    Var x = params.add("x", Mat::Constant(1, 1, 2.0));
    Var loss = mean_all(clip(x, 0.0, 1.0));
    params.zero_grads();
    backward(loss);
    CHECK(x->grad(0, 0) == 0.0);
}

TEST_CASE("dropout: rate 0 is identity, masks are reproducible per stream") {
    Rng rng(9);
    Var x = constant(random_mat(10, 10, rng));
    Rng n1(42), n2(42);
    Var a = dropout(x, 0.5, n1);
    Var b = dropout(x, 0.5, n2);
    CHECK(cf_test::bit_equal(a->value, b->value));
    Rng n3(43);
    Var c = dropout(x, 0.0, n3);
    CHECK(cf_test::bit_equal(c->value, x->value));
}

TEST_CASE("adam drives a quadratic toward its minimum deterministically") {
    auto run = [] {
        ParamStore params;
        Var x = params.add("x", Mat::Constant(1, 1, 3.0));
        Adam opt(0.1);
        for (int i = 0; i < 200; ++i) {
            Var loss = mean_all(hadamard(x, x));
            params.zero_grads();
            backward(loss);
            opt.step(params);
        }
        return x->value(0, 0);
    };
    const double a = run(), b = run();
    CHECK(a == b);
    CHECK(std::abs(a) < 1e-2);
}
