#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_support.hpp"
#include "causalforge/metrics.hpp"
#include "causalforge/synthetic.hpp"
#include "causalforge/train.hpp"

using namespace causalforge;

namespace {

std::vector<CausalRecord> random_records(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CausalRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const int t = rng.uniform() < 0.5 ? 1 : 0;
        const int y0 = rng.uniform() < 0.5 ? 1 : 0;
        const int y1 = rng.uniform() < 0.5 ? 1 : 0;
        out.push_back(cf_test::make_record(i, t, y0, y1));
    }
    // guarantee both groups are populated
    out.push_back(cf_test::make_record(n, 1, 0, 1));
    out.push_back(cf_test::make_record(n + 1, 0, 1, 0));
    return out;
}

void to_columns(const std::vector<CausalRecord>& rs, Eigen::VectorXd& y, Eigen::VectorXd& y0,
                Eigen::VectorXd& y1, Eigen::VectorXd& t) {
    const Eigen::Index n = static_cast<Eigen::Index>(rs.size());
    y.resize(n);
    y0.resize(n);
    y1.resize(n);
    t.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i) = rs[i].y;
        y0(i) = rs[i].y0;
        y1(i) = rs[i].y1;
        t(i) = rs[i].t;
    }
}

}  // namespace

TEST_CASE("ate_ae is the absolute error and is symmetric") {
    CHECK(ate_ae(0.3, 0.25) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(ate_ae(0.25, 0.3) == ate_ae(0.3, 0.25));
    CHECK(ate_ae(-0.1, 0.1) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(ate_ae(0.4, 0.4) == 0.0);
}

TEST_CASE("fixture metrics: ate 0, att 0.5, bias 0, association 0.5") {
    auto rs = cf_test::fixture_records();
    Eigen::VectorXd y, y0, y1, t;
    to_columns(rs, y, y0, y1, t);
    CHECK(association(y, t) == 0.5);
    CHECK(att(y0, y1, t) == 0.5);
    CHECK(pretreatment_bias(y0, t) == 0.0);
    CHECK(decomposition_check(rs) == 0.0);
    CHECK(true_estimands(rs).ate_true == 0.0);
}

TEST_CASE("metric ops agree exactly with the enumerate oracle on small random sets") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        auto rs = random_records(6, seed);
        Eigen::VectorXd y, y0, y1, t;
        to_columns(rs, y, y0, y1, t);
        CHECK(association(y, t) == cf_test::EnumerateOracle::association(rs));
        CHECK(att(y0, y1, t) == cf_test::EnumerateOracle::att(rs));
        CHECK(pretreatment_bias(y0, t) == cf_test::EnumerateOracle::bias(rs));
        CHECK(std::abs(decomposition_check(rs)) <= 1e-12);
    }
}

TEST_CASE("mutating a factual outcome without updating y breaks the identity") {
    auto rs = cf_test::fixture_records();
    rs[0].y1 = 0;  // record 0 is treated with y = 1; identity now fails
    CHECK(std::abs(decomposition_check(rs)) > 0.1);
}

TEST_CASE("degenerate groups are rejected") {
    Eigen::VectorXd y(2), t_all1(2), t_all0(2);
    y << 1, 0;
    t_all1 << 1, 1;
    t_all0 << 0, 0;
    CHECK_THROWS_AS(association(y, t_all1), DegenerateGroupError);
    CHECK_THROWS_AS(pretreatment_bias(y, t_all0), DegenerateGroupError);
    CHECK_THROWS_AS(att(y, y, t_all0), DegenerateGroupError);
    Eigen::VectorXd short_t(1);
    short_t << 1;
    CHECK_THROWS_AS(association(y, short_t), ShapeError);
}

TEST_CASE("factual_accuracy scores the factual head only") {
    DragonOutputs out;
    out.q0.resize(4);
    out.q1.resize(4);
    out.g = Eigen::VectorXd::Constant(4, 0.5);
    // t: 1 0 1 0 ; y: 1 0 0 1
    Eigen::VectorXd t(4), y(4);
    t << 1, 0, 1, 0;
    y << 1, 0, 0, 1;
    out.q1 << 0.9, 0.0, 0.8, 0.0;  // used for rows 0, 2: right, wrong
    out.q0 << 0.0, 0.1, 0.0, 0.7;  // used for rows 1, 3: right, right
    CHECK(factual_accuracy(out, t, y) == 0.75);

    // flipping the counterfactual head must not change the score
    out.q0(0) = 0.99;
    out.q1(1) = 0.99;
    CHECK(factual_accuracy(out, t, y) == 0.75);

    CHECK_THROWS_AS(factual_accuracy(out, Eigen::VectorXd::Ones(3), y), ShapeError);
    DragonOutputs empty;
    CHECK_THROWS_AS(factual_accuracy(empty, Eigen::VectorXd(), Eigen::VectorXd()),
                    DegenerateGroupError);
}

TEST_CASE("evaluate_model: internal consistency of the report") {
    Corpus corpus = synth_corpus(60, 21);
    std::vector<CausalRecord> records;
    Rng rng(5);
    for (std::size_t i = 0; i < corpus.images.size(); ++i) {
        const int t = rng.uniform() < 0.5 ? 1 : 0;
        const int y0 = rng.uniform() < 0.4 ? 1 : 0;
        const int y1 = rng.uniform() < 0.6 ? 1 : 0;
        records.push_back(cf_test::make_record(i, t, y0, y1, 0.4, 0.6, corpus.images[i].label));
    }

    EncoderSpec spec;
    spec.variant = EncoderVariant::kDense;
    spec.repr_dim = 16;
    spec.dense_widths = {16, 16};
    DragonModel model(spec, {8, 8}, 7);
    LossConfig cfg;
    cfg.treg_enabled = false;

    MetricsReport r = evaluate_model(model, corpus, records, cfg);
    const TrueEstimands truth = true_estimands(records);

    CHECK(r.ate_true == truth.ate_true);
    CHECK(r.att_true == truth.att_true);
    CHECK(r.association == truth.association);
    CHECK(r.pretreatment_bias_true == truth.pretreatment_bias_true);
    CHECK(r.ate_ae == std::abs(r.ate_true - r.ate_est));
    CHECK(std::abs(r.association - r.att_true - r.pretreatment_bias_true) <= 1e-12);
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
    CHECK(r.ate_est >= -1.0);
    CHECK(r.ate_est <= 1.0);
    CHECK(r.treg_enabled == false);
    CHECK(r.encoder_variant == "dense");
    CHECK(r.seed == 7);

    // report survives a JSON round trip
    MetricsReport r2 = metrics_report_from_json(metrics_report_to_json(r));
    CHECK(r2.accuracy == r.accuracy);
    CHECK(r2.ate_ae == r.ate_ae);
    CHECK(r2.ate_est == r.ate_est);
    CHECK(r2.pretreatment_bias_est == r.pretreatment_bias_est);
    CHECK(r2.encoder_variant == r.encoder_variant);
    CHECK(r2.seed == r.seed);

    CHECK_THROWS_AS(evaluate_model(model, corpus, {}, cfg), DegenerateGroupError);

    // a record pointing outside the corpus is an integrity failure
    auto bad = records;
    bad[0].index = 10'000;
    CHECK_THROWS_AS(evaluate_model(model, corpus, bad, cfg), IntegrityError);
}
