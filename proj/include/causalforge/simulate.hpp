#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalforge/errors.hpp"
#include "causalforge/idx.hpp"
#include "causalforge/rng.hpp"
#include "causalforge/scorer.hpp"

namespace causalforge {

inline constexpr const char* kGeneratorVersion = "causal-forge-sim/1";

// One simulated unit. Both potential outcomes are retained so the true
// estimands are known; training must only ever see (index, t, y).
struct CausalRecord {
    std::size_t index = 0;
    int label = 0;
    int t = 0;
    int y0 = 0;
    int y1 = 0;
    double p0 = 0.0;  // Bernoulli parameter behind y0
    double p1 = 0.0;
    int y = 0;  // observed outcome: y1 if treated else y0

    bool operator==(const CausalRecord&) const = default;
};

struct TrueEstimands {
    double ate_true = 0.0;              // mean(y1 - y0)
    double ate_analytic = 0.0;          // mean(p1 - p0)
    double att_true = 0.0;              // mean(y1 - y0 | t = 1)
    double pretreatment_bias_true = 0.0;  // mean(y0|t=1) - mean(y0|t=0)
    double association = 0.0;           // mean(y|t=1) - mean(y|t=0)

    bool operator==(const TrueEstimands&) const = default;
};

struct TreatmentProbs {
    double odd = 0.8;
    double even = 0.2;
    bool operator==(const TreatmentProbs&) const = default;
};

struct SimulatedDataset {
    std::vector<CausalRecord> records;
    ScorerConfig scorer0_config;
    ScorerConfig scorer1_config;
    TreatmentProbs treatment_probs;
    std::uint64_t master_seed = 0;
    TrueEstimands estimands;
    std::string generator_version = kGeneratorVersion;
    std::string mnist_checksum;
};

// t = 1 iff u < parity probability (0.8 odd, 0.2 even by default).
inline int assign_treatment(int label, double u, const TreatmentProbs& probs = {}) {
    if (label < 0 || label > 9) throw DomainError("assign_treatment: label must be a digit");
    const double p = (label % 2 == 1) ? probs.odd : probs.even;
    return u < p ? 1 : 0;
}

// y = 1 iff u < p.
inline int sample_outcome(double p, double u) {
    if (!(p > 0.0) || p > 1.0) throw DomainError("sample_outcome: p must lie in (0,1]");
    return u < p ? 1 : 0;
}

// Finite-sample estimands. att is computed as mean(y1|T=1) - mean(y0|T=1)
// so that association = att + pretreatment_bias holds as a floating-point
// identity, not just up to rounding of a different evaluation order.
inline TrueEstimands true_estimands(const std::vector<CausalRecord>& records) {
    double n = 0, n1 = 0, n0 = 0;
    double sum_y1 = 0, sum_y0 = 0, sum_p1 = 0, sum_p0 = 0;
    double sum_y1_treated = 0, sum_y0_treated = 0, sum_y_treated = 0;
    double sum_y0_control = 0, sum_y_control = 0;
    for (const auto& r : records) {
        n += 1;
        sum_y1 += r.y1;
        sum_y0 += r.y0;
        sum_p1 += r.p1;
        sum_p0 += r.p0;
        if (r.t == 1) {
            n1 += 1;
            sum_y1_treated += r.y1;
            sum_y0_treated += r.y0;
            sum_y_treated += r.y;
        } else {
            n0 += 1;
            sum_y0_control += r.y0;
            sum_y_control += r.y;
        }
    }
    if (n1 == 0 || n0 == 0)
        throw DegenerateGroupError("true_estimands: need at least one treated and one control record");
    TrueEstimands e;
    e.ate_true = sum_y1 / n - sum_y0 / n;
    e.ate_analytic = sum_p1 / n - sum_p0 / n;
    const double mean_y1_treated = sum_y1_treated / n1;
    const double mean_y0_treated = sum_y0_treated / n1;
    const double mean_y0_control = sum_y0_control / n0;
    e.att_true = mean_y1_treated - mean_y0_treated;
    e.pretreatment_bias_true = mean_y0_treated - mean_y0_control;
    e.association = sum_y_treated / n1 - sum_y_control / n0;
    return e;
}

// Runs the full generative process over a corpus. Per-record randomness is
// keyed by (master_seed, record index, stream), so the result does not
// depend on processing order.
inline SimulatedDataset simulate_dataset(const Corpus& corpus, const ScorerConfig& scorer0_config,
                                         const ScorerConfig& scorer1_config,
                                         std::uint64_t master_seed,
                                         const TreatmentProbs& probs = {}) {
    if (!scorer_configs_differ(scorer0_config, scorer1_config))
        throw ConfigError("simulate_dataset: the two scorer configs must differ");
    if (corpus.empty()) throw ConfigError("simulate_dataset: corpus is empty");

    const Scorer scorer0 = build_scorer(scorer0_config, corpus);
    const Scorer scorer1 = build_scorer(scorer1_config, corpus);

    SimulatedDataset ds;
    ds.scorer0_config = scorer0_config;
    ds.scorer1_config = scorer1_config;
    ds.treatment_probs = probs;
    ds.master_seed = master_seed;
    ds.mnist_checksum = corpus.source_checksum;
    ds.records.reserve(corpus.size());

    for (const LabeledImage& im : corpus.images) {
        CausalRecord r;
        r.index = im.index;
        r.label = im.label;
        Rng noise0 = record_rng(master_seed, im.index, Stream::kScorerNoise0);
        Rng noise1 = record_rng(master_seed, im.index, Stream::kScorerNoise1);
        r.p0 = score_image(scorer0, im, noise0);
        r.p1 = score_image(scorer1, im, noise1);
        Rng t_rng = record_rng(master_seed, im.index, Stream::kTreatment);
        r.t = assign_treatment(im.label, t_rng.uniform(), probs);
        Rng y0_rng = record_rng(master_seed, im.index, Stream::kOutcome0);
        Rng y1_rng = record_rng(master_seed, im.index, Stream::kOutcome1);
        r.y0 = sample_outcome(r.p0, y0_rng.uniform());
        r.y1 = sample_outcome(r.p1, y1_rng.uniform());
        r.y = r.t == 1 ? r.y1 : r.y0;
        ds.records.push_back(r);
    }
    ds.estimands = true_estimands(ds.records);
    return ds;
}

// ---- serialization: <name>.csv + <name>.meta.json ----

namespace detail {

inline std::string format_prob(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline nlohmann::json scorer_config_to_json(const ScorerConfig& c) {
    return {{"seed", c.seed},
            {"dropout_rates", c.dropout_rates},
            {"hidden_widths", c.hidden_widths},
            {"train_epochs", c.train_epochs},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size}};
}

inline ScorerConfig scorer_config_from_json(const nlohmann::json& j) {
    ScorerConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dropout_rates = j.at("dropout_rates").get<std::vector<double>>();
    c.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
    c.train_epochs = j.at("train_epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    return c;
}

}  // namespace detail

inline constexpr const char* kDatasetCsvHeader = "index,label,t,y0,y1,p0,p1,y";

inline void save_dataset(const SimulatedDataset& ds, const std::filesystem::path& base_path) {
    std::filesystem::path csv_path = base_path;
    csv_path += ".csv";
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IntegrityError("cannot write " + csv_path.string());
    csv << kDatasetCsvHeader << "\n";
    for (const auto& r : ds.records)
        csv << r.index << ',' << r.label << ',' << r.t << ',' << r.y0 << ',' << r.y1 << ','
            << detail::format_prob(r.p0) << ',' << detail::format_prob(r.p1) << ',' << r.y << "\n";

    nlohmann::json meta = {
        {"generator_version", ds.generator_version},
        {"master_seed", ds.master_seed},
        {"treatment_probs", {ds.treatment_probs.odd, ds.treatment_probs.even}},
        {"scorer0_config", detail::scorer_config_to_json(ds.scorer0_config)},
        {"scorer1_config", detail::scorer_config_to_json(ds.scorer1_config)},
        {"mnist_checksum", ds.mnist_checksum},
        {"estimands",
         {{"ate_true", ds.estimands.ate_true},
          {"ate_analytic", ds.estimands.ate_analytic},
          {"att_true", ds.estimands.att_true},
          {"pretreatment_bias_true", ds.estimands.pretreatment_bias_true},
          {"association", ds.estimands.association}}},
    };
    std::filesystem::path meta_path = base_path;
    meta_path += ".meta.json";
    std::ofstream mf(meta_path, std::ios::binary);
    if (!mf) throw IntegrityError("cannot write " + meta_path.string());
    mf << meta.dump(2) << "\n";
}

inline SimulatedDataset load_dataset(const std::filesystem::path& base_path) {
    std::filesystem::path csv_path = base_path;
    csv_path += ".csv";
    std::ifstream csv(csv_path, std::ios::binary);
    if (!csv) throw IntegrityError("cannot open " + csv_path.string());

    SimulatedDataset ds;
    std::string line;
    if (!std::getline(csv, line)) throw IntegrityError("empty dataset CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kDatasetCsvHeader)
        throw IntegrityError("dataset CSV header mismatch: expected '" +
                             std::string(kDatasetCsvHeader) + "', got '" + line + "'");
    std::size_t line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 8)
            throw IntegrityError("dataset CSV row " + std::to_string(line_no) +
                                 " has " + std::to_string(fields.size()) + " fields, expected 8");
        CausalRecord r;
        try {
            r.index = std::stoull(fields[0]);
            r.label = std::stoi(fields[1]);
            r.t = std::stoi(fields[2]);
            r.y0 = std::stoi(fields[3]);
            r.y1 = std::stoi(fields[4]);
            r.p0 = std::stod(fields[5]);
            r.p1 = std::stod(fields[6]);
            r.y = std::stoi(fields[7]);
        } catch (const std::exception&) {
            throw IntegrityError("unparsable value in dataset CSV row " + std::to_string(line_no));
        }
        if ((r.t != 0 && r.t != 1) || (r.y0 != 0 && r.y0 != 1) || (r.y1 != 0 && r.y1 != 1))
            throw IntegrityError("non-binary t/y0/y1 in dataset CSV row " + std::to_string(line_no));
        if (r.y != (r.t == 1 ? r.y1 : r.y0))
            throw IntegrityError("consistency violation (y != y_t) in dataset CSV row " +
                                 std::to_string(line_no));
        ds.records.push_back(r);
    }

    std::filesystem::path meta_path = base_path;
    meta_path += ".meta.json";
    std::ifstream mf(meta_path, std::ios::binary);
    if (!mf) throw IntegrityError("cannot open " + meta_path.string());
    nlohmann::json meta;
    try {
        mf >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("malformed dataset metadata: ") + e.what());
    }
    try {
        ds.generator_version = meta.at("generator_version").get<std::string>();
        ds.master_seed = meta.at("master_seed").get<std::uint64_t>();
        ds.treatment_probs.odd = meta.at("treatment_probs").at(0).get<double>();
        ds.treatment_probs.even = meta.at("treatment_probs").at(1).get<double>();
        ds.scorer0_config = detail::scorer_config_from_json(meta.at("scorer0_config"));
        ds.scorer1_config = detail::scorer_config_from_json(meta.at("scorer1_config"));
        ds.mnist_checksum = meta.at("mnist_checksum").get<std::string>();
        const auto& e = meta.at("estimands");
        ds.estimands.ate_true = e.at("ate_true").get<double>();
        ds.estimands.ate_analytic = e.at("ate_analytic").get<double>();
        ds.estimands.att_true = e.at("att_true").get<double>();
        ds.estimands.pretreatment_bias_true = e.at("pretreatment_bias_true").get<double>();
        ds.estimands.association = e.at("association").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("dataset metadata schema mismatch: ") + e.what());
    }

    // Cached estimands must be exactly reproducible from the records.
    const TrueEstimands recomputed = true_estimands(ds.records);
    if (!(recomputed == ds.estimands))
        throw IntegrityError("cached estimands do not match recomputation from records");
    return ds;
}

}  // namespace causalforge
