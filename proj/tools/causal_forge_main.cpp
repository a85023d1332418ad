// causal-forge: simulate semi-synthetic causal datasets from a digit
// corpus, train three-headed treatment-effect estimators with swappable
// encoders, evaluate them, and aggregate per-run reports into tables.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "causalforge/dragon.hpp"
#include "causalforge/idx.hpp"
#include "causalforge/metrics.hpp"
#include "causalforge/objectives.hpp"
#include "causalforge/simulate.hpp"
#include "causalforge/train.hpp"

namespace fs = std::filesystem;
using namespace causalforge;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIntegrity = 3;

std::string default_data_dir() {
    if (const char* env = std::getenv("CAUSAL_FORGE_DATA")) return env;
    return "data";
}

// Loads the training pair and, when present, appends the t10k pair with
// indices offset past the training corpus.
Corpus load_mnist_dir(const fs::path& dir) {
    Corpus corpus = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    const fs::path test_images = dir / "t10k-images-idx3-ubyte";
    const fs::path test_labels = dir / "t10k-labels-idx1-ubyte";
    if (fs::exists(test_images) && fs::exists(test_labels)) {
        Corpus extra = load_idx(test_images, test_labels);
        const std::size_t offset = corpus.size();
        for (auto& im : extra.images) {
            im.index += offset;
            corpus.images.push_back(im);
        }
        detail::Fnv1a h;
        h.update(corpus.source_checksum.data(), corpus.source_checksum.size());
        h.update(extra.source_checksum.data(), extra.source_checksum.size());
        corpus.source_checksum = h.hex();
    }
    return corpus;
}

std::string file_checksum(const fs::path& path) {
    detail::Fnv1a h;
    detail::hash_file(path, h);
    return h.hex();
}

EncoderSpec make_encoder_spec(const std::string& variant, int repr_dim, std::uint64_t seed) {
    EncoderSpec spec;
    spec.variant = encoder_variant_from_string(variant);
    spec.init_seed = seed;
    switch (spec.variant) {
        case EncoderVariant::kDense:
            spec.repr_dim = repr_dim > 0 ? repr_dim : 200;
            spec.dense_widths = {200, 200, 200};
            if (repr_dim > 0 && repr_dim != 200) spec.dense_widths = {200, 200};
            break;
        case EncoderVariant::kResidual:
            spec.repr_dim = repr_dim > 0 ? repr_dim : 64;
            spec.residual_channels = {8, 8};
            break;
        case EncoderVariant::kTransformer:
            spec.repr_dim = repr_dim > 0 ? repr_dim : 64;
            break;
    }
    return spec;
}

int cmd_simulate(const std::string& mnist_dir, const std::string& out, std::uint64_t seed,
                 std::size_t n, int scorer_epochs, double scorer0_dropout,
                 double scorer1_dropout) {
    Corpus corpus = load_mnist_dir(mnist_dir);
    if (n > 0 && n < corpus.size()) corpus.images.resize(n);

    ScorerConfig s0;
    s0.seed = splitmix64(seed ^ 0x5c0ULL);
    s0.dropout_rates = {scorer0_dropout};
    s0.hidden_widths = {64};
    s0.train_epochs = scorer_epochs;

    // Scorer 1 differs in seed, dropout (+0.1) and hidden width (x1.25).
    ScorerConfig s1 = s0;
    s1.seed = splitmix64(seed ^ 0x5c1ULL);
    s1.dropout_rates = {scorer1_dropout};
    s1.hidden_widths = {80};

    SimulatedDataset ds = simulate_dataset(corpus, s0, s1, seed);
    save_dataset(ds, out);

    std::printf("records: %zu\n", ds.records.size());
    std::printf("ate_true: %.6f\n", ds.estimands.ate_true);
    std::printf("ate_analytic: %.6f\n", ds.estimands.ate_analytic);
    std::printf("att_true: %.6f\n", ds.estimands.att_true);
    std::printf("pretreatment_bias_true: %.6f\n", ds.estimands.pretreatment_bias_true);
    std::printf("association: %.6f\n", ds.estimands.association);
    return 0;
}

int cmd_train(const std::string& dataset, const std::string& mnist_dir,
              const std::string& encoder, bool treg, double alpha, double beta, int epochs,
              int batch_size, double lr, std::uint64_t seed, std::uint64_t split_seed,
              int repr_dim, const std::string& out) {
    SimulatedDataset ds = load_dataset(dataset);
    Corpus corpus = load_mnist_dir(mnist_dir);

    RecordSplit split = split_records(ds.records, {}, split_seed);
    // Only (X, y, t) cross this boundary; y0/y1/p0/p1 are dropped here.
    TrainingView view = TrainingView::from_records(split.train, corpus);

    EncoderSpec spec = make_encoder_spec(encoder, repr_dim, seed);
    DragonModel model(spec, {100, 100}, seed);

    LossConfig loss;
    loss.treg_enabled = treg;
    loss.alpha = alpha;
    loss.beta = beta;

    TrainConfig tc;
    tc.learning_rate = lr;
    tc.batch_size = batch_size;
    tc.epochs = epochs;
    tc.seed = seed;

    const auto log = train_model(model, view, loss, tc);

    CheckpointMeta meta;
    meta.dataset_checksum = file_checksum(dataset + ".csv");
    meta.split_seed = split_seed;
    meta.treg_enabled = treg;
    meta.alpha = alpha;
    meta.beta = beta;
    save_checkpoint(model, meta, out);

    std::ofstream log_file(out + ".log.csv");
    log_file << "epoch,mean_loss,epsilon\n";
    for (const auto& e : log) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.mean_loss, e.epsilon);
        log_file << buf;
    }
    if (!log.empty())
        std::printf("final epoch %d: mean_loss %.6f, epsilon %.6g\n", log.back().epoch,
                    log.back().mean_loss, log.back().epsilon);
    std::printf("checkpoint: %s\n", out.c_str());
    return 0;
}

int cmd_evaluate(const std::string& dataset, const std::string& model_path,
                 const std::string& mnist_dir, const std::string& out) {
    auto [model, meta] = load_checkpoint(model_path);
    if (meta.dataset_checksum != file_checksum(dataset + ".csv"))
        throw IntegrityError("checkpoint was trained on a different dataset (checksum mismatch)");

    SimulatedDataset ds = load_dataset(dataset);
    Corpus corpus = load_mnist_dir(mnist_dir);
    RecordSplit split = split_records(
        ds.records, {meta.split_train, meta.split_val, meta.split_test}, meta.split_seed);

    LossConfig loss;
    loss.treg_enabled = meta.treg_enabled;
    loss.alpha = meta.alpha;
    loss.beta = meta.beta;

    MetricsReport report = evaluate_model(model, corpus, split.test, loss);
    std::ofstream out_file(out);
    if (!out_file) throw IntegrityError("cannot write report " + out);
    out_file << metrics_report_to_json(report).dump(2) << "\n";
    std::printf("accuracy: %.4f\nate_ae: %.6f\npretreatment_bias_est: %.6f\n", report.accuracy,
                report.ate_ae, report.pretreatment_bias_est);
    return 0;
}

struct Cell {
    std::vector<double> values;

    double median() const {
        std::vector<double> v = values;
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    double min() const { return *std::min_element(values.begin(), values.end()); }
    double max() const { return *std::max_element(values.begin(), values.end()); }
};

int cmd_report(const std::string& runs_dir, const std::string& format) {
    std::vector<MetricsReport> rows;
    if (fs::is_directory(runs_dir)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(runs_dir))
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::ifstream in(f);
            nlohmann::json j;
            try {
                in >> j;
                rows.push_back(metrics_report_from_json(j));
            } catch (const nlohmann::json::exception&) {
                // not a report row; skip
            }
        }
    }
    if (rows.empty()) throw ConfigError("no report rows found in " + runs_dir);

    // (encoder, treg) -> metric cells
    std::map<std::string, std::map<bool, std::map<std::string, Cell>>> grid;
    for (const auto& r : rows) {
        auto& cell = grid[r.encoder_variant][r.treg_enabled];
        cell["accuracy"].values.push_back(r.accuracy);
        cell["ate_ae"].values.push_back(r.ate_ae);
        cell["pretreatment_bias_est"].values.push_back(r.pretreatment_bias_est);
    }

    auto fmt_cell = [](const Cell& c) {
        char buf[96];
        if (c.values.size() == 1)
            std::snprintf(buf, sizeof buf, "%.4f", c.median());
        else
            std::snprintf(buf, sizeof buf, "%.4f [%.4f, %.4f]", c.median(), c.min(), c.max());
        return std::string(buf);
    };
    auto lookup = [&](const std::string& enc, bool treg, const std::string& metric) -> std::string {
        auto it = grid.find(enc);
        if (it == grid.end()) return "-";
        auto jt = it->second.find(treg);
        if (jt == it->second.end()) return "-";
        return fmt_cell(jt->second.at(metric));
    };

    std::vector<std::string> encoders;
    for (const auto& [enc, _] : grid) encoders.push_back(enc);

    if (format == "csv") {
        std::printf("table,encoder,metric,wo_treg,treg\n");
        for (const auto& enc : encoders) {
            std::printf("outcome,%s,accuracy,%s,%s\n", enc.c_str(),
                        lookup(enc, false, "accuracy").c_str(), lookup(enc, true, "accuracy").c_str());
            std::printf("outcome,%s,ate_ae,%s,%s\n", enc.c_str(),
                        lookup(enc, false, "ate_ae").c_str(), lookup(enc, true, "ate_ae").c_str());
        }
        for (const auto& enc : encoders)
            std::printf("bias,%s,pretreatment_bias_est,%s,%s\n", enc.c_str(),
                        lookup(enc, false, "pretreatment_bias_est").c_str(),
                        lookup(enc, true, "pretreatment_bias_est").c_str());
    } else {
        std::printf("## Held-out test metrics\n\n");
        std::printf("| Encoder | Accuracy (w/o t-reg) | Accuracy (t-reg) | ATE_AE (w/o t-reg) | ATE_AE (t-reg) |\n");
        std::printf("|---|---|---|---|---|\n");
        for (const auto& enc : encoders)
            std::printf("| %s | %s | %s | %s | %s |\n", enc.c_str(),
                        lookup(enc, false, "accuracy").c_str(), lookup(enc, true, "accuracy").c_str(),
                        lookup(enc, false, "ate_ae").c_str(), lookup(enc, true, "ate_ae").c_str());
        std::printf("\n## Estimated pre-treatment bias\n\n");
        std::printf("| Encoder | w/o t-reg | t-reg |\n|---|---|---|\n");
        for (const auto& enc : encoders)
            std::printf("| %s | %s | %s |\n", enc.c_str(),
                        lookup(enc, false, "pretreatment_bias_est").c_str(),
                        lookup(enc, true, "pretreatment_bias_est").c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"causal-forge: semi-synthetic treatment-effect estimation on digit images"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a simulated causal dataset");
    std::string sim_mnist = default_data_dir(), sim_out = "dataset";
    std::uint64_t sim_seed = 0;
    std::size_t sim_n = 0;
    int sim_scorer_epochs = 1;
    double sim_d0 = 0.2, sim_d1 = 0.3;
    sim->add_option("--mnist-dir", sim_mnist, "directory with IDX files");
    sim->add_option("--out", sim_out, "output basename (<out>.csv, <out>.meta.json)");
    sim->add_option("--seed", sim_seed, "master seed");
    sim->add_option("--n", sim_n, "record count (0 = full corpus)");
    sim->add_option("--scorer-epochs", sim_scorer_epochs, "scorer training epochs");
    sim->add_option("--scorer0-dropout", sim_d0, "dropout rate of scorer 0");
    sim->add_option("--scorer1-dropout", sim_d1, "dropout rate of scorer 1");

    // train
    auto* train = app.add_subcommand("train", "train a three-headed estimator");
    std::string tr_dataset, tr_mnist = default_data_dir(), tr_encoder = "dense";
    std::string tr_treg = "on", tr_out = "model.ckpt";
    double tr_alpha = 1.0, tr_beta = 1.0, tr_lr = 1e-3;
    int tr_epochs = 20, tr_batch = 64, tr_repr = 0;
    std::uint64_t tr_seed = 0, tr_split_seed = 13;
    train->add_option("--dataset", tr_dataset, "dataset basename")->required();
    train->add_option("--mnist-dir", tr_mnist, "directory with IDX files");
    train->add_option("--encoder", tr_encoder, "dense|residual|transformer");
    train->add_option("--treg", tr_treg, "targeted regularization: on|off");
    train->add_option("--alpha", tr_alpha, "propensity loss weight");
    train->add_option("--beta", tr_beta, "targeted regularization weight");
    train->add_option("--epochs", tr_epochs, "training epochs");
    train->add_option("--batch-size", tr_batch, "minibatch size");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--seed", tr_seed, "training/init seed");
    train->add_option("--split-seed", tr_split_seed, "record split seed");
    train->add_option("--repr-dim", tr_repr, "representation width (0 = variant default)");
    train->add_option("--out", tr_out, "checkpoint path");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    std::string ev_dataset, ev_model, ev_mnist = default_data_dir(), ev_out = "report.json";
    eval->add_option("--dataset", ev_dataset, "dataset basename")->required();
    eval->add_option("--model", ev_model, "checkpoint path")->required();
    eval->add_option("--mnist-dir", ev_mnist, "directory with IDX files");
    eval->add_option("--out", ev_out, "report output path");

    // report
    auto* rep = app.add_subcommand("report", "aggregate report rows into tables");
    std::string rp_dir, rp_format = "md";
    rep->add_option("--runs-dir", rp_dir, "directory of report JSON rows")->required();
    rep->add_option("--format", rp_format, "csv|md");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed())
            return cmd_simulate(sim_mnist, sim_out, sim_seed, sim_n, sim_scorer_epochs, sim_d0,
                                sim_d1);
        if (train->parsed()) {
            if (tr_treg != "on" && tr_treg != "off") throw ConfigError("--treg must be on or off");
            return cmd_train(tr_dataset, tr_mnist, tr_encoder, tr_treg == "on", tr_alpha, tr_beta,
                             tr_epochs, tr_batch, tr_lr, tr_seed, tr_split_seed, tr_repr, tr_out);
        }
        if (eval->parsed()) return cmd_evaluate(ev_dataset, ev_model, ev_mnist, ev_out);
        if (rep->parsed()) {
            if (rp_format != "csv" && rp_format != "md")
                throw ConfigError("--format must be csv or md");
            return cmd_report(rp_dir, rp_format);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const IntegrityError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const DegenerateGroupError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
