#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "causalforge/errors.hpp"
#include "causalforge/idx.hpp"
#include "causalforge/nn/autodiff.hpp"
#include "causalforge/nn/optim.hpp"

namespace causalforge {

inline constexpr double kHeadClipDelta = 1e-7;  // keeps cross-entropy finite

enum class EncoderVariant { kDense, kResidual, kTransformer };

inline std::string to_string(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::kDense: return "dense";
        case EncoderVariant::kResidual: return "residual";
        case EncoderVariant::kTransformer: return "transformer";
    }
    throw ConfigError("unknown encoder variant");
}

inline EncoderVariant encoder_variant_from_string(const std::string& s) {
    if (s == "dense") return EncoderVariant::kDense;
    if (s == "residual") return EncoderVariant::kResidual;
    if (s == "transformer") return EncoderVariant::kTransformer;
    throw ConfigError("unknown encoder variant '" + s + "'");
}

// Configuration of the swappable representation learner. The variant fully
// determines the forward graph; all variants emit a repr_dim-wide vector.
struct EncoderSpec {
    EncoderVariant variant = EncoderVariant::kDense;
    int repr_dim = 200;
    std::vector<int> dense_widths = {200, 200, 200};
    std::vector<int> residual_channels = {8, 8};  // one residual block per entry
    int transformer_patch = 7;  // must divide 28 (strict no-padding policy)
    int transformer_embed = 32;
    int transformer_heads = 4;
    int transformer_depth = 2;
    std::uint64_t init_seed = 0;

    void validate() const {
        if (repr_dim <= 0) throw ConfigError("repr_dim must be positive");
        switch (variant) {
            case EncoderVariant::kDense:
                for (int w : dense_widths)
                    if (w <= 0) throw ConfigError("dense widths must be positive");
                break;
            case EncoderVariant::kResidual:
                if (residual_channels.empty())
                    throw ConfigError("residual encoder needs at least one block");
                for (int c : residual_channels)
                    if (c <= 0) throw ConfigError("residual channel widths must be positive");
                break;
            case EncoderVariant::kTransformer:
                if (transformer_patch <= 0 || kImageHeight % transformer_patch != 0)
                    throw ConfigError("transformer patch size must divide " +
                                      std::to_string(kImageHeight));
                if (transformer_embed <= 0 || transformer_heads <= 0 || transformer_depth <= 0)
                    throw ConfigError("transformer embed/heads/depth must be positive");
                if (transformer_embed % transformer_heads != 0)
                    throw ConfigError("transformer embed width must be divisible by head count");
                break;
        }
    }
};

inline nlohmann::json encoder_spec_to_json(const EncoderSpec& s) {
    return {{"variant", to_string(s.variant)},
            {"repr_dim", s.repr_dim},
            {"dense_widths", s.dense_widths},
            {"residual_channels", s.residual_channels},
            {"transformer_patch", s.transformer_patch},
            {"transformer_embed", s.transformer_embed},
            {"transformer_heads", s.transformer_heads},
            {"transformer_depth", s.transformer_depth},
            {"init_seed", s.init_seed}};
}

inline EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
    EncoderSpec s;
    s.variant = encoder_variant_from_string(j.at("variant").get<std::string>());
    s.repr_dim = j.at("repr_dim").get<int>();
    s.dense_widths = j.at("dense_widths").get<std::vector<int>>();
    s.residual_channels = j.at("residual_channels").get<std::vector<int>>();
    s.transformer_patch = j.at("transformer_patch").get<int>();
    s.transformer_embed = j.at("transformer_embed").get<int>();
    s.transformer_heads = j.at("transformer_heads").get<int>();
    s.transformer_depth = j.at("transformer_depth").get<int>();
    s.init_seed = j.at("init_seed").get<std::uint64_t>();
    return s;
}

// Per-record head outputs, all strictly inside (0,1).
struct DragonOutputs {
    Eigen::VectorXd q0;
    Eigen::VectorXd q1;
    Eigen::VectorXd g;

    std::size_t size() const { return static_cast<std::size_t>(q0.size()); }
};

// Head outputs still attached to the tape, for training.
struct DragonForward {
    nn::Var q0;
    nn::Var q1;
    nn::Var g;
};

// The three-headed estimator: a representation learner feeding two outcome
// heads and a propensity head, plus the targeted-regularization scalar
// epsilon. The outcome heads share the representation but never parameters.
class DragonModel {
public:
    DragonModel(EncoderSpec spec, std::vector<int> head_widths, std::uint64_t seed,
                bool head_skip = true)
        : spec_(std::move(spec)), head_widths_(std::move(head_widths)), head_skip_(head_skip),
          seed_(seed) {
        spec_.validate();
        for (int w : head_widths_)
            if (w <= 0) throw ConfigError("head widths must be positive");
        if (head_skip_ && (head_widths_.size() < 2 || head_widths_.front() != head_widths_.back()))
            throw ConfigError("head skip requires >= 2 hidden layers with equal first/last widths");
        Rng init(splitmix64(seed_ ^ spec_.init_seed ^ 0xd7a60ULL));
        build_encoder(init);
        build_head("q0", q0_head_, init);
        build_head("q1", q1_head_, init);
        g_w_ = params_.add("g.w", nn::glorot_uniform(spec_.repr_dim, 1, init));
        g_b_ = params_.add("g.b", nn::Mat::Zero(1, 1));
        epsilon_ = params_.add("epsilon", nn::Mat::Zero(1, 1));
    }

    const EncoderSpec& spec() const { return spec_; }
    const std::vector<int>& head_widths() const { return head_widths_; }
    bool head_skip() const { return head_skip_; }
    std::uint64_t seed() const { return seed_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    const nn::Var& epsilon() const { return epsilon_; }
    double epsilon_value() const { return epsilon_->value(0, 0); }
    void set_epsilon(double v) { epsilon_->value(0, 0) = v; }

    // images: (B x 784) -> (B x repr_dim)
    nn::Var encode(const nn::Var& images) const {
        if (images->value.cols() != kImagePixels)
            throw ShapeError("encode: expected " + std::to_string(kImagePixels) +
                             " pixel columns");
        switch (spec_.variant) {
            case EncoderVariant::kDense: return encode_dense(images);
            case EncoderVariant::kResidual: return encode_residual(images);
            case EncoderVariant::kTransformer: return encode_transformer(images);
        }
        throw ConfigError("unknown encoder variant");
    }

    DragonForward forward_vars(const nn::Var& images) const {
        nn::Var repr = encode(images);
        DragonForward out;
        out.q0 = head_forward(q0_head_, repr);
        out.q1 = head_forward(q1_head_, repr);
        out.g = nn::clip(nn::sigmoid(nn::add_rowvec(nn::matmul(repr, g_w_), g_b_)),
                         kHeadClipDelta, 1.0 - kHeadClipDelta);
        return out;
    }

    DragonOutputs forward(const nn::Mat& images) const {
        DragonForward f = forward_vars(nn::constant(images));
        DragonOutputs out;
        out.q0 = f.q0->value.col(0);
        out.q1 = f.q1->value.col(0);
        out.g = f.g->value.col(0);
        return out;
    }

private:
    struct Head {
        std::vector<nn::Var> w, b;
        nn::Var out_w, out_b;
    };

    void build_encoder(Rng& init) {
        using nn::Mat;
        switch (spec_.variant) {
            case EncoderVariant::kDense: {
                int in = kImagePixels;
                for (std::size_t i = 0; i < spec_.dense_widths.size(); ++i) {
                    const int w = spec_.dense_widths[i];
                    enc_w_.push_back(params_.add("enc.dense" + std::to_string(i) + ".w",
                                                 nn::glorot_uniform(in, w, init)));
                    enc_b_.push_back(
                        params_.add("enc.dense" + std::to_string(i) + ".b", Mat::Zero(1, w)));
                    in = w;
                }
                if (in != spec_.repr_dim) {
                    enc_proj_w_ = params_.add("enc.proj.w", nn::glorot_uniform(in, spec_.repr_dim, init));
                    enc_proj_b_ = params_.add("enc.proj.b", Mat::Zero(1, spec_.repr_dim));
                }
                break;
            }
            case EncoderVariant::kResidual: {
                const int c0 = spec_.residual_channels.front();
                stem_ = {1, kImageHeight, kImageWidth, c0, 3, 2, 1};
                stem_w_ = params_.add("enc.stem.w",
                                      nn::glorot_uniform(c0, stem_.patch_size(), init));
                stem_b_ = params_.add("enc.stem.b", Mat::Zero(1, c0));
                int c_prev = c0;
                const int h = stem_.out_h(), w = stem_.out_w();
                for (std::size_t i = 0; i < spec_.residual_channels.size(); ++i) {
                    const int c = spec_.residual_channels[i];
                    ResBlock blk;
                    blk.conv1 = {c_prev, h, w, c, 3, 1, 1};
                    blk.conv2 = {c, h, w, c, 3, 1, 1};
                    const std::string tag = "enc.res" + std::to_string(i);
                    blk.w1 = params_.add(tag + ".conv1.w",
                                         nn::glorot_uniform(c, blk.conv1.patch_size(), init));
                    blk.b1 = params_.add(tag + ".conv1.b", Mat::Zero(1, c));
                    blk.w2 = params_.add(tag + ".conv2.w",
                                         nn::glorot_uniform(c, blk.conv2.patch_size(), init));
                    blk.b2 = params_.add(tag + ".conv2.b", Mat::Zero(1, c));
                    if (c != c_prev) {
                        blk.proj = {c_prev, h, w, c, 1, 1, 0};
                        blk.proj_w = params_.add(tag + ".proj.w",
                                                 nn::glorot_uniform(c, blk.proj.patch_size(), init));
                        blk.proj_b = params_.add(tag + ".proj.b", Mat::Zero(1, c));
                    }
                    res_blocks_.push_back(std::move(blk));
                    c_prev = c;
                }
                enc_proj_w_ = params_.add("enc.proj.w",
                                          nn::glorot_uniform(c_prev, spec_.repr_dim, init));
                enc_proj_b_ = params_.add("enc.proj.b", Mat::Zero(1, spec_.repr_dim));
                break;
            }
            case EncoderVariant::kTransformer: {
                const int p = spec_.transformer_patch;
                const int E = spec_.transformer_embed;
                const int T = (kImageHeight / p) * (kImageWidth / p);
                embed_w_ = params_.add("enc.embed.w", nn::glorot_uniform(p * p, E, init));
                embed_b_ = params_.add("enc.embed.b", Mat::Zero(1, E));
                pos_ = params_.add("enc.pos", 0.02 * nn::glorot_uniform(T, E, init));
                for (int d = 0; d < spec_.transformer_depth; ++d) {
                    TfBlock blk;
                    const std::string tag = "enc.tf" + std::to_string(d);
                    blk.ln1_g = params_.add(tag + ".ln1.g", Mat::Ones(1, E));
                    blk.ln1_b = params_.add(tag + ".ln1.b", Mat::Zero(1, E));
                    blk.wq = params_.add(tag + ".attn.wq", nn::glorot_uniform(E, E, init));
                    blk.bq = params_.add(tag + ".attn.bq", Mat::Zero(1, E));
                    blk.wk = params_.add(tag + ".attn.wk", nn::glorot_uniform(E, E, init));
                    blk.bk = params_.add(tag + ".attn.bk", Mat::Zero(1, E));
                    blk.wv = params_.add(tag + ".attn.wv", nn::glorot_uniform(E, E, init));
                    blk.bv = params_.add(tag + ".attn.bv", Mat::Zero(1, E));
                    blk.wo = params_.add(tag + ".attn.wo", nn::glorot_uniform(E, E, init));
                    blk.bo = params_.add(tag + ".attn.bo", Mat::Zero(1, E));
                    blk.ln2_g = params_.add(tag + ".ln2.g", Mat::Ones(1, E));
                    blk.ln2_b = params_.add(tag + ".ln2.b", Mat::Zero(1, E));
                    blk.mlp1_w = params_.add(tag + ".mlp1.w", nn::glorot_uniform(E, 2 * E, init));
                    blk.mlp1_b = params_.add(tag + ".mlp1.b", Mat::Zero(1, 2 * E));
                    blk.mlp2_w = params_.add(tag + ".mlp2.w", nn::glorot_uniform(2 * E, E, init));
                    blk.mlp2_b = params_.add(tag + ".mlp2.b", Mat::Zero(1, E));
                    tf_blocks_.push_back(std::move(blk));
                }
                final_ln_g_ = params_.add("enc.lnf.g", Mat::Ones(1, E));
                final_ln_b_ = params_.add("enc.lnf.b", Mat::Zero(1, E));
                enc_proj_w_ = params_.add("enc.proj.w", nn::glorot_uniform(E, spec_.repr_dim, init));
                enc_proj_b_ = params_.add("enc.proj.b", Mat::Zero(1, spec_.repr_dim));
                break;
            }
        }
    }

    void build_head(const std::string& name, Head& head, Rng& init) {
        int in = spec_.repr_dim;
        for (std::size_t i = 0; i < head_widths_.size(); ++i) {
            const int w = head_widths_[i];
            head.w.push_back(params_.add(name + ".h" + std::to_string(i) + ".w",
                                         nn::glorot_uniform(in, w, init)));
            head.b.push_back(
                params_.add(name + ".h" + std::to_string(i) + ".b", nn::Mat::Zero(1, w)));
            in = w;
        }
        head.out_w = params_.add(name + ".out.w", nn::glorot_uniform(in, 1, init));
        head.out_b = params_.add(name + ".out.b", nn::Mat::Zero(1, 1));
    }

    // Outcome head: hidden relu layers, optional additive skip from the
    // first hidden output into the final layer input, sigmoid output.
    nn::Var head_forward(const Head& head, const nn::Var& repr) const {
        using namespace nn;
        Var h = repr;
        Var first_hidden;
        for (std::size_t i = 0; i < head.w.size(); ++i) {
            h = relu(add_rowvec(matmul(h, head.w[i]), head.b[i]));
            if (i == 0) first_hidden = h;
        }
        if (head_skip_ && head.w.size() >= 2) h = add(h, first_hidden);
        return clip(sigmoid(add_rowvec(matmul(h, head.out_w), head.out_b)), kHeadClipDelta,
                    1.0 - kHeadClipDelta);
    }

    nn::Var encode_dense(const nn::Var& images) const {
        using namespace nn;
        Var h = images;
        for (std::size_t i = 0; i < enc_w_.size(); ++i)
            h = relu(add_rowvec(matmul(h, enc_w_[i]), enc_b_[i]));
        if (enc_proj_w_) h = relu(add_rowvec(matmul(h, enc_proj_w_), enc_proj_b_));
        return h;
    }

    nn::Var encode_residual(const nn::Var& images) const {
        using namespace nn;
        Var h = relu(conv2d(images, stem_w_, stem_b_, stem_));
        for (const auto& blk : res_blocks_) {
            Var branch = relu(conv2d(h, blk.w1, blk.b1, blk.conv1));
            branch = conv2d(branch, blk.w2, blk.b2, blk.conv2);
            Var skip = blk.proj_w ? conv2d(h, blk.proj_w, blk.proj_b, blk.proj) : h;
            h = add(skip, branch);  // pre-activation style: zero branch == skip path
        }
        const int c = spec_.residual_channels.back();
        h = global_avg_pool(h, c, stem_.out_h() * stem_.out_w());
        return relu(add_rowvec(matmul(h, enc_proj_w_), enc_proj_b_));
    }

    nn::Var encode_transformer(const nn::Var& images) const {
        using namespace nn;
        const int p = spec_.transformer_patch;
        const int T = (kImageHeight / p) * (kImageWidth / p);
        Var tokens = patchify(images, kImageHeight, kImageWidth, p);
        Var h = add_rowvec(matmul(tokens, embed_w_), embed_b_);
        h = add_tokenwise(h, pos_);
        for (const auto& blk : tf_blocks_) {
            Var a = layer_norm(h, blk.ln1_g, blk.ln1_b);
            a = multi_head_attention(a, T, spec_.transformer_heads, blk.wq, blk.bq, blk.wk,
                                     blk.bk, blk.wv, blk.bv, blk.wo, blk.bo);
            h = add(h, a);
            Var m = layer_norm(h, blk.ln2_g, blk.ln2_b);
            m = relu(add_rowvec(matmul(m, blk.mlp1_w), blk.mlp1_b));
            m = add_rowvec(matmul(m, blk.mlp2_w), blk.mlp2_b);
            h = add(h, m);
        }
        h = layer_norm(h, final_ln_g_, final_ln_b_);
        h = tokens_mean(h, T);
        return relu(add_rowvec(matmul(h, enc_proj_w_), enc_proj_b_));
    }

    struct ResBlock {
        nn::ConvShape conv1{}, conv2{}, proj{};
        nn::Var w1, b1, w2, b2, proj_w, proj_b;
    };
    struct TfBlock {
        nn::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        nn::Var ln2_g, ln2_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
    };

    EncoderSpec spec_;
    std::vector<int> head_widths_;
    bool head_skip_;
    std::uint64_t seed_;
    nn::ParamStore params_;

    // dense
    std::vector<nn::Var> enc_w_, enc_b_;
    // residual
    nn::ConvShape stem_{};
    nn::Var stem_w_, stem_b_;
    std::vector<ResBlock> res_blocks_;
    // transformer
    nn::Var embed_w_, embed_b_, pos_, final_ln_g_, final_ln_b_;
    std::vector<TfBlock> tf_blocks_;
    // shared
    nn::Var enc_proj_w_, enc_proj_b_;

    Head q0_head_, q1_head_;
    nn::Var g_w_, g_b_;
    nn::Var epsilon_;
};

inline DragonModel build_model(const EncoderSpec& spec, const std::vector<int>& head_widths,
                               std::uint64_t seed, bool head_skip = true) {
    return DragonModel(spec, head_widths, seed, head_skip);
}

// ite_i = q1_i - q0_i; ate_est = mean(ite).
inline std::pair<Eigen::VectorXd, double> estimate_effects(const DragonOutputs& outputs) {
    if (outputs.size() == 0) throw DegenerateGroupError("estimate_effects: empty outputs");
    Eigen::VectorXd ite = outputs.q1 - outputs.q0;
    return {ite, ite.mean()};
}

// ---- checkpoint IO ----

inline constexpr const char* kCheckpointVersion = "causal-forge-ckpt/1";

// Self-describing checkpoint: spec, head layout, epsilon, named flat
// parameter arrays, plus provenance (dataset checksum, split, seed).
struct CheckpointMeta {
    std::string dataset_checksum;  // checksum of the dataset CSV used for training
    double split_train = 0.8, split_val = 0.1, split_test = 0.1;
    std::uint64_t split_seed = 0;
    bool treg_enabled = false;
    double alpha = 1.0, beta = 1.0;
};

inline void save_checkpoint(const DragonModel& model, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
    nlohmann::json j;
    j["version"] = kCheckpointVersion;
    j["encoder_spec"] = encoder_spec_to_json(model.spec());
    j["head_widths"] = model.head_widths();
    j["head_skip"] = model.head_skip();
    j["seed"] = model.seed();
    j["epsilon"] = model.epsilon_value();
    j["dataset_checksum"] = meta.dataset_checksum;
    j["split"] = {{"train", meta.split_train},
                  {"val", meta.split_val},
                  {"test", meta.split_test},
                  {"seed", meta.split_seed}};
    j["loss"] = {{"treg_enabled", meta.treg_enabled}, {"alpha", meta.alpha}, {"beta", meta.beta}};
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, p] : model.params().items()) {
        std::vector<double> flat(p->value.size());
        for (Eigen::Index i = 0; i < p->value.rows(); ++i)
            for (Eigen::Index k = 0; k < p->value.cols(); ++k)
                flat[static_cast<std::size_t>(i * p->value.cols() + k)] = p->value(i, k);
        params[name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", flat}};
    }
    j["params"] = std::move(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IntegrityError("cannot write checkpoint " + path.string());
    out << j.dump() << "\n";
}

inline std::pair<DragonModel, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("malformed checkpoint: ") + e.what());
    }
    try {
        if (j.at("version").get<std::string>() != kCheckpointVersion)
            throw IntegrityError("unsupported checkpoint version");
        EncoderSpec spec = encoder_spec_from_json(j.at("encoder_spec"));
        DragonModel model(spec, j.at("head_widths").get<std::vector<int>>(),
                          j.at("seed").get<std::uint64_t>(), j.at("head_skip").get<bool>());
        for (const auto& [name, p] : model.params().items()) {
            const auto& pj = j.at("params").at(name);
            if (pj.at("rows").get<Eigen::Index>() != p->value.rows() ||
                pj.at("cols").get<Eigen::Index>() != p->value.cols())
                throw IntegrityError("checkpoint parameter shape mismatch for " + name);
            const auto flat = pj.at("data").get<std::vector<double>>();
            for (Eigen::Index i = 0; i < p->value.rows(); ++i)
                for (Eigen::Index k = 0; k < p->value.cols(); ++k)
                    p->value(i, k) = flat[static_cast<std::size_t>(i * p->value.cols() + k)];
        }
        model.set_epsilon(j.at("epsilon").get<double>());
        CheckpointMeta meta;
        meta.dataset_checksum = j.at("dataset_checksum").get<std::string>();
        meta.split_train = j.at("split").at("train").get<double>();
        meta.split_val = j.at("split").at("val").get<double>();
        meta.split_test = j.at("split").at("test").get<double>();
        meta.split_seed = j.at("split").at("seed").get<std::uint64_t>();
        meta.treg_enabled = j.at("loss").at("treg_enabled").get<bool>();
        meta.alpha = j.at("loss").at("alpha").get<double>();
        meta.beta = j.at("loss").at("beta").get<double>();
        return {std::move(model), meta};
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint schema mismatch: ") + e.what());
    }
}

}  // namespace causalforge
