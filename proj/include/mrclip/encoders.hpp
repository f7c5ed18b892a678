#pragma once

// Image and metadata encoders mapping into a shared unit-sphere embedding,
// and the learnable contrastive temperature.

#include "mrclip/autodiff.hpp"
#include "mrclip/checkpoint.hpp"
#include "mrclip/error.hpp"
#include "mrclip/optim.hpp"
#include "mrclip/templating.hpp"
#include "mrclip/util.hpp"

#include "json.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace mrclip {

using ad::ParamRef;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

struct ImageEncoderConfig {
    std::size_t input_side = 32;
    std::vector<std::size_t> channels{8, 16, 32};
    std::size_t embed_dim = 64;

    void validate() const {
        require(!channels.empty(), ErrorCode::InvalidArgument, "image encoder needs at least one conv stage");
        const std::size_t div = std::size_t{1} << channels.size();
        require(input_side > 0 && input_side % div == 0, ErrorCode::InvalidArgument,
                "input_side must be divisible by 2^stages");
        require(embed_dim >= 8, ErrorCode::InvalidArgument, "embed_dim must be at least 8");
    }
};

struct TextEncoderConfig {
    std::uint32_t vocab = kDefaultVocab;
    std::size_t token_dim = 64;
    std::size_t mlp_hidden = 128;
    std::size_t embed_dim = 64;
};

struct ModelConfig {
    ImageEncoderConfig image;
    TextEncoderConfig text;
    double init_tau = 0.07;
    double tau_min = 0.01;
    double tau_max = 1.0;

    void validate() const {
        image.validate();
        require(text.embed_dim == image.embed_dim, ErrorCode::InvalidArgument,
                "image and text embed_dim must match");
        require(text.vocab > 0 && text.token_dim > 0 && text.mlp_hidden > 0, ErrorCode::InvalidArgument,
                "text encoder sizes must be positive");
        require(tau_min > 0 && tau_min <= init_tau && init_tau <= tau_max, ErrorCode::InvalidArgument,
                "temperature init outside clamp range");
    }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"image", {{"input_side", c.image.input_side}, {"channels", c.image.channels}, {"embed_dim", c.image.embed_dim}}},
            {"text",
             {{"vocab", c.text.vocab},
              {"token_dim", c.text.token_dim},
              {"mlp_hidden", c.text.mlp_hidden},
              {"embed_dim", c.text.embed_dim}}},
            {"init_tau", c.init_tau},
            {"tau_min", c.tau_min},
            {"tau_max", c.tau_max}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        if (j.contains("image")) {
            const auto& im = j.at("image");
            c.image.input_side = im.value("input_side", c.image.input_side);
            c.image.channels = im.value("channels", c.image.channels);
            c.image.embed_dim = im.value("embed_dim", c.image.embed_dim);
        }
        if (j.contains("text")) {
            const auto& tx = j.at("text");
            c.text.vocab = tx.value("vocab", c.text.vocab);
            c.text.token_dim = tx.value("token_dim", c.text.token_dim);
            c.text.mlp_hidden = tx.value("mlp_hidden", c.text.mlp_hidden);
            c.text.embed_dim = tx.value("embed_dim", c.image.embed_dim);
        } else {
            c.text.embed_dim = c.image.embed_dim;
        }
        c.init_tau = j.value("init_tau", c.init_tau);
        c.tau_min = j.value("tau_min", c.tau_min);
        c.tau_max = j.value("tau_max", c.tau_max);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::SchemaViolation, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

namespace detail {

template <class T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) {
        v = static_cast<T>(rng.normal() * stddev);
    }
    t.set_requires_grad(true);
    return t;
}

template <class T>
Tensor<T> zero_init(Shape shape) {
    Tensor<T> t(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

/// x [N, in] -> x W + b
template <class T>
Var<T> linear(Tape<T>& tape, Var<T> x, Tensor<T>& w, Tensor<T>& b) {
    return ad::add(ad::matmul(x, tape.param(w)), tape.param(b));
}

} // namespace detail

/// [conv3d k3 s2 p1 -> relu] per channel stage, global mean pool, linear to
/// d, L2 normalisation.
template <class T>
class ImageEncoder {
public:
    ImageEncoder() = default;

    ImageEncoder(const ImageEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        std::size_t cin = 1;
        for (auto cout : cfg.channels) {
            conv_w_.push_back(detail::normal_init<T>(Shape{cout, cin, 3, 3, 3}, std::sqrt(2.0 / double(cin * 27)), rng));
            conv_b_.push_back(detail::zero_init<T>(Shape{cout}));
            cin = cout;
        }
        proj_w_ = detail::normal_init<T>(Shape{cin, cfg.embed_dim}, std::sqrt(1.0 / double(cin)), rng);
        proj_b_ = detail::zero_init<T>(Shape{cfg.embed_dim});
    }

    const ImageEncoderConfig& config() const { return cfg_; }

    Var<T> forward(Tape<T>& tape, Var<T> volumes) {
        const auto& s = volumes.shape();
        const std::size_t side = cfg_.input_side;
        require(s.size() == 5 && s[1] == 1 && s[2] == side && s[3] == side && s[4] == side, ErrorCode::ShapeMismatch,
                "image encoder expects [B,1," + std::to_string(side) + "^3], got " + ad::shape_str(s));
        Var<T> h = volumes;
        for (std::size_t i = 0; i < conv_w_.size(); ++i) {
            h = ad::relu(ad::conv3d(h, tape.param(conv_w_[i]), std::optional<Var<T>>(tape.param(conv_b_[i])), 2, 1));
        }
        h = ad::mean_pool(h);
        return ad::l2_normalize(detail::linear(tape, h, proj_w_, proj_b_));
    }

    void collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        for (std::size_t i = 0; i < conv_w_.size(); ++i) {
            out.push_back({prefix + "conv" + std::to_string(i) + ".weight", &conv_w_[i], true});
            out.push_back({prefix + "conv" + std::to_string(i) + ".bias", &conv_b_[i], false});
        }
        out.push_back({prefix + "proj.weight", &proj_w_, true});
        out.push_back({prefix + "proj.bias", &proj_b_, false});
    }

private:
    ImageEncoderConfig cfg_;
    std::vector<Tensor<T>> conv_w_, conv_b_;
    Tensor<T> proj_w_, proj_b_;
};

/// Token embedding lookup, mean over tokens, two relu layers, linear to d,
/// L2 normalisation.
template <class T>
class TextEncoder {
public:
    TextEncoder() = default;

    TextEncoder(const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        embedding_ = detail::normal_init<T>(Shape{cfg.vocab, cfg.token_dim}, 1.0, rng);
        fc1_w_ = detail::normal_init<T>(Shape{cfg.token_dim, cfg.mlp_hidden}, std::sqrt(2.0 / double(cfg.token_dim)), rng);
        fc1_b_ = detail::zero_init<T>(Shape{cfg.mlp_hidden});
        fc2_w_ = detail::normal_init<T>(Shape{cfg.mlp_hidden, cfg.mlp_hidden}, std::sqrt(2.0 / double(cfg.mlp_hidden)), rng);
        fc2_b_ = detail::zero_init<T>(Shape{cfg.mlp_hidden});
        proj_w_ = detail::normal_init<T>(Shape{cfg.mlp_hidden, cfg.embed_dim}, std::sqrt(1.0 / double(cfg.mlp_hidden)), rng);
        proj_b_ = detail::zero_init<T>(Shape{cfg.embed_dim});
    }

    const TextEncoderConfig& config() const { return cfg_; }

    Var<T> forward(Tape<T>& tape, const std::vector<TokenSequence>& batch) {
        require(!batch.empty(), ErrorCode::EmptySequence, "empty text batch");
        std::vector<std::uint32_t> ids;
        std::vector<std::size_t> offsets{0};
        for (const auto& seq : batch) {
            require(!seq.tokens.empty(), ErrorCode::EmptySequence, "token sequence is empty");
            for (auto id : seq.tokens) {
                require(id < cfg_.vocab, ErrorCode::ShapeMismatch, "token id outside the encoder vocabulary");
            }
            ids.insert(ids.end(), seq.tokens.begin(), seq.tokens.end());
            offsets.push_back(ids.size());
        }
        Var<T> h = ad::segment_mean(ad::gather_rows(tape.param(embedding_), std::move(ids)), std::move(offsets));
        h = ad::relu(detail::linear(tape, h, fc1_w_, fc1_b_));
        h = ad::relu(detail::linear(tape, h, fc2_w_, fc2_b_));
        return ad::l2_normalize(detail::linear(tape, h, proj_w_, proj_b_));
    }

    void collect(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        out.push_back({prefix + "embedding", &embedding_, true});
        out.push_back({prefix + "fc1.weight", &fc1_w_, true});
        out.push_back({prefix + "fc1.bias", &fc1_b_, false});
        out.push_back({prefix + "fc2.weight", &fc2_w_, true});
        out.push_back({prefix + "fc2.bias", &fc2_b_, false});
        out.push_back({prefix + "proj.weight", &proj_w_, true});
        out.push_back({prefix + "proj.bias", &proj_b_, false});
    }

private:
    TextEncoderConfig cfg_;
    Tensor<T> embedding_, fc1_w_, fc1_b_, fc2_w_, fc2_b_, proj_w_, proj_b_;
};

/// tau = exp(-log_inv_tau), kept inside [tau_min, tau_max].
template <class T>
struct Temperature {
    Tensor<T> log_inv_tau;
    double tau_min = 0.01;
    double tau_max = 1.0;

    Temperature() = default;

    Temperature(double init_tau, double lo, double hi) : tau_min(lo), tau_max(hi) {
        log_inv_tau = Tensor<T>::scalar(static_cast<T>(-std::log(init_tau)));
        log_inv_tau.set_requires_grad(true);
        clamp();
    }

    double tau() const { return std::exp(-static_cast<double>(log_inv_tau[0])); }

    void clamp() {
        const double lo = -std::log(tau_max);
        const double hi = -std::log(tau_min);
        log_inv_tau[0] = static_cast<T>(std::clamp(static_cast<double>(log_inv_tau[0]), lo, hi));
    }

    /// 1/tau as a differentiable scalar.
    Var<T> inverse(Tape<T>& tape) { return ad::exp(tape.param(log_inv_tau)); }
};

/// B paired volumes and sentences with their contrast-group labels.
template <class T>
struct Batch {
    Tensor<T> volumes; // [B,1,S,S,S]
    std::vector<TokenSequence> tokens;
    std::vector<int> labels;
    std::vector<std::string> volume_ids;
};

template <class T>
class MrClipModel {
public:
    MrClipModel() = default;

    MrClipModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        image = ImageEncoder<T>(cfg.image, rng);
        text = TextEncoder<T>(cfg.text, rng);
        temperature = Temperature<T>(cfg.init_tau, cfg.tau_min, cfg.tau_max);
    }

    const ModelConfig& config() const { return cfg_; }

    std::vector<ParamRef<T>> parameters() {
        std::vector<ParamRef<T>> out;
        image.collect(out, "image.");
        text.collect(out, "text.");
        out.push_back({"temperature.log_inv_tau", &temperature.log_inv_tau, false});
        return out;
    }

    std::vector<ad::NamedTensor> to_named_tensors() {
        std::vector<ad::NamedTensor> out;
        for (auto& p : parameters()) {
            out.push_back({p.name, p.tensor->template cast<float>()});
        }
        return out;
    }

    void load_named_tensors(const std::vector<ad::NamedTensor>& tensors) {
        std::map<std::string, const Tensor<float>*> by_name;
        for (const auto& nt : tensors) {
            by_name[nt.name] = &nt.tensor;
        }
        auto params = parameters();
        require(by_name.size() == params.size(), ErrorCode::BadFormat, "checkpoint tensor count does not match model");
        for (auto& p : params) {
            const auto it = by_name.find(p.name);
            require(it != by_name.end(), ErrorCode::BadFormat, "checkpoint is missing '" + p.name + "'");
            require(it->second->shape() == p.tensor->shape(), ErrorCode::ShapeMismatch,
                    "checkpoint shape mismatch for '" + p.name + "'");
            const auto src = it->second->data();
            auto dst = p.tensor->data();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] = static_cast<T>(src[i]);
            }
        }
    }

    ImageEncoder<T> image;
    TextEncoder<T> text;
    Temperature<T> temperature;

private:
    ModelConfig cfg_;
};

/// Embeddings without gradient bookkeeping, encoded in chunks.
template <class T>
Tensor<T> encode_images(ImageEncoder<T>& enc, const Tensor<T>& volumes, std::size_t chunk = 32) {
    require(volumes.rank() == 5, ErrorCode::ShapeMismatch, "volumes must be [B,1,S,S,S]");
    const std::size_t n = volumes.dim(0);
    const std::size_t per = volumes.size() / n;
    const std::size_t d = enc.config().embed_dim;
    Tensor<T> out(Shape{n, d});
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t m = std::min(chunk, n - start);
        Shape shape = volumes.shape();
        shape[0] = m;
        std::vector<T> slice(volumes.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                             volumes.data().begin() + static_cast<std::ptrdiff_t>((start + m) * per));
        Tape<T> tape;
        const auto emb = enc.forward(tape, tape.constant(Tensor<T>(std::move(shape), std::move(slice))));
        std::copy(emb.value().data().begin(), emb.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * d));
    }
    return out;
}

template <class T>
Tensor<T> encode_texts(TextEncoder<T>& enc, const std::vector<TokenSequence>& seqs, std::size_t chunk = 256) {
    require(!seqs.empty(), ErrorCode::EmptySequence, "no sequences to encode");
    const std::size_t d = enc.config().embed_dim;
    Tensor<T> out(Shape{seqs.size(), d});
    for (std::size_t start = 0; start < seqs.size(); start += chunk) {
        const std::size_t m = std::min(chunk, seqs.size() - start);
        std::vector<TokenSequence> part(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                        seqs.begin() + static_cast<std::ptrdiff_t>(start + m));
        Tape<T> tape;
        const auto emb = enc.forward(tape, part);
        std::copy(emb.value().data().begin(), emb.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * d));
    }
    return out;
}

} // namespace mrclip
