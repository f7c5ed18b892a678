#pragma once

// Randomized finite-difference cases: one per differentiable op plus the
// contrastive loss and a miniature end-to-end model.

#include "oracles.hpp"

#include "mrclip/encoders.hpp"
#include "mrclip/loss.hpp"
#include "mrclip/templating.hpp"

#include <memory>
#include <string>

namespace mrclip::testing {

template <class T>
struct GradCase {
    std::string name;
    std::vector<std::shared_ptr<ad::Tensor<T>>> owned;
    std::shared_ptr<MrClipModel<T>> model;
    std::vector<ad::Tensor<T>*> params;
    LossBuilder<T> build;
};

template <class T>
class CaseFactory {
public:
    explicit CaseFactory(std::uint64_t seed) : rng_(seed) {}

    std::size_t dim(std::size_t lo, std::size_t hi) { return lo + rng_.below(hi - lo + 1); }

    ad::Tensor<T>* tensor(GradCase<T>& c, ad::Shape shape, double away_from_zero = 0.0) {
        auto t = std::make_shared<ad::Tensor<T>>(std::move(shape));
        for (auto& v : t->data()) {
            double x = rng_.normal();
            if (std::abs(x) < away_from_zero) {
                x = x < 0 ? x - away_from_zero : x + away_from_zero;
            }
            v = static_cast<T>(x);
        }
        c.owned.push_back(t);
        c.params.push_back(t.get());
        return t.get();
    }

    // Contract an arbitrary output against fixed random weights so every
    // output element contributes to the scalar.
    ad::Tensor<T> weights_like(const ad::Shape& shape) {
        ad::Tensor<T> w(shape);
        for (auto& v : w.data()) {
            v = static_cast<T>(rng_.normal());
        }
        return w;
    }

    Rng& rng() { return rng_; }

private:
    Rng rng_;
};

template <class T>
ad::Var<T> project(ad::Tape<T>& tape, ad::Var<T> v, const ad::Tensor<T>& w) {
    return ad::sum(ad::mul(v, tape.constant(w)));
}

template <class T>
std::vector<GradCase<T>> make_grad_cases(std::uint64_t seed) {
    using ad::Shape;
    using ad::Tape;
    using ad::Var;
    CaseFactory<T> f(seed);
    std::vector<GradCase<T>> cases;

    auto unary = [&](const std::string& name, Shape shape, double away, auto op) {
        GradCase<T> c;
        c.name = name;
        auto* x = f.tensor(c, shape, away);
        Tape<T> shape_tape;
        const auto probe = f.weights_like(op(shape_tape.param(*x)).shape());
        c.build = [x, probe, op](Tape<T>& t) { return project(t, op(t.param(*x)), probe); };
        cases.push_back(std::move(c));
    };
    auto binary = [&](const std::string& name, Shape sa, Shape sb, auto op) {
        GradCase<T> c;
        c.name = name;
        auto* a = f.tensor(c, sa);
        auto* b = f.tensor(c, sb);
        Tape<T> shape_tape;
        const auto probe = f.weights_like(op(shape_tape.param(*a), shape_tape.param(*b)).shape());
        c.build = [a, b, probe, op](Tape<T>& t) { return project(t, op(t.param(*a), t.param(*b)), probe); };
        cases.push_back(std::move(c));
    };

    const std::size_t n = f.dim(2, 5), m = f.dim(2, 5), k = f.dim(2, 5);
    binary("add", {n, m}, {n, m}, [](Var<T> a, Var<T> b) { return ad::add(a, b); });
    binary("add_bias", {n, m}, {m}, [](Var<T> a, Var<T> b) { return ad::add(a, b); });
    binary("mul", {n, m}, {n, m}, [](Var<T> a, Var<T> b) { return ad::mul(a, b); });
    binary("scale", {n, m}, {1}, [](Var<T> a, Var<T> b) { return ad::scale(a, b); });
    binary("matmul", {n, k}, {k, m}, [](Var<T> a, Var<T> b) { return ad::matmul(a, b); });
    unary("relu", {n, m}, 0.05, [](Var<T> x) { return ad::relu(x); });
    unary("exp", {n, m}, 0.0, [](Var<T> x) { return ad::exp(x); });
    unary("scale_const", {n, m}, 0.0, [](Var<T> x) { return ad::scale(x, T(-1.7)); });
    unary("transpose", {n, m}, 0.0, [](Var<T> x) { return ad::transpose(x); });
    unary("mean_pool", {2, 3, f.dim(2, 4), f.dim(2, 4), f.dim(2, 4)}, 0.0, [](Var<T> x) { return ad::mean_pool(x); });
    unary("l2_normalize", {n, m + 1}, 0.0, [](Var<T> x) { return ad::l2_normalize(x); });
    unary("log_softmax_rows", {n, m}, 0.0, [](Var<T> x) { return ad::log_softmax(x, 1); });
    unary("log_softmax_cols", {n, m}, 0.0, [](Var<T> x) { return ad::log_softmax(x, 0); });
    unary("mean", {n, m}, 0.0, [](Var<T> x) { return ad::mean(x); });
    unary("sum", {n, m}, 0.0, [](Var<T> x) { return ad::sum(x); });

    {
        std::vector<std::uint32_t> ids;
        const std::size_t vocab = f.dim(3, 6);
        for (std::size_t i = 0; i < vocab + 3; ++i) {
            ids.push_back(static_cast<std::uint32_t>(f.rng().below(vocab)));
        }
        unary("gather_rows", {vocab, m}, 0.0, [ids](Var<T> x) { return ad::gather_rows(x, ids); });
    }
    {
        const std::size_t rows = f.dim(4, 8);
        std::vector<std::size_t> offsets{0};
        while (offsets.back() < rows) {
            offsets.push_back(std::min(rows, offsets.back() + f.dim(1, 3)));
        }
        unary("segment_mean", {rows, m}, 0.0, [offsets](Var<T> x) { return ad::segment_mean(x, offsets); });
    }
    {
        std::vector<std::vector<std::size_t>> targets(n);
        for (auto& row : targets) {
            row.push_back(f.rng().below(m));
            if (f.rng().uniform() < 0.5) {
                row.push_back(f.rng().below(m));
            }
        }
        unary("gather_log_prob", {n, m}, 0.0, [targets](Var<T> x) { return ad::gather_log_prob(x, targets); });
    }
    {
        const std::size_t stride = f.dim(1, 2), pad = f.dim(0, 1), side = f.dim(3, 5);
        GradCase<T> c;
        c.name = "conv3d";
        auto* x = f.tensor(c, {2, 2, side, side, side});
        auto* w = f.tensor(c, {f.dim(1, 3), 2, 3, 3, 3});
        auto* b = f.tensor(c, {w->dim(0)});
        Tape<T> shape_tape;
        const auto probe = f.weights_like(
            ad::conv3d(shape_tape.param(*x), shape_tape.param(*w), std::optional{shape_tape.param(*b)}, stride, pad).shape());
        c.build = [=](Tape<T>& t) {
            return project(t, ad::conv3d(t.param(*x), t.param(*w), std::optional{t.param(*b)}, stride, pad), probe);
        };
        cases.push_back(std::move(c));
    }
    {
        const std::size_t batch = f.dim(3, 6), d = f.dim(2, 4);
        GradCase<T> c;
        c.name = "supcon_symmetric";
        auto* img = f.tensor(c, {batch, d});
        auto* txt = f.tensor(c, {batch, d});
        auto* log_inv_tau = f.tensor(c, {1});
        std::vector<int> labels;
        for (std::size_t i = 0; i < batch; ++i) {
            labels.push_back(static_cast<int>(f.rng().below(3)));
        }
        c.build = [=](Tape<T>& t) {
            return supcon_symmetric(ad::l2_normalize(t.param(*img)), ad::l2_normalize(t.param(*txt)), labels,
                                    ad::exp(t.param(*log_inv_tau)));
        };
        cases.push_back(std::move(c));
    }
    {
        ModelConfig cfg;
        cfg.image.input_side = 8;
        cfg.image.channels = {2, 3};
        cfg.image.embed_dim = 8;
        cfg.text.vocab = 32;
        cfg.text.token_dim = 4;
        cfg.text.mlp_hidden = 12;
        cfg.text.embed_dim = 8;
        cfg.init_tau = 0.5;
        GradCase<T> c;
        c.name = "end_to_end";
        c.model = std::make_shared<MrClipModel<T>>(cfg, seed);
        // Biases start at zero; jitter everything so no unit sits on a ReLU kink.
        for (auto& p : c.model->parameters()) {
            for (auto& v : p.tensor->data()) {
                v += static_cast<T>(0.1 * f.rng().normal());
            }
            c.params.push_back(p.tensor);
        }
        const std::size_t batch = 4;
        auto volumes = f.weights_like({batch, 1, 8, 8, 8});
        std::vector<TokenSequence> tokens;
        for (std::size_t i = 0; i < batch; ++i) {
            TokenSequence s;
            s.vocab = 32;
            for (std::size_t j = 0; j < 2 + i; ++j) {
                s.tokens.push_back(static_cast<std::uint32_t>(f.rng().below(32)));
            }
            tokens.push_back(std::move(s));
        }
        const std::vector<int> labels{0, 1, 0, 2};
        auto* model = c.model.get();
        c.build = [=](Tape<T>& t) {
            const auto zi = model->image.forward(t, t.constant(volumes));
            const auto zt = model->text.forward(t, tokens);
            return supcon_symmetric(zi, zt, labels, model->temperature.inverse(t));
        };
        cases.push_back(std::move(c));
    }
    return cases;
}

} // namespace mrclip::testing
