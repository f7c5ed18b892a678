#pragma once

// Tape-based reverse-mode differentiation over Tensor<T>.
//
// Every op appends one node holding its forward value and a closure that
// pushes the node's gradient into its inputs. Nodes are appended in
// evaluation order, so walking the list backwards is a valid topological
// order. A tape belongs to one thread.

#include "mrclip/error.hpp"
#include "mrclip/tensor.hpp"
#include "mrclip/util.hpp"

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mrclip::ad {

enum class OpKind {
    Constant,
    Parameter,
    Add,
    Mul,
    MatMul,
    Transpose,
    Conv3d,
    Relu,
    MeanPool,
    Gather,
    SegmentMean,
    L2Normalize,
    Scale,
    ScaleConst,
    Exp,
    LogSoftmax,
    GatherLogProb,
    Sum,
    Mean,
};

inline const char* op_name(OpKind k) {
    switch (k) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Conv3d: return "conv3d";
    case OpKind::Relu: return "relu";
    case OpKind::MeanPool: return "mean_pool";
    case OpKind::Gather: return "gather";
    case OpKind::SegmentMean: return "segment_mean";
    case OpKind::L2Normalize: return "l2_normalize";
    case OpKind::Scale: return "scale";
    case OpKind::ScaleConst: return "scale_const";
    case OpKind::Exp: return "exp";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::GatherLogProb: return "gather_log_prob";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    }
    return "?";
}

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->node(id).value; }
    const Shape& shape() const { return value().shape(); }
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Tensor<T> value;
        std::vector<T> grad;
        bool needs_grad = false;
        Tensor<T>* param = nullptr;
        Backward backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value) {
        value.set_requires_grad(false);
        return push(OpKind::Constant, {}, std::move(value), nullptr);
    }

    /// Leaf bound to a parameter; backward() adds into param.grad().
    Var<T> param(Tensor<T>& p) {
        Tensor<T> copy(p.shape(), std::vector<T>(p.data().begin(), p.data().end()));
        Node n{OpKind::Parameter, {}, std::move(copy), {}, p.requires_grad(), &p, nullptr};
        nodes_.push_back(std::move(n));
        return Var<T>{this, nodes_.size() - 1};
    }

    Var<T> push(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, Backward backward) {
        if (!value.all_finite()) {
            fail(ErrorCode::NonFiniteValue, std::string("non-finite output from ") + op_name(kind));
        }
        bool needs = false;
        for (auto i : inputs) {
            needs = needs || nodes_[i].needs_grad;
        }
        nodes_.push_back(Node{kind, std::move(inputs), std::move(value), {}, needs, nullptr, std::move(backward)});
        return Var<T>{this, nodes_.size() - 1};
    }

    const Node& node(std::size_t id) const { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

    /// Gradient buffer of a node, zero-initialised on first use.
    std::span<T> grad(std::size_t id) {
        auto& g = nodes_[id].grad;
        if (g.empty()) {
            g.assign(nodes_[id].value.size(), T(0));
        }
        return g;
    }

    void backward(Var<T> loss) {
        require(loss.tape == this, ErrorCode::InvalidArgument, "loss belongs to another tape");
        require(loss.value().size() == 1, ErrorCode::NonScalarLoss,
                "loss has shape " + shape_str(loss.value().shape()));
        require(std::isfinite(loss.value()[0]), ErrorCode::NonFiniteValue, "loss is not finite");
        grad(loss.id)[0] += T(1);
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.grad.empty()) {
                continue;
            }
            if (n.kind == OpKind::Parameter) {
                auto dst = n.param->grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    require(std::isfinite(n.grad[i]), ErrorCode::NonFiniteValue, "non-finite parameter gradient");
                    dst[i] += n.grad[i];
                }
            } else if (n.backward) {
                n.backward(*this, id);
            }
        }
    }

private:
    std::deque<Node> nodes_;
};

namespace detail {

template <class T>
std::span<const T> gout(Tape<T>& t, std::size_t self) {
    return t.node(self).grad;
}

/// Output positions `o` with 0 <= o*stride + k - pad < in, clipped to [0, out).
inline void valid_range(std::size_t k, std::size_t stride, std::size_t pad, std::size_t in, std::size_t out,
                        std::size_t& lo, std::size_t& hi) {
    const auto ki = static_cast<std::ptrdiff_t>(k);
    const auto p = static_cast<std::ptrdiff_t>(pad);
    const auto s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t first = 0;
    if (p > ki) {
        first = (p - ki + s - 1) / s;
    }
    std::ptrdiff_t last = (static_cast<std::ptrdiff_t>(in) - 1 + p - ki);
    last = last < 0 ? -1 : last / s;
    last = std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(out) - 1);
    lo = static_cast<std::size_t>(first);
    hi = last < first ? lo : static_cast<std::size_t>(last + 1);
}

} // namespace detail

// ----------------------------------------------------------------------------
// elementwise

/// a + b, where b has a's shape or is a vector broadcast over a's last axis.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    const bool same = av.shape() == bv.shape();
    const bool bias = bv.rank() == 1 && av.rank() >= 1 && bv.dim(0) == av.shape().back();
    require(same || bias, ErrorCode::ShapeMismatch, "add " + shape_str(av.shape()) + " + " + shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    const std::size_t m = bv.size();
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] + bv[same ? i : i % m];
    }
    return a.tape->push(OpKind::Add, {a.id, b.id}, std::move(out), [a = a.id, b = b.id, same, m](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        if (t.needs_grad(a)) {
            auto ga = t.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (t.needs_grad(b)) {
            auto gb = t.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[same ? i : i % m] += g[i];
            }
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require(av.shape() == bv.shape(), ErrorCode::ShapeMismatch,
            "mul " + shape_str(av.shape()) + " * " + shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return a.tape->push(OpKind::Mul, {a.id, b.id}, std::move(out), [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto av = t.node(a).value.data();
        const auto bv = t.node(b).value.data();
        if (t.needs_grad(a)) {
            auto ga = t.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * bv[i];
            }
        }
        if (t.needs_grad(b)) {
            auto gb = t.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * av[i];
            }
        }
    });
}

template <class T>
Var<T> relu(Var<T> x) {
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] > T(0) ? xv[i] : T(0);
    }
    return x.tape->push(OpKind::Relu, {x.id}, std::move(out), [x = x.id](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto xv = t.node(x).value.data();
        auto gx = t.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > T(0)) {
                gx[i] += g[i];
            }
        }
    });
}

template <class T>
Var<T> exp(Var<T> x) {
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = std::exp(xv[i]);
    }
    return x.tape->push(OpKind::Exp, {x.id}, std::move(out), [x = x.id](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto y = t.node(self).value.data();
        auto gx = t.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * y[i];
        }
    });
}

/// x * s for a trainable scalar s (shape [1]).
template <class T>
Var<T> scale(Var<T> x, Var<T> s) {
    require(s.value().size() == 1, ErrorCode::ShapeMismatch, "scale factor must be a scalar");
    const auto& xv = x.value();
    const T k = s.value()[0];
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] * k;
    }
    return x.tape->push(OpKind::Scale, {x.id, s.id}, std::move(out), [x = x.id, s = s.id](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto xv = t.node(x).value.data();
        const T k = t.node(s).value[0];
        if (t.needs_grad(x)) {
            auto gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * k;
            }
        }
        if (t.needs_grad(s)) {
            T acc = T(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                acc += g[i] * xv[i];
            }
            t.grad(s)[0] += acc;
        }
    });
}

template <class T>
Var<T> scale(Var<T> x, T k) {
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] * k;
    }
    return x.tape->push(OpKind::ScaleConst, {x.id}, std::move(out), [x = x.id, k](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        auto gx = t.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * k;
        }
    });
}

// ----------------------------------------------------------------------------
// linear algebra

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), ErrorCode::ShapeMismatch,
            "matmul " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    Tensor<T> out(Shape{n, m});
    for (std::size_t i = 0; i < n; ++i) {
        T* row = &out[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = av[i * k + p];
            const T* brow = &bv.data()[p * m];
            for (std::size_t j = 0; j < m; ++j) {
                row[j] += aip * brow[j];
            }
        }
    }
    return a.tape->push(OpKind::MatMul, {a.id, b.id}, std::move(out), [a = a.id, b = b.id, n, k, m](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto av = t.node(a).value.data();
        const auto bv = t.node(b).value.data();
        if (t.needs_grad(a)) {
            auto ga = t.grad(a);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = T(0);
                    for (std::size_t j = 0; j < m; ++j) {
                        acc += g[i * m + j] * bv[p * m + j];
                    }
                    ga[i * k + p] += acc;
                }
            }
        }
        if (t.needs_grad(b)) {
            auto gb = t.grad(b);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const T aip = av[i * k + p];
                    for (std::size_t j = 0; j < m; ++j) {
                        gb[p * m + j] += aip * g[i * m + j];
                    }
                }
            }
        }
    });
}

template <class T>
Var<T> transpose(Var<T> a) {
    const auto& av = a.value();
    require(av.rank() == 2, ErrorCode::ShapeMismatch, "transpose needs a matrix");
    const std::size_t n = av.dim(0), m = av.dim(1);
    Tensor<T> out(Shape{m, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out[j * n + i] = av[i * m + j];
        }
    }
    return a.tape->push(OpKind::Transpose, {a.id}, std::move(out), [a = a.id, n, m](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        auto ga = t.grad(a);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                ga[i * m + j] += g[j * n + i];
            }
        }
    });
}

// ----------------------------------------------------------------------------
// 3-D convolution, direct loops
//
// x [B, Cin, D, H, W], w [Cout, Cin, K, K, K], bias [Cout]; zero padding.
// Forward is split over (batch, out-channel), the input gradient over
// (batch, in-channel), the kernel gradient over (out-channel, in-channel);
// every output element has a single writer with a fixed summation order, so
// results are bitwise independent of the thread count.

struct Conv3dGeometry {
    std::size_t batch, cin, cout, k, stride, pad;
    std::size_t d, h, w;    // input
    std::size_t od, oh, ow; // output

    std::size_t in_volume() const { return d * h * w; }
    std::size_t out_volume() const { return od * oh * ow; }
};

template <class T>
Var<T> conv3d(Var<T> x, Var<T> w, std::optional<Var<T>> bias, std::size_t stride, std::size_t pad) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    require(xv.rank() == 5 && wv.rank() == 5 && wv.dim(1) == xv.dim(1) && wv.dim(2) == wv.dim(3) &&
                wv.dim(3) == wv.dim(4) && stride >= 1,
            ErrorCode::ShapeMismatch, "conv3d " + shape_str(xv.shape()) + " * " + shape_str(wv.shape()));
    Conv3dGeometry geo{xv.dim(0), xv.dim(1), wv.dim(0), wv.dim(2), stride, pad, xv.dim(2), xv.dim(3), xv.dim(4), 0, 0, 0};
    for (auto [in, out] : {std::pair{geo.d, &geo.od}, std::pair{geo.h, &geo.oh}, std::pair{geo.w, &geo.ow}}) {
        require(in + 2 * pad >= geo.k, ErrorCode::ShapeMismatch, "conv3d kernel larger than padded input");
        *out = (in + 2 * pad - geo.k) / stride + 1;
    }
    if (bias) {
        require(bias->value().rank() == 1 && bias->value().dim(0) == geo.cout, ErrorCode::ShapeMismatch,
                "conv3d bias shape");
    }
    Tensor<T> out(Shape{geo.batch, geo.cout, geo.od, geo.oh, geo.ow});

    const std::size_t kk = geo.k;
    parallel_for(geo.batch * geo.cout, [&](std::size_t job) {
        const std::size_t b = job / geo.cout, co = job % geo.cout;
        T* o = &out[(b * geo.cout + co) * geo.out_volume()];
        const T b0 = bias ? bias->value()[co] : T(0);
        std::fill(o, o + geo.out_volume(), b0);
        for (std::size_t ci = 0; ci < geo.cin; ++ci) {
            const T* in = &xv.data()[(b * geo.cin + ci) * geo.in_volume()];
            const T* wk = &wv.data()[(co * geo.cin + ci) * kk * kk * kk];
            for (std::size_t kd = 0; kd < kk; ++kd) {
                std::size_t d0, d1;
                detail::valid_range(kd, stride, pad, geo.d, geo.od, d0, d1);
                for (std::size_t kh = 0; kh < kk; ++kh) {
                    std::size_t h0, h1;
                    detail::valid_range(kh, stride, pad, geo.h, geo.oh, h0, h1);
                    for (std::size_t kw = 0; kw < kk; ++kw) {
                        std::size_t w0, w1;
                        detail::valid_range(kw, stride, pad, geo.w, geo.ow, w0, w1);
                        const T wt = wk[(kd * kk + kh) * kk + kw];
                        for (std::size_t od = d0; od < d1; ++od) {
                            const std::size_t id = od * stride + kd - pad;
                            for (std::size_t oh = h0; oh < h1; ++oh) {
                                const std::size_t ih = oh * stride + kh - pad;
                                T* orow = o + (od * geo.oh + oh) * geo.ow;
                                const T* irow = in + (id * geo.h + ih) * geo.w;
                                for (std::size_t ow = w0; ow < w1; ++ow) {
                                    orow[ow] += wt * irow[ow * stride + kw - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    std::vector<std::size_t> inputs{x.id, w.id};
    if (bias) {
        inputs.push_back(bias->id);
    }
    const std::optional<std::size_t> bias_id = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
    return x.tape->push(OpKind::Conv3d, std::move(inputs), std::move(out), [x = x.id, w = w.id, bias_id, geo](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto xv = t.node(x).value.data();
        const auto wv = t.node(w).value.data();
        const std::size_t kk = geo.k, s = geo.stride, p = geo.pad;
        const std::size_t kvol = kk * kk * kk;

        if (t.needs_grad(x)) {
            auto gx = t.grad(x);
            parallel_for(geo.batch * geo.cin, [&](std::size_t job) {
                const std::size_t b = job / geo.cin, ci = job % geo.cin;
                T* dx = &gx[(b * geo.cin + ci) * geo.in_volume()];
                for (std::size_t co = 0; co < geo.cout; ++co) {
                    const T* go = &g[(b * geo.cout + co) * geo.out_volume()];
                    const T* wk = &wv[(co * geo.cin + ci) * kvol];
                    for (std::size_t kd = 0; kd < kk; ++kd) {
                        std::size_t d0, d1;
                        detail::valid_range(kd, s, p, geo.d, geo.od, d0, d1);
                        for (std::size_t kh = 0; kh < kk; ++kh) {
                            std::size_t h0, h1;
                            detail::valid_range(kh, s, p, geo.h, geo.oh, h0, h1);
                            for (std::size_t kw = 0; kw < kk; ++kw) {
                                std::size_t w0, w1;
                                detail::valid_range(kw, s, p, geo.w, geo.ow, w0, w1);
                                const T wt = wk[(kd * kk + kh) * kk + kw];
                                for (std::size_t od = d0; od < d1; ++od) {
                                    const std::size_t id = od * s + kd - p;
                                    for (std::size_t oh = h0; oh < h1; ++oh) {
                                        const std::size_t ih = oh * s + kh - p;
                                        const T* grow = go + (od * geo.oh + oh) * geo.ow;
                                        T* drow = dx + (id * geo.h + ih) * geo.w;
                                        for (std::size_t ow = w0; ow < w1; ++ow) {
                                            drow[ow * s + kw - p] += wt * grow[ow];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }

        if (t.needs_grad(w)) {
            auto gw = t.grad(w);
            parallel_for(geo.cout * geo.cin, [&](std::size_t job) {
                const std::size_t co = job / geo.cin, ci = job % geo.cin;
                T* dw = &gw[(co * geo.cin + ci) * kvol];
                for (std::size_t kd = 0; kd < kk; ++kd) {
                    std::size_t d0, d1;
                    detail::valid_range(kd, s, p, geo.d, geo.od, d0, d1);
                    for (std::size_t kh = 0; kh < kk; ++kh) {
                        std::size_t h0, h1;
                        detail::valid_range(kh, s, p, geo.h, geo.oh, h0, h1);
                        for (std::size_t kw = 0; kw < kk; ++kw) {
                            std::size_t w0, w1;
                            detail::valid_range(kw, s, p, geo.w, geo.ow, w0, w1);
                            T acc = T(0);
                            for (std::size_t b = 0; b < geo.batch; ++b) {
                                const T* in = &xv[(b * geo.cin + ci) * geo.in_volume()];
                                const T* go = &g[(b * geo.cout + co) * geo.out_volume()];
                                for (std::size_t od = d0; od < d1; ++od) {
                                    const std::size_t id = od * s + kd - p;
                                    for (std::size_t oh = h0; oh < h1; ++oh) {
                                        const std::size_t ih = oh * s + kh - p;
                                        const T* grow = go + (od * geo.oh + oh) * geo.ow;
                                        const T* irow = in + (id * geo.h + ih) * geo.w;
                                        for (std::size_t ow = w0; ow < w1; ++ow) {
                                            acc += irow[ow * s + kw - p] * grow[ow];
                                        }
                                    }
                                }
                            }
                            dw[(kd * kk + kh) * kk + kw] += acc;
                        }
                    }
                }
            });
        }

        if (bias_id && t.needs_grad(*bias_id)) {
            auto gb = t.grad(*bias_id);
            for (std::size_t co = 0; co < geo.cout; ++co) {
                T acc = T(0);
                for (std::size_t b = 0; b < geo.batch; ++b) {
                    const T* go = &g[(b * geo.cout + co) * geo.out_volume()];
                    for (std::size_t i = 0; i < geo.out_volume(); ++i) {
                        acc += go[i];
                    }
                }
                gb[co] += acc;
            }
        }
    });
}

/// Mean over all axes after the first two: [B, C, ...] -> [B, C].
template <class T>
Var<T> mean_pool(Var<T> x) {
    const auto& xv = x.value();
    require(xv.rank() >= 3, ErrorCode::ShapeMismatch, "mean_pool needs spatial axes");
    const std::size_t rows = xv.dim(0) * xv.dim(1);
    const std::size_t span = xv.size() / rows;
    Tensor<T> out(Shape{xv.dim(0), xv.dim(1)});
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = T(0);
        for (std::size_t i = 0; i < span; ++i) {
            acc += xv[r * span + i];
        }
        out[r] = acc / static_cast<T>(span);
    }
    return x.tape->push(OpKind::MeanPool, {x.id}, std::move(out), [x = x.id, rows, span](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        auto gx = t.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            const T v = g[r] / static_cast<T>(span);
            for (std::size_t i = 0; i < span; ++i) {
                gx[r * span + i] += v;
            }
        }
    });
}

// ----------------------------------------------------------------------------
// embeddings

/// Rows of table [V, D] selected by ids -> [N, D].
template <class T>
Var<T> gather_rows(Var<T> table, std::vector<std::uint32_t> ids) {
    const auto& tv = table.value();
    require(tv.rank() == 2 && !ids.empty(), ErrorCode::ShapeMismatch, "gather_rows needs a matrix and ids");
    const std::size_t v = tv.dim(0), d = tv.dim(1);
    Tensor<T> out(Shape{ids.size(), d});
    for (std::size_t n = 0; n < ids.size(); ++n) {
        require(ids[n] < v, ErrorCode::ShapeMismatch, "token id " + std::to_string(ids[n]) + " out of vocabulary");
        std::copy_n(&tv.data()[ids[n] * d], d, &out[n * d]);
    }
    return table.tape->push(OpKind::Gather, {table.id}, std::move(out), [table = table.id, ids = std::move(ids), d](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        auto gt = t.grad(table);
        for (std::size_t n = 0; n < ids.size(); ++n) {
            for (std::size_t j = 0; j < d; ++j) {
                gt[ids[n] * d + j] += g[n * d + j];
            }
        }
    });
}

/// Mean of consecutive row segments: rows [offsets[b], offsets[b+1]) of x
/// [N, D] become row b of the [B, D] output.
template <class T>
Var<T> segment_mean(Var<T> x, std::vector<std::size_t> offsets) {
    const auto& xv = x.value();
    require(xv.rank() == 2 && offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == xv.dim(0),
            ErrorCode::ShapeMismatch, "segment_mean offsets do not cover the input");
    const std::size_t d = xv.dim(1), segments = offsets.size() - 1;
    Tensor<T> out(Shape{segments, d});
    for (std::size_t b = 0; b < segments; ++b) {
        require(offsets[b + 1] > offsets[b], ErrorCode::EmptySequence, "segment " + std::to_string(b) + " is empty");
        const T inv = T(1) / static_cast<T>(offsets[b + 1] - offsets[b]);
        for (std::size_t n = offsets[b]; n < offsets[b + 1]; ++n) {
            for (std::size_t j = 0; j < d; ++j) {
                out[b * d + j] += xv[n * d + j];
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            out[b * d + j] *= inv;
        }
    }
    return x.tape->push(OpKind::SegmentMean, {x.id}, std::move(out), [x = x.id, offsets = std::move(offsets), d](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        auto gx = t.grad(x);
        for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
            const T inv = T(1) / static_cast<T>(offsets[b + 1] - offsets[b]);
            for (std::size_t n = offsets[b]; n < offsets[b + 1]; ++n) {
                for (std::size_t j = 0; j < d; ++j) {
                    gx[n * d + j] += g[b * d + j] * inv;
                }
            }
        }
    });
}

// ----------------------------------------------------------------------------
// normalisation and softmax

/// Rows divided by their L2 norm. A zero row stays zero and passes no gradient.
template <class T>
Var<T> l2_normalize(Var<T> x) {
    const auto& xv = x.value();
    require(xv.rank() == 2, ErrorCode::ShapeMismatch, "l2_normalize needs a matrix");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor<T> out(xv.shape());
    std::vector<T> norms(n, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        T ss = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            ss += xv[i * d + j] * xv[i * d + j];
        }
        norms[i] = std::sqrt(ss);
        if (norms[i] > T(0)) {
            for (std::size_t j = 0; j < d; ++j) {
                out[i * d + j] = xv[i * d + j] / norms[i];
            }
        }
    }
    return x.tape->push(OpKind::L2Normalize, {x.id}, std::move(out), [x = x.id, norms = std::move(norms), d](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto y = t.node(self).value.data();
        auto gx = t.grad(x);
        for (std::size_t i = 0; i < norms.size(); ++i) {
            if (norms[i] <= T(0)) {
                continue;
            }
            T dot = T(0);
            for (std::size_t j = 0; j < d; ++j) {
                dot += y[i * d + j] * g[i * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
                gx[i * d + j] += (g[i * d + j] - y[i * d + j] * dot) / norms[i];
            }
        }
    });
}

/// log_softmax of a matrix along `axis` (0 or 1), max-shifted.
template <class T>
Var<T> log_softmax(Var<T> x, std::size_t axis = 1) {
    const auto& xv = x.value();
    require(xv.rank() == 2 && axis < 2, ErrorCode::ShapeMismatch, "log_softmax needs a matrix and axis 0 or 1");
    const std::size_t rows = xv.dim(0), cols = xv.dim(1);
    const std::size_t lanes = axis == 1 ? rows : cols;
    const std::size_t len = axis == 1 ? cols : rows;
    const std::size_t stride = axis == 1 ? 1 : cols;
    auto base = [=](std::size_t lane) { return axis == 1 ? lane * cols : lane; };
    Tensor<T> out(xv.shape());
    for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t b = base(l);
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < len; ++i) {
            mx = std::max(mx, xv[b + i * stride]);
        }
        T se = T(0);
        for (std::size_t i = 0; i < len; ++i) {
            se += std::exp(xv[b + i * stride] - mx);
        }
        const T lse = mx + std::log(se);
        for (std::size_t i = 0; i < len; ++i) {
            out[b + i * stride] = xv[b + i * stride] - lse;
        }
    }
    return x.tape->push(OpKind::LogSoftmax, {x.id}, std::move(out), [x = x.id, lanes, len, stride, base](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        const auto y = t.node(self).value.data();
        auto gx = t.grad(x);
        for (std::size_t l = 0; l < lanes; ++l) {
            const std::size_t b = base(l);
            T gs = T(0);
            for (std::size_t i = 0; i < len; ++i) {
                gs += g[b + i * stride];
            }
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t k = b + i * stride;
                gx[k] += g[k] - std::exp(y[k]) * gs;
            }
        }
    });
}

/// Row i -> mean of logp[i, j] over j in targets[i]. [N, M] -> [N].
template <class T>
Var<T> gather_log_prob(Var<T> logp, std::vector<std::vector<std::size_t>> targets) {
    const auto& lv = logp.value();
    require(lv.rank() == 2 && targets.size() == lv.dim(0), ErrorCode::ShapeMismatch,
            "gather_log_prob needs one target list per row");
    const std::size_t m = lv.dim(1);
    Tensor<T> out(Shape{targets.size()});
    for (std::size_t i = 0; i < targets.size(); ++i) {
        require(!targets[i].empty(), ErrorCode::NoPositive, "row " + std::to_string(i) + " has no target");
        T acc = T(0);
        for (auto j : targets[i]) {
            require(j < m, ErrorCode::ShapeMismatch, "target index out of range");
            acc += lv[i * m + j];
        }
        out[i] = acc / static_cast<T>(targets[i].size());
    }
    return logp.tape->push(OpKind::GatherLogProb, {logp.id}, std::move(out), [logp = logp.id, targets = std::move(targets), m](Tape<T>& t, std::size_t self) {
        const auto g = detail::gout(t, self);
        auto gl = t.grad(logp);
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const T w = g[i] / static_cast<T>(targets[i].size());
            for (auto j : targets[i]) {
                gl[i * m + j] += w;
            }
        }
    });
}

// ----------------------------------------------------------------------------
// reductions

template <class T>
Var<T> sum(Var<T> x) {
    const auto& xv = x.value();
    T acc = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        acc += xv[i];
    }
    return x.tape->push(OpKind::Sum, {x.id}, Tensor<T>::scalar(acc), [x = x.id](Tape<T>& t, std::size_t self) {
        const T g = t.node(self).grad[0];
        for (auto& v : t.grad(x)) {
            v += g;
        }
    });
}

template <class T>
Var<T> mean(Var<T> x) {
    const auto& xv = x.value();
    T acc = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        acc += xv[i];
    }
    const T n = static_cast<T>(xv.size());
    return x.tape->push(OpKind::Mean, {x.id}, Tensor<T>::scalar(acc / n), [x = x.id, n](Tape<T>& t, std::size_t self) {
        const T g = t.node(self).grad[0] / n;
        for (auto& v : t.grad(x)) {
            v += g;
        }
    });
}

} // namespace mrclip::ad
