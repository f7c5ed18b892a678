#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary. None of these reuse library code paths.

#include "mrclip/autodiff.hpp"
#include "mrclip/util.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace mrclip::testing {

using Matrix = std::vector<std::vector<double>>;

inline Matrix random_unit_rows(Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, std::vector<double>(d));
    for (auto& row : m) {
        double ss = 0.0;
        for (auto& v : row) {
            v = rng.normal();
            ss += v * v;
        }
        for (auto& v : row) {
            v /= std::sqrt(ss);
        }
    }
    return m;
}

template <class T>
ad::Tensor<T> to_tensor(const Matrix& m) {
    std::vector<T> flat;
    for (const auto& row : m) {
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return ad::Tensor<T>({m.size(), m[0].size()}, std::vector<T>(flat.begin(), flat.end()));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        s += a[k] * b[k];
    }
    return s;
}

// Brute-force multi-positive loss, one anchor and one positive at a time.
inline double brute_supcon(const Matrix& anchors, const Matrix& cands, const std::vector<int>& labels, double tau) {
    const std::size_t b = anchors.size();
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            denom += std::exp(dot(anchors[i], cands[j]) / tau);
        }
        double li = 0.0;
        int positives = 0;
        for (std::size_t p = 0; p < b; ++p) {
            if (labels[p] != labels[i]) {
                continue;
            }
            li += -std::log(std::exp(dot(anchors[i], cands[p]) / tau) / denom);
            ++positives;
        }
        total += li / positives;
    }
    return total / static_cast<double>(b);
}

inline double brute_supcon_symmetric(const Matrix& img, const Matrix& txt, const std::vector<int>& labels, double tau) {
    return 0.5 * (brute_supcon(img, txt, labels, tau) + brute_supcon(txt, img, labels, tau));
}

// Single-positive InfoNCE, positive on the diagonal, via log-sum-exp.
inline double infonce(const Matrix& anchors, const Matrix& cands, double tau) {
    double total = 0.0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        std::vector<double> s;
        for (const auto& c : cands) {
            s.push_back(dot(anchors[i], c) / tau);
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double acc = 0.0;
        for (double v : s) {
            acc += std::exp(v - mx);
        }
        total += (mx + std::log(acc)) - s[i];
    }
    return total / static_cast<double>(anchors.size());
}

// Probability that a random positive outscores a random negative, ties
// counted half, by enumerating every pair.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!positive[i]) {
            continue;
        }
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (positive[j]) {
                continue;
            }
            pairs += 1.0;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / pairs;
}

// Direct convolution over x [B,Ci,D,H,W] and w [Co,Ci,K,K,K].
inline std::vector<double> naive_conv3d(const std::vector<double>& x, const std::vector<double>& w,
                                        const std::vector<double>& bias, std::size_t batch, std::size_t ci,
                                        std::size_t co, std::size_t side, std::size_t k, std::size_t stride,
                                        std::size_t pad, std::size_t& out_side) {
    out_side = (side + 2 * pad - k) / stride + 1;
    const std::size_t o = out_side;
    std::vector<double> y(batch * co * o * o * o, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < co; ++c)
            for (std::size_t z = 0; z < o; ++z)
                for (std::size_t r = 0; r < o; ++r)
                    for (std::size_t q = 0; q < o; ++q) {
                        double acc = bias.empty() ? 0.0 : bias[c];
                        for (std::size_t i = 0; i < ci; ++i)
                            for (std::size_t kz = 0; kz < k; ++kz)
                                for (std::size_t kr = 0; kr < k; ++kr)
                                    for (std::size_t kq = 0; kq < k; ++kq) {
                                        const long iz = static_cast<long>(z * stride + kz) - static_cast<long>(pad);
                                        const long ir = static_cast<long>(r * stride + kr) - static_cast<long>(pad);
                                        const long iq = static_cast<long>(q * stride + kq) - static_cast<long>(pad);
                                        const long s = static_cast<long>(side);
                                        if (iz < 0 || ir < 0 || iq < 0 || iz >= s || ir >= s || iq >= s) continue;
                                        acc += x[(((b * ci + i) * side + iz) * side + ir) * side + iq] *
                                               w[(((c * ci + i) * k + kz) * k + kr) * k + kq];
                                    }
                        y[(((b * co + c) * o + z) * o + r) * o + q] = acc;
                    }
    return y;
}

// Largest relative discrepancy between reverse-mode gradients and central
// differences over every element of every parameter. `build` binds the
// parameters to the tape itself; `floor` keeps the ratio meaningful for
// gradients near zero.
template <class T>
using LossBuilder = std::function<ad::Var<T>(ad::Tape<T>&)>;

template <class T>
double max_gradient_error(const std::vector<ad::Tensor<T>*>& params, const LossBuilder<T>& build, double h,
                          double floor) {
    auto evaluate = [&]() {
        ad::Tape<T> tape;
        return static_cast<double>(build(tape).value().item());
    };
    for (auto* p : params) {
        p->set_requires_grad(true);
        p->zero_grad();
    }
    {
        ad::Tape<T> tape;
        tape.backward(build(tape));
    }
    double worst = 0.0;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const T saved = (*p)[i];
            const T hi = static_cast<T>(saved + h);
            const T lo = static_cast<T>(saved - h);
            (*p)[i] = hi;
            const double up = evaluate();
            (*p)[i] = lo;
            const double down = evaluate();
            (*p)[i] = saved;
            const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double analytic = p->grad()[i];
            const double scale = std::max({std::abs(numeric), std::abs(analytic), floor});
            worst = std::max(worst, std::abs(numeric - analytic) / scale);
        }
    }
    return worst;
}

} // namespace mrclip::testing
