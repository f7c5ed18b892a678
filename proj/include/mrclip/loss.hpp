#pragma once

// Multi-positive supervised contrastive loss between two embedding sets.
//
// For anchor i against candidates c_1..c_B:
//   L_i = -1/|P(i)| * sum_{p in P(i)} log softmax_j(z_i . c_j / tau)[p]
// with P(i) = { j : label_j == label_i } and the softmax over all B
// candidates of the other modality. The directional losses are averaged
// over anchors, and the symmetric loss is the mean of both directions.

#include "mrclip/autodiff.hpp"
#include "mrclip/error.hpp"

#include <vector>

namespace mrclip {

inline std::vector<std::vector<std::size_t>> positive_sets(const std::vector<int>& labels) {
    std::vector<std::vector<std::size_t>> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] == labels[i]) {
                out[i].push_back(j);
            }
        }
    }
    return out;
}

/// `inv_tau` is a [1] tensor holding 1/tau (trainable or constant).
template <class T>
ad::Var<T> supcon_directional(ad::Var<T> anchors, ad::Var<T> candidates, const std::vector<int>& labels,
                              ad::Var<T> inv_tau) {
    const auto& a = anchors.shape();
    const auto& c = candidates.shape();
    require(a.size() == 2 && a == c, ErrorCode::ShapeMismatch,
            "anchors " + ad::shape_str(a) + " vs candidates " + ad::shape_str(c));
    require(labels.size() == a[0], ErrorCode::ShapeMismatch, "one label per anchor required");
    require(a[0] >= 2, ErrorCode::ShapeMismatch, "batch needs at least two pairs");
    const auto logits = ad::scale(ad::matmul(anchors, ad::transpose(candidates)), inv_tau);
    const auto picked = ad::gather_log_prob(ad::log_softmax(logits, 1), positive_sets(labels));
    return ad::scale(ad::mean(picked), T(-1));
}

template <class T>
ad::Var<T> supcon_directional(ad::Var<T> anchors, ad::Var<T> candidates, const std::vector<int>& labels, double tau) {
    require(tau > 0.0, ErrorCode::InvalidArgument, "temperature must be positive");
    auto inv = anchors.tape->constant(ad::Tensor<T>::scalar(static_cast<T>(1.0 / tau)));
    return supcon_directional(anchors, candidates, labels, inv);
}

template <class T>
ad::Var<T> supcon_symmetric(ad::Var<T> img, ad::Var<T> txt, const std::vector<int>& labels, ad::Var<T> inv_tau) {
    const auto forward = supcon_directional(img, txt, labels, inv_tau);
    const auto backward = supcon_directional(txt, img, labels, inv_tau);
    return ad::scale(ad::add(forward, backward), T(0.5));
}

template <class T>
ad::Var<T> supcon_symmetric(ad::Var<T> img, ad::Var<T> txt, const std::vector<int>& labels, double tau) {
    require(tau > 0.0, ErrorCode::InvalidArgument, "temperature must be positive");
    auto inv = img.tape->constant(ad::Tensor<T>::scalar(static_cast<T>(1.0 / tau)));
    return supcon_symmetric(img, txt, labels, inv);
}

} // namespace mrclip
