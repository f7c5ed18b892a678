#pragma once

#include "mrclip/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace mrclip::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "," : "") + std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major array. Parameters set requires_grad and own a gradient
/// buffer of the same shape; everything else leaves grad empty.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_shape();
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        require(data_.size() == shape_size(shape_), ErrorCode::ShapeMismatch,
                "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    T item() const {
        require(data_.size() == 1, ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    bool requires_grad() const { return requires_grad_; }

    void set_requires_grad(bool on) {
        requires_grad_ = on;
        if (on && grad_.size() != data_.size()) {
            grad_.assign(data_.size(), T(0));
        }
        if (!on) {
            grad_.clear();
        }
    }

    bool has_grad() const { return !grad_.empty(); }
    std::span<T> grad() { return grad_; }
    std::span<const T> grad() const { return grad_; }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        Tensor<U> t(shape_, std::move(out));
        t.set_requires_grad(requires_grad_);
        return t;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

private:
    void check_shape() const {
        for (auto d : shape_) {
            require(d > 0, ErrorCode::ShapeMismatch, "zero-sized dimension in " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
    std::vector<T> grad_;
};

} // namespace mrclip::ad
