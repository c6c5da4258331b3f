#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "flowct/error.hpp"
#include "flowct/tensor.hpp"

namespace flowct::ops::detail {

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
    if (!GradMode::enabled()) return false;
    for (const auto* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
std::vector<T>& grad_of(TensorStorage<T>& s) {
    if (s.grad.empty()) s.grad.assign(s.values.size(), T(0));
    return s.grad;
}

template <typename T>
Tensor<T> finish(std::string_view op, Shape shape, std::vector<T> values) {
    if (numeric_checks_enabled()) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i])) {
                throw NumericalError(std::string(op) + ": non-finite output at flat index " + std::to_string(i));
            }
        }
    }
    return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
void require_same_shape(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

inline void require_rank(std::string_view op, std::string_view what, const Shape& s, std::size_t rank) {
    if (s.size() != rank) {
        throw ShapeError(std::string(op) + ": " + std::string(what) + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(s));
    }
}

inline void require_axis(std::string_view op, std::string_view axis, std::int64_t got, std::int64_t want) {
    if (got != want) {
        throw ShapeError(std::string(op) + ": axis " + std::string(axis) + " has extent " + std::to_string(got) +
                         ", expected " + std::to_string(want));
    }
}

} // namespace flowct::ops::detail
