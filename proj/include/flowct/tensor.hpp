#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowct {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    bool from_op = false;  // produced by a recorded op (non-leaf)
};

// Dense row-major array with an optional gradient. Copies share storage;
// use clone() for a deep copy. Values are treated as immutable once the
// producing op returns; only leaf parameters are updated in place (by the
// optimizer).
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    bool defined() const { return static_cast<bool>(s_); }

    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::int64_t dim(std::size_t axis) const { return s_->shape.at(axis); }
    std::int64_t numel() const { return static_cast<std::int64_t>(s_->values.size()); }

    std::span<const T> values() const { return s_->values; }
    std::span<T> mutable_values() { return s_->values; }
    T item() const;
    T at(std::int64_t flat_index) const { return s_->values.at(static_cast<std::size_t>(flat_index)); }

    bool requires_grad() const { return s_->requires_grad; }
    Tensor& set_requires_grad(bool on = true);

    bool has_grad() const { return !s_->grad.empty(); }
    std::span<const T> grad() const { return s_->grad; }
    std::span<T> mutable_grad();  // allocates a zero gradient if absent
    void zero_grad();
    void clear_grad() { s_->grad.clear(); }

    // Deep copy of values, detached from any recorded graph.
    Tensor clone() const;

    const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }
    explicit Tensor(std::shared_ptr<TensorStorage<T>> storage) : s_(std::move(storage)) {}

private:
    std::shared_ptr<TensorStorage<T>> s_;
};

// Records executed primitives for reverse-mode differentiation. One tape is
// active per thread.
template <typename T>
class Tape {
public:
    using StoragePtr = std::shared_ptr<TensorStorage<T>>;
    // Receives the gradient of the op output and accumulates into the
    // gradients of its inputs.
    using Adjoint = std::function<void(const std::vector<T>& out_grad)>;

    struct Entry {
        std::string_view op;
        std::vector<StoragePtr> inputs;
        StoragePtr output;
        Adjoint adjoint;
    };

    static Tape& active();

    void record(std::string_view op, std::vector<StoragePtr> inputs, StoragePtr output, Adjoint adjoint);
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear() { entries_.clear(); }

private:
    std::vector<Entry> entries_;
};

class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Finite-value checks on every op output. On by default in debug builds.
bool numeric_checks_enabled();
void set_numeric_checks(bool on);

// Populates grad() of every requires_grad leaf reachable from `loss` and
// consumes the active tape. Throws if loss is not a scalar or was not
// produced by a recorded op (which is also what a second call on the same
// graph hits: double-backward is unsupported).
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

} // namespace flowct
