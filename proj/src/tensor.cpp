#include "flowct/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "flowct/error.hpp"

namespace flowct {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : s_(std::make_shared<TensorStorage<T>>()) {
    const auto n = shape_numel(shape);
    s_->shape = std::move(shape);
    s_->values.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<TensorStorage<T>>()) {
    const auto n = shape_numel(shape);
    if (static_cast<std::int64_t>(values.size()) != n) {
        throw ShapeError("tensor " + shape_str(shape) + " needs " + std::to_string(n) + " values, got " +
                         std::to_string(values.size()));
    }
    s_->shape = std::move(shape);
    s_->values = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
    if (s_->values.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(s_->shape));
    }
    return s_->values[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    s_->requires_grad = on;
    return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
    return s_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return Tensor(s_->shape, s_->values);
}

namespace {
thread_local bool grad_mode_enabled = true;
#ifdef NDEBUG
bool numeric_checks_flag = false;
#else
bool numeric_checks_flag = true;
#endif
} // namespace

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

bool numeric_checks_enabled() { return numeric_checks_flag; }
void set_numeric_checks(bool on) { numeric_checks_flag = on; }

template <typename T>
Tape<T>& Tape<T>::active() {
    thread_local Tape<T> tape;
    return tape;
}

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<StoragePtr> inputs, StoragePtr output, Adjoint adjoint) {
    output->from_op = true;
    output->requires_grad = true;
    entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(adjoint)});
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    auto& tape = Tape<T>::active();
    const auto* root = loss.storage().get();
    const bool recorded = std::any_of(tape.entries().begin(), tape.entries().end(),
                                      [root](const auto& e) { return e.output.get() == root; });
    if (!recorded) {
        throw Error("backward(): loss was not produced by a recorded op; the tape is empty or was already "
                    "consumed (double-backward is not supported)");
    }

    loss.storage()->grad.assign(1, T(1));
    const auto& entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->adjoint(it->output->grad);
    }
    // Intermediate gradients are not part of the result.
    for (const auto& e : entries) {
        if (e.output.get() != root) e.output->grad.clear();
    }
    tape.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

} // namespace flowct
