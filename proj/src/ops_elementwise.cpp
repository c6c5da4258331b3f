#include <cmath>

#include "flowct/ops.hpp"
#include "ops_detail.hpp"

namespace flowct::ops {

using detail::finish;
using detail::grad_of;
using detail::should_record;

namespace {

// Shared shape for unary elementwise ops: y = f(x), dy/dx = df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(std::string_view name, const Tensor<T>& x, F f, DF df) {
    const auto xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    auto y = finish(name, x.shape(), std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record(name, {x.storage()}, y.storage(),
                                 [xs = x.storage(), ys = y.storage().get(), df](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     for (std::size_t i = 0; i < g.size(); ++i) {
                                         gx[i] += g[i] * df(xs->values[i], ys->values[i]);
                                     }
                                 });
    }
    return y;
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    auto y = finish("add", a.shape(), std::move(out));
    if (should_record<T>({&a, &b})) {
        Tape<T>::active().record("add", {a.storage(), b.storage()}, y.storage(),
                                 [as = a.storage(), bs = b.storage()](const std::vector<T>& g) {
                                     for (auto* s : {as.get(), bs.get()}) {
                                         if (!s->requires_grad) continue;
                                         auto& gs = grad_of(*s);
                                         for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("sub", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    auto y = finish("sub", a.shape(), std::move(out));
    if (should_record<T>({&a, &b})) {
        Tape<T>::active().record("sub", {a.storage(), b.storage()}, y.storage(),
                                 [as = a.storage(), bs = b.storage()](const std::vector<T>& g) {
                                     if (as->requires_grad) {
                                         auto& ga = grad_of(*as);
                                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                     }
                                     if (bs->requires_grad) {
                                         auto& gb = grad_of(*bs);
                                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mul", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    auto y = finish("mul", a.shape(), std::move(out));
    if (should_record<T>({&a, &b})) {
        Tape<T>::active().record("mul", {a.storage(), b.storage()}, y.storage(),
                                 [as = a.storage(), bs = b.storage()](const std::vector<T>& g) {
                                     if (as->requires_grad) {
                                         auto& ga = grad_of(*as);
                                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs->values[i];
                                     }
                                     if (bs->requires_grad) {
                                         auto& gb = grad_of(*bs);
                                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as->values[i];
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
    const T f = static_cast<T>(factor);
    return unary<T>(
        "scale", a, [f](T v) { return v * f; }, [f](T, T) { return f; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return unary<T>(
        "silu", x, [](T v) { return v / (T(1) + std::exp(-v)); },
        [](T v, T) {
            const T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary<T>(
        "abs", x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return unary<T>(
        "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0.0;
    for (auto v : x.values()) acc += static_cast<double>(v);
    auto y = finish<T>("sum", Shape{}, {static_cast<T>(acc)});
    if (should_record<T>({&x})) {
        Tape<T>::active().record("sum", {x.storage()}, y.storage(), [xs = x.storage()](const std::vector<T>& g) {
            auto& gx = grad_of(*xs);
            for (auto& v : gx) v += g[0];
        });
    }
    return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
    double acc = 0.0;
    for (auto v : x.values()) acc += static_cast<double>(v);
    const double n = static_cast<double>(x.numel());
    auto y = finish<T>("mean", Shape{}, {static_cast<T>(acc / n)});
    if (should_record<T>({&x})) {
        Tape<T>::active().record("mean", {x.storage()}, y.storage(),
                                 [xs = x.storage(), n](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     const T share = static_cast<T>(static_cast<double>(g[0]) / n);
                                     for (auto& v : gx) v += share;
                                 });
    }
    return y;
}

#define FLOWCT_INSTANTIATE(T)                                       \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> scale(const Tensor<T>&, double);             \
    template Tensor<T> relu(const Tensor<T>&);                      \
    template Tensor<T> silu(const Tensor<T>&);                      \
    template Tensor<T> abs(const Tensor<T>&);                       \
    template Tensor<T> square(const Tensor<T>&);                    \
    template Tensor<T> sum(const Tensor<T>&);                       \
    template Tensor<T> mean(const Tensor<T>&);

FLOWCT_INSTANTIATE(float)
FLOWCT_INSTANTIATE(double)
#undef FLOWCT_INSTANTIATE

} // namespace flowct::ops
