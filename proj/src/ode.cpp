#include "flowct/ode.hpp"

#include <cmath>

#include "flowct/error.hpp"

namespace flowct::ode {

std::string_view method_name(Method m) {
    switch (m) {
        case Method::euler: return "euler";
        case Method::midpoint: return "midpoint";
        case Method::rk4: return "rk4";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    if (name == "euler") return Method::euler;
    if (name == "midpoint") return Method::midpoint;
    if (name == "rk4") return Method::rk4;
    throw ConfigError("unknown integrator method '" + std::string(name) + "' (expected euler, midpoint or rk4)");
}

int evaluations_per_step(Method m) {
    switch (m) {
        case Method::euler: return 1;
        case Method::midpoint: return 2;
        case Method::rk4: return 4;
    }
    return 0;
}

void IntegratorConfig::validate() const {
    if (steps < 1) throw ConfigError("integrator steps must be >= 1, got " + std::to_string(steps));
}

namespace {

template <typename T>
Tensor<T> eval(const VelocityFn<T>& v, const Tensor<T>& x, double t) {
    auto out = v(x, t);
    if (!out.defined() || out.shape() != x.shape()) {
        throw ShapeError("velocity field returned shape " +
                         (out.defined() ? shape_str(out.shape()) : std::string("<undefined>")) + " for state " +
                         shape_str(x.shape()));
    }
    return out;
}

// x + sum_j c_j * k_j
template <typename T>
Tensor<T> combine(const Tensor<T>& x, std::initializer_list<std::pair<double, const Tensor<T>*>> terms) {
    const auto xv = x.values();
    std::vector<T> out(xv.begin(), xv.end());
    for (const auto& [c, k] : terms) {
        const T ct = static_cast<T>(c);
        const auto kv = k->values();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += ct * kv[i];
    }
    return Tensor<T>(x.shape(), std::move(out));
}

constexpr double kTimeSlack = 1e-12;

} // namespace

template <typename T>
Tensor<T> step(Method method, const VelocityFn<T>& v, const Tensor<T>& x, double t, double h) {
    if (!(h > 0.0)) throw DomainError("step size must be positive, got " + std::to_string(h));
    if (t < -kTimeSlack || t + h > 1.0 + kTimeSlack) {
        throw DomainError("step [" + std::to_string(t) + ", " + std::to_string(t + h) + "] leaves [0, 1]");
    }
    switch (method) {
        case Method::euler: {
            const auto k1 = eval(v, x, t);
            return combine<T>(x, {{h, &k1}});
        }
        case Method::midpoint: {
            const auto k1 = eval(v, x, t);
            const auto k2 = eval(v, combine<T>(x, {{0.5 * h, &k1}}), t + 0.5 * h);
            return combine<T>(x, {{h, &k2}});
        }
        case Method::rk4: {
            const auto k1 = eval(v, x, t);
            const auto k2 = eval(v, combine<T>(x, {{0.5 * h, &k1}}), t + 0.5 * h);
            const auto k3 = eval(v, combine<T>(x, {{0.5 * h, &k2}}), t + 0.5 * h);
            const auto k4 = eval(v, combine<T>(x, {{h, &k3}}), t + h);
            return combine<T>(x, {{h / 6.0, &k1}, {h / 3.0, &k2}, {h / 3.0, &k3}, {h / 6.0, &k4}});
        }
    }
    throw ConfigError("unknown integrator method");
}

template <typename T>
Tensor<T> integrate(const VelocityFn<T>& v, const Tensor<T>& x0, const IntegratorConfig& cfg) {
    cfg.validate();
    Tensor<T> x = x0;
    for (int i = 0; i < cfg.steps; ++i) {
        const double t0 = static_cast<double>(i) / cfg.steps;
        const double t1 = (i + 1 == cfg.steps) ? 1.0 : static_cast<double>(i + 1) / cfg.steps;
        x = step(cfg.method, v, x, t0, t1 - t0);
        for (auto value : x.values()) {
            if (!std::isfinite(value)) {
                throw NumericalError("integration produced a non-finite state at step " + std::to_string(i) +
                                     " (t = " + std::to_string(t1) + ")");
            }
        }
    }
    return x;
}

template Tensor<float> step(Method, const VelocityFn<float>&, const Tensor<float>&, double, double);
template Tensor<double> step(Method, const VelocityFn<double>&, const Tensor<double>&, double, double);
template Tensor<float> integrate(const VelocityFn<float>&, const Tensor<float>&, const IntegratorConfig&);
template Tensor<double> integrate(const VelocityFn<double>&, const Tensor<double>&, const IntegratorConfig&);

} // namespace flowct::ode
