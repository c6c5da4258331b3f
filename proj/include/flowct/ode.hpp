#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "flowct/tensor.hpp"

namespace flowct::ode {

enum class Method { euler, midpoint, rk4 };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);  // throws ConfigError
int evaluations_per_step(Method m);

struct IntegratorConfig {
    Method method = Method::rk4;
    int steps = 32;

    void validate() const;
};

template <typename T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>& x, double t)>;

// One explicit step of size h from (x, t). Requires h > 0 and t, t + h in [0, 1].
template <typename T>
Tensor<T> step(Method method, const VelocityFn<T>& v, const Tensor<T>& x, double t, double h);

// Solves dx/dt = v(x, t) from t = 0 to t = 1 on a uniform grid of cfg.steps
// steps. Grid times are i/steps so the final time is exactly 1. Throws
// NumericalError naming the step if the state becomes non-finite.
template <typename T>
Tensor<T> integrate(const VelocityFn<T>& v, const Tensor<T>& x0, const IntegratorConfig& cfg);

} // namespace flowct::ode
