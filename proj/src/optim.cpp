#include "flowct/optim.hpp"

#include <cmath>

#include "flowct/error.hpp"

namespace flowct::train {

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros(const std::vector<net::Parameter<T>>& params, AdamHyper hyper) {
    OptimizerState s;
    s.hyper = hyper;
    for (const auto& p : params) {
        s.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
        s.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
    }
    return s;
}

template <typename T>
void adamw_step(std::vector<net::Parameter<T>>& params, OptimizerState<T>& state, double lr, double weight_decay) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adamw_step: optimizer state holds " + std::to_string(state.m.size()) + " buffers for " +
                         std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto n = static_cast<std::size_t>(params[i].tensor.numel());
        if (state.m[i].size() != n || state.v[i].size() != n) {
            throw ShapeError("adamw_step: moment buffers do not match parameter " + params[i].name);
        }
        if (!params[i].tensor.has_grad()) continue;
        for (T g : params[i].tensor.grad()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericalError("non-finite gradient in parameter " + params[i].name);
            }
        }
    }

    state.step += 1;
    const auto& h = state.hyper;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& tensor = params[i].tensor;
        auto values = tensor.mutable_values();
        const bool has_grad = tensor.has_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            const double g = has_grad ? static_cast<double>(tensor.grad()[j]) : 0.0;
            const double mj = h.beta1 * static_cast<double>(m[j]) + (1.0 - h.beta1) * g;
            const double vj = h.beta2 * static_cast<double>(v[j]) + (1.0 - h.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double m_hat = mj / bc1;
            const double v_hat = vj / bc2;
            const double p = static_cast<double>(values[j]);
            values[j] = static_cast<T>(p - (lr * (m_hat / (std::sqrt(v_hat) + h.eps)) + lr * weight_decay * p));
        }
    }
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step<float>(std::vector<net::Parameter<float>>&, OptimizerState<float>&, double, double);
template void adamw_step<double>(std::vector<net::Parameter<double>>&, OptimizerState<double>&, double, double);

} // namespace flowct::train
