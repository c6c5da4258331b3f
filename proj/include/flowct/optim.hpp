#pragma once

#include <cstdint>
#include <vector>

#include "flowct/velocity_net.hpp"

namespace flowct::train {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
    AdamHyper hyper;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;  // one buffer per parameter, same order
    std::vector<std::vector<T>> v;

    // Zeroed moments shaped like `params`.
    static OptimizerState zeros(const std::vector<net::Parameter<T>>& params, AdamHyper hyper = {});
};

// AdamW with bias-corrected moments and decoupled decay:
//   p <- p - (lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * p)
// Parameters without an allocated gradient are treated as having zero
// gradient. Throws NumericalError naming the parameter on a non-finite
// gradient, before anything is modified.
template <typename T>
void adamw_step(std::vector<net::Parameter<T>>& params, OptimizerState<T>& state, double lr, double weight_decay);

} // namespace flowct::train
