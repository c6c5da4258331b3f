#pragma once

#include <cstdint>

#include "flowct/tensor.hpp"

namespace flowct::flow {

// Linear noise-to-data path x_t = t*x1 + sigma_t*eps with
// sigma_t = 1 - (1 - sigma_min)*t, and the weights of the L1 + MSE objective.
struct FlowPathConfig {
    double sigma_min = 1e-5;
    double lambda_l1 = 1.0;
    double lambda_mse = 1.0;

    void validate() const;
};

template <typename T>
struct FlowSample {
    double t = 0.0;
    Tensor<T> x_t;
    Tensor<T> u_t;
    Tensor<T> epsilon;
};

template <typename T>
struct FmLoss {
    Tensor<T> total;  // differentiable scalar
    double l1 = 0.0;
    double mse = 0.0;
};

// Throws DomainError for t outside [0, 1].
double sigma_t(double t, const FlowPathConfig& cfg);

// u_t(x_t | x1) = (x1 - (1 - sigma_min) x_t) / (1 - (1 - sigma_min) t)
template <typename T>
Tensor<T> target_velocity(const Tensor<T>& x_t, double t, const Tensor<T>& x1, const FlowPathConfig& cfg);

template <typename T>
FlowSample<T> sample_path(const Tensor<T>& x1, const Tensor<T>& epsilon, double t, const FlowPathConfig& cfg);

// lambda_l1 * mean|v - u| + lambda_mse * mean (v - u)^2
template <typename T>
FmLoss<T> fm_loss(const Tensor<T>& v_pred, const Tensor<T>& u_target, const FlowPathConfig& cfg);

// t ~ U[0, 1) and eps ~ N(0, I) from the stream keyed by `seed`.
template <typename T>
FlowSample<T> draw_training_tuple(const Tensor<T>& x1, std::uint64_t seed, const FlowPathConfig& cfg);

} // namespace flowct::flow
