#include "flowct/flow.hpp"

#include <string>

#include "flowct/error.hpp"
#include "flowct/ops.hpp"
#include "flowct/rng.hpp"

namespace flowct::flow {

void FlowPathConfig::validate() const {
    if (!(sigma_min > 0.0 && sigma_min < 1.0)) {
        throw ConfigError("sigma_min must lie in (0, 1), got " + std::to_string(sigma_min));
    }
    if (lambda_l1 < 0.0 || lambda_mse < 0.0 || (lambda_l1 == 0.0 && lambda_mse == 0.0)) {
        throw ConfigError("loss weights must be >= 0 and not both zero");
    }
}

namespace {
void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("t must lie in [0, 1], got " + std::to_string(t));
}

template <typename T>
void check_same(const char* what, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}
} // namespace

double sigma_t(double t, const FlowPathConfig& cfg) {
    check_time(t);
    return 1.0 - (1.0 - cfg.sigma_min) * t;
}

template <typename T>
Tensor<T> target_velocity(const Tensor<T>& x_t, double t, const Tensor<T>& x1, const FlowPathConfig& cfg) {
    check_same("target_velocity", x_t, x1);
    const double denom = sigma_t(t, cfg);
    const double a = 1.0 - cfg.sigma_min;
    const auto xv = x_t.values();
    const auto tv = x1.values();
    std::vector<T> u(xv.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = static_cast<T>((static_cast<double>(tv[i]) - a * static_cast<double>(xv[i])) / denom);
    }
    return Tensor<T>(x_t.shape(), std::move(u));
}

template <typename T>
FlowSample<T> sample_path(const Tensor<T>& x1, const Tensor<T>& epsilon, double t, const FlowPathConfig& cfg) {
    check_same("sample_path", x1, epsilon);
    const double s = sigma_t(t, cfg);
    const auto tv = x1.values();
    const auto ev = epsilon.values();
    std::vector<T> xt(tv.size());
    for (std::size_t i = 0; i < xt.size(); ++i) {
        xt[i] = static_cast<T>(t * static_cast<double>(tv[i]) + s * static_cast<double>(ev[i]));
    }
    FlowSample<T> out;
    out.t = t;
    out.x_t = Tensor<T>(x1.shape(), std::move(xt));
    out.u_t = target_velocity(out.x_t, t, x1, cfg);
    out.epsilon = epsilon;
    return out;
}

template <typename T>
FmLoss<T> fm_loss(const Tensor<T>& v_pred, const Tensor<T>& u_target, const FlowPathConfig& cfg) {
    check_same("fm_loss", v_pred, u_target);
    const auto diff = ops::sub(v_pred, u_target);
    const auto l1 = ops::mean(ops::abs(diff));
    const auto mse = ops::mean(ops::square(diff));
    FmLoss<T> out;
    out.l1 = static_cast<double>(l1.item());
    out.mse = static_cast<double>(mse.item());
    out.total = ops::add(ops::scale(l1, cfg.lambda_l1), ops::scale(mse, cfg.lambda_mse));
    return out;
}

template <typename T>
FlowSample<T> draw_training_tuple(const Tensor<T>& x1, std::uint64_t seed, const FlowPathConfig& cfg) {
    rng::Stream stream(rng::derive_key({seed, 0x666d7475706c65ULL}));
    const double t = stream.uniform();
    std::vector<T> eps(static_cast<std::size_t>(x1.numel()));
    for (auto& e : eps) e = static_cast<T>(stream.normal());
    return sample_path(x1, Tensor<T>(x1.shape(), std::move(eps)), t, cfg);
}

#define FLOWCT_INSTANTIATE(T)                                                                            \
    template Tensor<T> target_velocity(const Tensor<T>&, double, const Tensor<T>&, const FlowPathConfig&); \
    template FlowSample<T> sample_path(const Tensor<T>&, const Tensor<T>&, double, const FlowPathConfig&); \
    template FmLoss<T> fm_loss(const Tensor<T>&, const Tensor<T>&, const FlowPathConfig&);                \
    template FlowSample<T> draw_training_tuple(const Tensor<T>&, std::uint64_t, const FlowPathConfig&);

FLOWCT_INSTANTIATE(float)
FLOWCT_INSTANTIATE(double)
#undef FLOWCT_INSTANTIATE

} // namespace flowct::flow
