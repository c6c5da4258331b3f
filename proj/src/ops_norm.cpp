#include <cmath>

#include "flowct/ops.hpp"
#include "flowct/rng.hpp"
#include "ops_detail.hpp"

namespace flowct::ops {

using detail::finish;
using detail::grad_of;
using detail::should_record;

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    if (x.rank() < 2) throw ShapeError("group_norm: input needs rank >= 2, got " + shape_str(x.shape()));
    const std::int64_t N = x.dim(0);
    const std::int64_t C = x.dim(1);
    if (groups < 1 || C % groups != 0) {
        throw ConfigError("group_norm: " + std::to_string(C) + " channels are not divisible into " +
                          std::to_string(groups) + " groups");
    }
    if (gamma.defined() != beta.defined()) throw ShapeError("group_norm: gamma and beta must both be given");
    if (gamma.defined()) {
        detail::require_axis("group_norm", "gamma 0", gamma.numel(), C);
        detail::require_axis("group_norm", "beta 0", beta.numel(), C);
    }
    const std::int64_t S = x.numel() / (N * C);
    const std::int64_t cpg = C / groups;
    const std::int64_t group_size = cpg * S;

    const auto xv = x.values();
    std::vector<T> xhat(xv.size());
    std::vector<double> inv_std(static_cast<std::size_t>(N * groups));
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (n * C + gi * cpg) * S;
            double mu = 0.0;
            for (std::int64_t i = 0; i < group_size; ++i) mu += static_cast<double>(xv[base + i]);
            mu /= static_cast<double>(group_size);
            double var = 0.0;
            for (std::int64_t i = 0; i < group_size; ++i) {
                const double dv = static_cast<double>(xv[base + i]) - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(group_size);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[n * groups + gi] = is;
            for (std::int64_t i = 0; i < group_size; ++i) {
                xhat[base + i] = static_cast<T>((static_cast<double>(xv[base + i]) - mu) * is);
            }
        }
    }

    std::vector<T> out(xhat);
    if (gamma.defined()) {
        const auto gv = gamma.values();
        const auto bv = beta.values();
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t c = 0; c < C; ++c) {
                T* o = out.data() + (n * C + c) * S;
                for (std::int64_t s = 0; s < S; ++s) o[s] = o[s] * gv[c] + bv[c];
            }
        }
    }

    auto y = finish("group_norm", x.shape(), std::move(out));
    if (should_record<T>({&x, &gamma, &beta})) {
        std::vector<detail::StoragePtr<T>> inputs{x.storage()};
        if (gamma.defined()) {
            inputs.push_back(gamma.storage());
            inputs.push_back(beta.storage());
        }
        Tape<T>::active().record(
            "group_norm", std::move(inputs), y.storage(),
            [N, C, S, groups, cpg, group_size, xhat = std::move(xhat), inv_std = std::move(inv_std),
             xs = x.storage(), gs = gamma.defined() ? gamma.storage() : nullptr,
             bs = beta.defined() ? beta.storage() : nullptr](const std::vector<T>& g) {
                if (gs && gs->requires_grad) {
                    auto& gg = grad_of(*gs);
                    for (std::int64_t c = 0; c < C; ++c) {
                        double acc = 0.0;
                        for (std::int64_t n = 0; n < N; ++n) {
                            const std::int64_t off = (n * C + c) * S;
                            for (std::int64_t s = 0; s < S; ++s) {
                                acc += static_cast<double>(g[off + s]) * static_cast<double>(xhat[off + s]);
                            }
                        }
                        gg[c] += static_cast<T>(acc);
                    }
                }
                if (bs && bs->requires_grad) {
                    auto& gb = grad_of(*bs);
                    for (std::int64_t c = 0; c < C; ++c) {
                        double acc = 0.0;
                        for (std::int64_t n = 0; n < N; ++n) {
                            const std::int64_t off = (n * C + c) * S;
                            for (std::int64_t s = 0; s < S; ++s) acc += static_cast<double>(g[off + s]);
                        }
                        gb[c] += static_cast<T>(acc);
                    }
                }
                if (!xs->requires_grad) return;
                auto& gx = grad_of(*xs);
                std::vector<double> dxhat(static_cast<std::size_t>(group_size));
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t gi = 0; gi < groups; ++gi) {
                        const std::int64_t base = (n * C + gi * cpg) * S;
                        double mean_d = 0.0;
                        double mean_dx = 0.0;
                        for (std::int64_t i = 0; i < group_size; ++i) {
                            const std::int64_t c = gi * cpg + i / S;
                            const double gamma_c = gs ? static_cast<double>(gs->values[c]) : 1.0;
                            const double d = static_cast<double>(g[base + i]) * gamma_c;
                            dxhat[i] = d;
                            mean_d += d;
                            mean_dx += d * static_cast<double>(xhat[base + i]);
                        }
                        mean_d /= static_cast<double>(group_size);
                        mean_dx /= static_cast<double>(group_size);
                        const double is = inv_std[n * groups + gi];
                        for (std::int64_t i = 0; i < group_size; ++i) {
                            gx[base + i] += static_cast<T>(
                                is * (dxhat[i] - mean_d - static_cast<double>(xhat[base + i]) * mean_dx));
                        }
                    }
                }
            });
    }
    return y;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, DropoutKey key, bool training) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must lie in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;

    const std::uint64_t stream = rng::derive_key({key.seed, key.op_id, key.step});
    const auto xv = x.values();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(xv.size());
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        mask[i] = rng::uniform_at(stream, i) >= p ? keep_scale : T(0);
        out[i] = xv[i] * mask[i];
    }
    auto y = finish("dropout", x.shape(), std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record("dropout", {x.storage()}, y.storage(),
                                 [xs = x.storage(), mask = std::move(mask)](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                                 });
    }
    return y;
}

template Tensor<float> group_norm(const Tensor<float>&, int, const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> group_norm(const Tensor<double>&, int, const Tensor<double>&, const Tensor<double>&,
                                   double);
template Tensor<float> dropout(const Tensor<float>&, double, DropoutKey, bool);
template Tensor<double> dropout(const Tensor<double>&, double, DropoutKey, bool);

} // namespace flowct::ops
