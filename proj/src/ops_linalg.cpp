#include <Eigen/Core>
#include <cmath>

#include "flowct/ops.hpp"
#include "ops_detail.hpp"

namespace flowct::ops {

using detail::finish;
using detail::grad_of;
using detail::should_record;

namespace {
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
} // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    detail::require_rank("linear", "input", x.shape(), 2);
    detail::require_rank("linear", "weight", weight.shape(), 2);
    const std::int64_t N = x.dim(0), In = x.dim(1), Out = weight.dim(0);
    detail::require_axis("linear", "weight 1 (in features)", weight.dim(1), In);
    if (bias.defined()) detail::require_axis("linear", "bias 0", bias.numel(), Out);

    std::vector<T> out(static_cast<std::size_t>(N * Out));
    Eigen::Map<const RowMat<T>> xm(x.values().data(), N, In);
    Eigen::Map<const RowMat<T>> wm(weight.values().data(), Out, In);
    Eigen::Map<RowMat<T>> om(out.data(), N, Out);
    om.noalias() = xm * wm.transpose();
    if (bias.defined()) {
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t o = 0; o < Out; ++o) om(n, o) += bias.values()[o];
        }
    }
    auto y = finish("linear", Shape{N, Out}, std::move(out));
    if (should_record<T>({&x, &weight, &bias})) {
        std::vector<detail::StoragePtr<T>> inputs{x.storage(), weight.storage()};
        if (bias.defined()) inputs.push_back(bias.storage());
        Tape<T>::active().record(
            "linear", std::move(inputs), y.storage(),
            [xs = x.storage(), ws = weight.storage(), bs = bias.defined() ? bias.storage() : nullptr, N, In,
             Out](const std::vector<T>& g) {
                Eigen::Map<const RowMat<T>> gm(g.data(), N, Out);
                if (xs->requires_grad) {
                    Eigen::Map<RowMat<T>> gx(grad_of(*xs).data(), N, In);
                    Eigen::Map<const RowMat<T>> wm(ws->values.data(), Out, In);
                    gx.noalias() += gm * wm;
                }
                if (ws->requires_grad) {
                    Eigen::Map<RowMat<T>> gw(grad_of(*ws).data(), Out, In);
                    Eigen::Map<const RowMat<T>> xm(xs->values.data(), N, In);
                    gw.noalias() += gm.transpose() * xm;
                }
                if (bs && bs->requires_grad) {
                    auto& gb = grad_of(*bs);
                    for (std::int64_t o = 0; o < Out; ++o) {
                        double acc = 0.0;
                        for (std::int64_t n = 0; n < N; ++n) acc += static_cast<double>(gm(n, o));
                        gb[o] += static_cast<T>(acc);
                    }
                }
            });
    }
    return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank("matmul", "lhs", a.shape(), 3);
    detail::require_rank("matmul", "rhs", b.shape(), 3);
    const std::int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    detail::require_axis("matmul", "rhs 0 (batch)", b.dim(0), B);
    detail::require_axis("matmul", "rhs 1 (inner)", b.dim(1), K);
    std::vector<T> out(static_cast<std::size_t>(B * M * N));
    for (std::int64_t i = 0; i < B; ++i) {
        Eigen::Map<const RowMat<T>> am(a.values().data() + i * M * K, M, K);
        Eigen::Map<const RowMat<T>> bm(b.values().data() + i * K * N, K, N);
        Eigen::Map<RowMat<T>> om(out.data() + i * M * N, M, N);
        om.noalias() = am * bm;
    }
    auto y = finish("matmul", Shape{B, M, N}, std::move(out));
    if (should_record<T>({&a, &b})) {
        Tape<T>::active().record(
            "matmul", {a.storage(), b.storage()}, y.storage(),
            [as = a.storage(), bs = b.storage(), B, M, K, N](const std::vector<T>& g) {
                for (std::int64_t i = 0; i < B; ++i) {
                    Eigen::Map<const RowMat<T>> gm(g.data() + i * M * N, M, N);
                    if (as->requires_grad) {
                        Eigen::Map<RowMat<T>> ga(grad_of(*as).data() + i * M * K, M, K);
                        Eigen::Map<const RowMat<T>> bm(bs->values.data() + i * K * N, K, N);
                        ga.noalias() += gm * bm.transpose();
                    }
                    if (bs->requires_grad) {
                        Eigen::Map<RowMat<T>> gb(grad_of(*bs).data() + i * K * N, K, N);
                        Eigen::Map<const RowMat<T>> am(as->values.data() + i * M * K, M, K);
                        gb.noalias() += am.transpose() * gm;
                    }
                }
            });
    }
    return y;
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("softmax_last: scalar input");
    const std::int64_t L = x.shape().back();
    const std::int64_t rows = L == 0 ? 0 : x.numel() / L;
    const auto xv = x.values();
    std::vector<T> out(xv.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = xv.data() + r * L;
        T* dst = out.data() + r * L;
        T mx = src[0];
        for (std::int64_t j = 1; j < L; ++j) mx = std::max(mx, src[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < L; ++j) {
            const double e = std::exp(static_cast<double>(src[j] - mx));
            dst[j] = static_cast<T>(e);
            z += e;
        }
        for (std::int64_t j = 0; j < L; ++j) dst[j] = static_cast<T>(static_cast<double>(dst[j]) / z);
    }
    auto y = finish("softmax_last", x.shape(), std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record("softmax_last", {x.storage()}, y.storage(),
                                 [xs = x.storage(), ys = y.storage().get(), rows, L](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     for (std::int64_t r = 0; r < rows; ++r) {
                                         const T* yr = ys->values.data() + r * L;
                                         const T* gr = g.data() + r * L;
                                         double dot = 0.0;
                                         for (std::int64_t j = 0; j < L; ++j) {
                                             dot += static_cast<double>(gr[j]) * static_cast<double>(yr[j]);
                                         }
                                         for (std::int64_t j = 0; j < L; ++j) {
                                             gx[r * L + j] += static_cast<T>(
                                                 static_cast<double>(yr[j]) * (static_cast<double>(gr[j]) - dot));
                                         }
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> attention_block(const Tensor<T>& x, const AttentionWeights<T>& w, int heads) {
    detail::require_rank("attention_block", "input", x.shape(), 5);
    const std::int64_t N = x.dim(0), C = x.dim(1);
    if (heads < 1 || C % heads != 0) {
        throw ConfigError("attention_block: " + std::to_string(C) + " channels cannot be split into " +
                          std::to_string(heads) + " heads");
    }
    const std::int64_t tokens = x.dim(2) * x.dim(3) * x.dim(4);
    const std::int64_t head_dim = C / heads;

    const Tensor<T> h = w.norm_gamma.defined() ? group_norm(x, w.norm_groups, w.norm_gamma, w.norm_beta) : x;
    const auto qkv = conv3d(h, w.qkv_weight, w.qkv_bias, {});
    const Shape per_head{N * heads, head_dim, tokens};
    const auto q = reshape(slice_channels(qkv, 0, C), per_head);
    const auto k = reshape(slice_channels(qkv, C, C), per_head);
    const auto v = reshape(slice_channels(qkv, 2 * C, C), per_head);

    // scores[b, t, s] = <q[:, t], k[:, s]> / sqrt(head_dim)
    const auto scores = scale(matmul(transpose_last2(q), k), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    const auto weights = softmax_last(scores);
    // mixed[b, c, t] = sum_s v[c, s] * weights[t, s]
    const auto mixed = matmul(v, transpose_last2(weights));
    const auto proj = conv3d(reshape(mixed, x.shape()), w.proj_weight, w.proj_bias, {});
    return add(x, proj);
}

#define FLOWCT_INSTANTIATE(T)                                                             \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> softmax_last(const Tensor<T>&);                                    \
    template Tensor<T> attention_block(const Tensor<T>&, const AttentionWeights<T>&, int);

FLOWCT_INSTANTIATE(float)
FLOWCT_INSTANTIATE(double)
#undef FLOWCT_INSTANTIATE

} // namespace flowct::ops
