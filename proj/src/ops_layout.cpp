#include "flowct/ops.hpp"
#include "ops_detail.hpp"

namespace flowct::ops {

using detail::finish;
using detail::grad_of;
using detail::should_record;

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    detail::require_rank("upsample_nearest2x", "input", x.shape(), 5);
    const auto& s = x.shape();
    const std::int64_t NC = s[0] * s[1], D = s[2], H = s[3], W = s[4];
    const std::int64_t D2 = 2 * D, H2 = 2 * H, W2 = 2 * W;
    const auto xv = x.values();
    std::vector<T> out(static_cast<std::size_t>(NC * D2 * H2 * W2));
    for (std::int64_t c = 0; c < NC; ++c) {
        for (std::int64_t d = 0; d < D2; ++d) {
            for (std::int64_t h = 0; h < H2; ++h) {
                const T* src = xv.data() + ((c * D + d / 2) * H + h / 2) * W;
                T* dst = out.data() + ((c * D2 + d) * H2 + h) * W2;
                for (std::int64_t w = 0; w < W2; ++w) dst[w] = src[w / 2];
            }
        }
    }
    auto y = finish("upsample_nearest2x", Shape{s[0], s[1], D2, H2, W2}, std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record("upsample_nearest2x", {x.storage()}, y.storage(),
                                 [xs = x.storage(), NC, D, H, W](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     const std::int64_t D2 = 2 * D, H2 = 2 * H, W2 = 2 * W;
                                     for (std::int64_t c = 0; c < NC; ++c) {
                                         for (std::int64_t d = 0; d < D2; ++d) {
                                             for (std::int64_t h = 0; h < H2; ++h) {
                                                 T* dst = gx.data() + ((c * D + d / 2) * H + h / 2) * W;
                                                 const T* src = g.data() + ((c * D2 + d) * H2 + h) * W2;
                                                 for (std::int64_t w = 0; w < W2; ++w) dst[w / 2] += src[w];
                                             }
                                         }
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> downsample_strided2x(const Tensor<T>& x) {
    detail::require_rank("downsample_strided2x", "input", x.shape(), 5);
    const auto& s = x.shape();
    const std::int64_t NC = s[0] * s[1], D = s[2], H = s[3], W = s[4];
    const std::int64_t Dh = (D + 1) / 2, Hh = (H + 1) / 2, Wh = (W + 1) / 2;
    const auto xv = x.values();
    std::vector<T> out(static_cast<std::size_t>(NC * Dh * Hh * Wh));
    for (std::int64_t c = 0; c < NC; ++c) {
        for (std::int64_t d = 0; d < Dh; ++d) {
            for (std::int64_t h = 0; h < Hh; ++h) {
                const T* src = xv.data() + ((c * D + 2 * d) * H + 2 * h) * W;
                T* dst = out.data() + ((c * Dh + d) * Hh + h) * Wh;
                for (std::int64_t w = 0; w < Wh; ++w) dst[w] = src[2 * w];
            }
        }
    }
    auto y = finish("downsample_strided2x", Shape{s[0], s[1], Dh, Hh, Wh}, std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record("downsample_strided2x", {x.storage()}, y.storage(),
                                 [xs = x.storage(), NC, D, H, W, Dh, Hh, Wh](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     for (std::int64_t c = 0; c < NC; ++c) {
                                         for (std::int64_t d = 0; d < Dh; ++d) {
                                             for (std::int64_t h = 0; h < Hh; ++h) {
                                                 T* dst = gx.data() + ((c * D + 2 * d) * H + 2 * h) * W;
                                                 const T* src = g.data() + ((c * Dh + d) * Hh + h) * Wh;
                                                 for (std::int64_t w = 0; w < Wh; ++w) dst[2 * w] += src[w];
                                             }
                                         }
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || a.rank() != b.rank()) {
        throw ShapeError("concat_channels: incompatible ranks " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    for (std::size_t ax = 0; ax < a.rank(); ++ax) {
        if (ax == 1) continue;
        detail::require_axis("concat_channels", std::to_string(ax), b.dim(ax), a.dim(ax));
    }
    const std::int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
    const std::int64_t S = a.numel() / (N * Ca == 0 ? 1 : N * Ca);
    Shape shape = a.shape();
    shape[1] = Ca + Cb;
    std::vector<T> out(static_cast<std::size_t>(N * (Ca + Cb) * S));
    const auto av = a.values();
    const auto bv = b.values();
    for (std::int64_t n = 0; n < N; ++n) {
        std::copy_n(av.data() + n * Ca * S, Ca * S, out.data() + n * (Ca + Cb) * S);
        std::copy_n(bv.data() + n * Cb * S, Cb * S, out.data() + (n * (Ca + Cb) + Ca) * S);
    }
    auto y = finish("concat_channels", std::move(shape), std::move(out));
    if (should_record<T>({&a, &b})) {
        Tape<T>::active().record("concat_channels", {a.storage(), b.storage()}, y.storage(),
                                 [as = a.storage(), bs = b.storage(), N, Ca, Cb, S](const std::vector<T>& g) {
                                     for (std::int64_t n = 0; n < N; ++n) {
                                         const T* src = g.data() + n * (Ca + Cb) * S;
                                         if (as->requires_grad) {
                                             T* dst = grad_of(*as).data() + n * Ca * S;
                                             for (std::int64_t i = 0; i < Ca * S; ++i) dst[i] += src[i];
                                         }
                                         if (bs->requires_grad) {
                                             T* dst = grad_of(*bs).data() + n * Cb * S;
                                             for (std::int64_t i = 0; i < Cb * S; ++i) dst[i] += src[Ca * S + i];
                                         }
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t count) {
    if (x.rank() < 2) throw ShapeError("slice_channels: input needs rank >= 2");
    const std::int64_t N = x.dim(0), C = x.dim(1);
    if (begin < 0 || count < 0 || begin + count > C) {
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") exceeds axis 1 of extent " + std::to_string(C));
    }
    const std::int64_t S = C == 0 ? 0 : x.numel() / (N * C);
    Shape shape = x.shape();
    shape[1] = count;
    std::vector<T> out(static_cast<std::size_t>(N * count * S));
    for (std::int64_t n = 0; n < N; ++n) {
        std::copy_n(x.values().data() + (n * C + begin) * S, count * S, out.data() + n * count * S);
    }
    auto y = finish("slice_channels", std::move(shape), std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record("slice_channels", {x.storage()}, y.storage(),
                                 [xs = x.storage(), N, C, S, begin, count](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     for (std::int64_t n = 0; n < N; ++n) {
                                         T* dst = gx.data() + (n * C + begin) * S;
                                         const T* src = g.data() + n * count * S;
                                         for (std::int64_t i = 0; i < count * S; ++i) dst[i] += src[i];
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() < 2) throw ShapeError("add_channel_bias: input needs rank >= 2");
    detail::require_rank("add_channel_bias", "bias", bias.shape(), 2);
    detail::require_axis("add_channel_bias", "bias 0 (batch)", bias.dim(0), x.dim(0));
    detail::require_axis("add_channel_bias", "bias 1 (channels)", bias.dim(1), x.dim(1));
    const std::int64_t NC = x.dim(0) * x.dim(1);
    const std::int64_t S = NC == 0 ? 0 : x.numel() / NC;
    std::vector<T> out(x.values().begin(), x.values().end());
    const auto bv = bias.values();
    for (std::int64_t c = 0; c < NC; ++c) {
        T* o = out.data() + c * S;
        for (std::int64_t s = 0; s < S; ++s) o[s] += bv[c];
    }
    auto y = finish("add_channel_bias", x.shape(), std::move(out));
    if (should_record<T>({&x, &bias})) {
        Tape<T>::active().record("add_channel_bias", {x.storage(), bias.storage()}, y.storage(),
                                 [xs = x.storage(), bs = bias.storage(), NC, S](const std::vector<T>& g) {
                                     if (xs->requires_grad) {
                                         auto& gx = grad_of(*xs);
                                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                     }
                                     if (bs->requires_grad) {
                                         auto& gb = grad_of(*bs);
                                         for (std::int64_t c = 0; c < NC; ++c) {
                                             double acc = 0.0;
                                             for (std::int64_t s = 0; s < S; ++s) {
                                                 acc += static_cast<double>(g[c * S + s]);
                                             }
                                             gb[c] += static_cast<T>(acc);
                                         }
                                     }
                                 });
    }
    return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<T> out(x.values().begin(), x.values().end());
    auto y = Tensor<T>(std::move(shape), std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record("reshape", {x.storage()}, y.storage(), [xs = x.storage()](const std::vector<T>& g) {
            auto& gx = grad_of(*xs);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    detail::require_rank("transpose_last2", "input", x.shape(), 3);
    const std::int64_t B = x.dim(0), M = x.dim(1), N = x.dim(2);
    const auto xv = x.values();
    std::vector<T> out(xv.size());
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t i = 0; i < M; ++i) {
            for (std::int64_t j = 0; j < N; ++j) out[(b * N + j) * M + i] = xv[(b * M + i) * N + j];
        }
    }
    auto y = Tensor<T>(Shape{B, N, M}, std::move(out));
    if (should_record<T>({&x})) {
        Tape<T>::active().record("transpose_last2", {x.storage()}, y.storage(),
                                 [xs = x.storage(), B, M, N](const std::vector<T>& g) {
                                     auto& gx = grad_of(*xs);
                                     for (std::int64_t b = 0; b < B; ++b) {
                                         for (std::int64_t i = 0; i < M; ++i) {
                                             for (std::int64_t j = 0; j < N; ++j) {
                                                 gx[(b * M + i) * N + j] += g[(b * N + j) * M + i];
                                             }
                                         }
                                     }
                                 });
    }
    return y;
}

#define FLOWCT_INSTANTIATE(T)                                                        \
    template Tensor<T> upsample_nearest2x(const Tensor<T>&);                         \
    template Tensor<T> downsample_strided2x(const Tensor<T>&);                       \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t); \
    template Tensor<T> add_channel_bias(const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                             \
    template Tensor<T> transpose_last2(const Tensor<T>&);

FLOWCT_INSTANTIATE(float)
FLOWCT_INSTANTIATE(double)
#undef FLOWCT_INSTANTIATE

} // namespace flowct::ops
