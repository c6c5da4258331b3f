#include <algorithm>
#include <vector>

#include <Eigen/Core>

#include "flowct/ops.hpp"
#include "ops_detail.hpp"

namespace flowct::ops {

using detail::finish;
using detail::grad_of;
using detail::should_record;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    std::int64_t n, cin, d, h, w;
    std::int64_t cout, k;
    std::int64_t od, oh, ow;
    int stride, pad;

    std::int64_t in_plane() const { return d * h * w; }
    std::int64_t out_plane() const { return od * oh * ow; }
    std::int64_t patch() const { return cin * k * k * k; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Patch matrices are several megabytes; reusing per-thread buffers avoids
// fresh page faults on every call. Contents are fully overwritten before use.
template <typename T>
T* scratch(int slot, std::size_t n) {
    thread_local std::vector<T> buffers[2];
    auto& b = buffers[slot];
    if (b.size() < n) b.resize(n);
    return b.data();
}

// Output columns [lo, hi) along W read input columns inside [0, w).
inline void valid_w_range(const ConvGeometry& g, std::int64_t kw, std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t off = kw - g.pad;
    lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    hi = off >= g.w ? 0 : std::min(g.ow, (g.w - 1 - off) / g.stride + 1);
    lo = std::min(lo, g.ow);
    hi = std::max(hi, lo);
}

// col[(ci,kd,kh,kw), (od,oh,ow)] = x[ci, od*s+kd-p, oh*s+kh-p, ow*s+kw-p] (zero outside)
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const std::int64_t P = g.out_plane();
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        const T* xc = x + ci * g.in_plane();
        for (std::int64_t kd = 0; kd < g.k; ++kd) {
            for (std::int64_t kh = 0; kh < g.k; ++kh) {
                for (std::int64_t kw = 0; kw < g.k; ++kw, ++row) {
                    std::int64_t lo, hi;
                    valid_w_range(g, kw, lo, hi);
                    T* dst = col + row * P;
                    for (std::int64_t od = 0; od < g.od; ++od) {
                        const std::int64_t id = od * g.stride + kd - g.pad;
                        for (std::int64_t oh = 0; oh < g.oh; ++oh) {
                            T* out = dst + (od * g.oh + oh) * g.ow;
                            const std::int64_t ih = oh * g.stride + kh - g.pad;
                            if (id < 0 || id >= g.d || ih < 0 || ih >= g.h) {
                                std::fill(out, out + g.ow, T(0));
                                continue;
                            }
                            const T* src = xc + (id * g.h + ih) * g.w + (kw - g.pad);
                            std::fill(out, out + lo, T(0));
                            if (g.stride == 1) {
                                std::copy(src + lo, src + hi, out + lo);
                            } else {
                                for (std::int64_t ow = lo; ow < hi; ++ow) out[ow] = src[ow * g.stride];
                            }
                            std::fill(out + hi, out + g.ow, T(0));
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into dx.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
    const std::int64_t P = g.out_plane();
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        T* xc = dx + ci * g.in_plane();
        for (std::int64_t kd = 0; kd < g.k; ++kd) {
            for (std::int64_t kh = 0; kh < g.k; ++kh) {
                for (std::int64_t kw = 0; kw < g.k; ++kw, ++row) {
                    std::int64_t lo, hi;
                    valid_w_range(g, kw, lo, hi);
                    const T* src_row = col + row * P;
                    for (std::int64_t od = 0; od < g.od; ++od) {
                        const std::int64_t id = od * g.stride + kd - g.pad;
                        if (id < 0 || id >= g.d) continue;
                        for (std::int64_t oh = 0; oh < g.oh; ++oh) {
                            const std::int64_t ih = oh * g.stride + kh - g.pad;
                            if (ih < 0 || ih >= g.h) continue;
                            const T* src = src_row + (od * g.oh + oh) * g.ow;
                            T* dst = xc + (id * g.h + ih) * g.w + (kw - g.pad);
                            if (g.stride == 1) {
                                for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
                            } else {
                                for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow * g.stride] += src[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, Conv3dOptions opts) {
    detail::require_rank("conv3d", "input", input.shape(), 5);
    detail::require_rank("conv3d", "kernel", kernel.shape(), 5);
    const auto& xs = input.shape();
    const auto& ks = kernel.shape();
    const std::int64_t k = ks[2];
    if (k % 2 == 0 || ks[3] != k || ks[4] != k) {
        throw ShapeError("conv3d: kernel must be cubic with odd side, got " + shape_str(ks));
    }
    if (opts.stride < 1) throw ShapeError("conv3d: stride must be >= 1");
    if (opts.padding < 0) throw ShapeError("conv3d: padding must be >= 0");
    detail::require_axis("conv3d", "Cin (input axis 1 vs kernel axis 1)", ks[1], xs[1]);
    if (bias.defined()) {
        detail::require_rank("conv3d", "bias", bias.shape(), 1);
        detail::require_axis("conv3d", "bias 0", bias.dim(0), ks[0]);
    }

    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], xs[4], ks[0], k, 0, 0, 0, opts.stride, opts.padding};
    auto out_extent = [&](std::int64_t n, const char* axis) {
        const std::int64_t span = n + 2 * g.pad - g.k;
        if (span < 0) {
            throw ShapeError(std::string("conv3d: axis ") + axis + " of extent " + std::to_string(n) +
                             " is smaller than the padded kernel");
        }
        return span / g.stride + 1;
    };
    g.od = out_extent(g.d, "D");
    g.oh = out_extent(g.h, "H");
    g.ow = out_extent(g.w, "W");

    const std::int64_t P = g.out_plane();
    const std::int64_t K = g.patch();
    std::vector<T> out(static_cast<std::size_t>(g.n * g.cout * P));
    T* col = g.pointwise() ? nullptr : scratch<T>(0, static_cast<std::size_t>(K * P));

    Eigen::Map<const RowMat<T>> wmat(kernel.values().data(), g.cout, K);
    for (std::int64_t n = 0; n < g.n; ++n) {
        const T* xn = input.values().data() + n * g.cin * g.in_plane();
        const T* colp = xn;
        if (!g.pointwise()) {
            im2col(xn, g, col);
            colp = col;
        }
        Eigen::Map<const RowMat<T>> cmat(colp, K, P);
        Eigen::Map<RowMat<T>> omat(out.data() + n * g.cout * P, g.cout, P);
        omat.noalias() = wmat * cmat;
        if (bias.defined()) {
            for (std::int64_t co = 0; co < g.cout; ++co) omat.row(co).array() += bias.values()[co];
        }
    }

    auto y = finish("conv3d", Shape{g.n, g.cout, g.od, g.oh, g.ow}, std::move(out));
    if (should_record<T>({&input, &kernel, &bias})) {
        std::vector<detail::StoragePtr<T>> inputs{input.storage(), kernel.storage()};
        if (bias.defined()) inputs.push_back(bias.storage());
        Tape<T>::active().record(
            "conv3d", std::move(inputs), y.storage(),
            [g, xsp = input.storage(), ksp = kernel.storage(),
             bsp = bias.defined() ? bias.storage() : nullptr](const std::vector<T>& gout) {
                const std::int64_t P = g.out_plane();
                const std::int64_t K = g.patch();
                Eigen::Map<const RowMat<T>> wmat(ksp->values.data(), g.cout, K);
                const bool patches = !g.pointwise();
                T* col = patches ? scratch<T>(0, static_cast<std::size_t>(K * P)) : nullptr;
                T* dcol = patches ? scratch<T>(1, static_cast<std::size_t>(K * P)) : nullptr;
                for (std::int64_t n = 0; n < g.n; ++n) {
                    Eigen::Map<const RowMat<T>> gmat(gout.data() + n * g.cout * P, g.cout, P);
                    const T* xn = xsp->values.data() + n * g.cin * g.in_plane();
                    if (ksp->requires_grad) {
                        const T* colp = xn;
                        if (!g.pointwise()) {
                            im2col(xn, g, col);
                            colp = col;
                        }
                        Eigen::Map<const RowMat<T>> cmat(colp, K, P);
                        Eigen::Map<RowMat<T>> dw(grad_of(*ksp).data(), g.cout, K);
                        dw.noalias() += gmat * cmat.transpose();
                    }
                    if (xsp->requires_grad) {
                        T* dxn = grad_of(*xsp).data() + n * g.cin * g.in_plane();
                        if (g.pointwise()) {
                            Eigen::Map<RowMat<T>> dx(dxn, K, P);
                            dx.noalias() += wmat.transpose() * gmat;
                        } else {
                            Eigen::Map<RowMat<T>> dc(dcol, K, P);
                            dc.noalias() = wmat.transpose() * gmat;
                            col2im(dcol, g, dxn);
                        }
                    }
                    if (bsp && bsp->requires_grad) {
                        auto& gb = grad_of(*bsp);
                        for (std::int64_t co = 0; co < g.cout; ++co) {
                            double acc = 0.0;
                            for (std::int64_t p = 0; p < P; ++p) acc += static_cast<double>(gmat(co, p));
                            gb[static_cast<std::size_t>(co)] += static_cast<T>(acc);
                        }
                    }
                }
            });
    }
    return y;
}

template Tensor<float> conv3d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, Conv3dOptions);
template Tensor<double> conv3d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, Conv3dOptions);

} // namespace flowct::ops
