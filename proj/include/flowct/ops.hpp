#pragma once

#include <cstdint>

#include "flowct/tensor.hpp"

// Differentiable primitives. Every op checks shapes, computes its output
// eagerly, and records an adjoint on the active tape when grad mode is on and
// an input requires a gradient. Reductions accumulate in double regardless of
// the tensor precision.
namespace flowct::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, double factor);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);

// Full reductions to a scalar tensor.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// x[N,in] * weight[out,in]^T + bias[out]. bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

struct Conv3dOptions {
    int stride = 1;
    int padding = 0;
};

// Cross-correlation of input[N,Cin,D,H,W] with kernel[Cout,Cin,k,k,k], k odd.
// bias[Cout] may be undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, Conv3dOptions opts);

// Normalizes each (sample, channel group) to zero mean and unit population
// variance, then applies the per-channel affine if gamma/beta are defined.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

// Identifies the random stream of one dropout application.
struct DropoutKey {
    std::uint64_t seed = 0;
    std::uint64_t op_id = 0;
    std::uint64_t step = 0;
};

// Training: zeroes elements with probability p and scales survivors by
// 1/(1-p). Eval (training == false) returns x itself.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, DropoutKey key, bool training);

// [N,C,D,H,W] -> [N,C,2D,2H,2W]
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);
// [N,C,D,H,W] -> [N,C,ceil(D/2),ceil(H/2),ceil(W/2)], keeping even indices.
template <typename T> Tensor<T> downsample_strided2x(const Tensor<T>& x);

// Channel axis is axis 1.
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t count);

// x[N,C,...] + bias[N,C] broadcast over the trailing axes.
template <typename T> Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// [B,M,N] -> [B,N,M]
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& x);
// [B,M,K] x [B,K,N] -> [B,M,N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> softmax_last(const Tensor<T>& x);

// Parameters of a spatial self-attention block. norm_gamma/norm_beta are
// optional; when defined a group norm is applied before the QKV projection.
template <typename T>
struct AttentionWeights {
    Tensor<T> norm_gamma;
    Tensor<T> norm_beta;
    Tensor<T> qkv_weight;   // [3C, C, 1, 1, 1]; channel blocks Q | K | V
    Tensor<T> qkv_bias;     // [3C]
    Tensor<T> proj_weight;  // [C, C, 1, 1, 1]
    Tensor<T> proj_bias;    // [C]
    int norm_groups = 8;
};

// x + proj(softmax(Q^T K / sqrt(C/heads)) V) over the D*H*W token axis.
template <typename T>
Tensor<T> attention_block(const Tensor<T>& x, const AttentionWeights<T>& w, int heads);

} // namespace flowct::ops
