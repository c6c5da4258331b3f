#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowct/ops.hpp"
#include "flowct/tensor.hpp"

namespace flowct::net {

struct VelocityNetConfig {
    int base_channels = 64;
    std::vector<int> channel_multipliers{1, 1, 2, 3, 4};
    int blocks_per_level = 1;
    // Feature-map sides that get self-attention, expressed at reference_side
    // input resolution and rescaled to input_side.
    std::vector<int> attention_at{16, 8};
    int reference_side = 128;
    double dropout_p = 0.05;
    int cond_channels = 64;
    int time_embed_dim = 0;  // 0 selects 4 * base_channels
    int input_side = 128;
    int heads = 1;
    int norm_groups = 8;
    bool zero_init_output = true;

    int levels() const { return static_cast<int>(channel_multipliers.size()) - 1; }
    int embed_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels; }
    // Feature-map side of each resolution stage at input_side.
    std::vector<int> stage_sides() const;
    bool attention_at_stage(int stage) const;

    // Throws ConfigError.
    void validate() const;

    // 128^3, base 64, multipliers (1,1,2,3,4), attention at 16^3 and 8^3.
    static VelocityNetConfig paper();
    // Same topology at 16^3 with 8 base and conditioning channels.
    static VelocityNetConfig desk();
};

std::int64_t conv3d_param_count(std::int64_t in_channels, std::int64_t out_channels, int kernel, bool bias = true);

// Closed-form count of trainable scalars, computed layer by layer from the
// config without building the network.
std::int64_t param_count(const VelocityNetConfig& cfg);

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

struct ForwardOptions {
    bool training = false;
    std::uint64_t dropout_seed = 0;
    std::uint64_t step = 0;
};

// Conditional velocity model v(x_t, t | c): a two-layer conv encoder for the
// conditioning volume, concatenated with x_t and fed to a residual U-Net with
// a timestep embedding injected into every residual block.
template <typename T>
class VelocityNet {
public:
    VelocityNet(VelocityNetConfig cfg, std::uint64_t init_seed);

    const VelocityNetConfig& config() const { return cfg_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }
    std::vector<Parameter<T>>& parameters() { return params_; }
    std::int64_t parameter_count() const;
    void set_requires_grad(bool on);
    void zero_grad();

    // c[N,1,D,H,W] -> [N,cond_channels,D,H,W]
    Tensor<T> encode_condition(const Tensor<T>& c) const;

    // x_t[N,1,D,H,W], one t per batch item, features from encode_condition.
    Tensor<T> forward(const Tensor<T>& x_t, std::span<const double> t, const Tensor<T>& c_features,
                      const ForwardOptions& opts = {}) const;

    // Sinusoidal features [N, base_channels] of the (scaled) time values.
    Tensor<T> time_features(std::span<const double> t) const;

private:
    struct Conv {
        Tensor<T> weight, bias;
        int stride = 1;
        int padding = 1;
    };
    struct Norm {
        Tensor<T> gamma, beta;
    };
    struct Linear {
        Tensor<T> weight, bias;
    };
    struct ResBlock {
        Norm norm1;
        Conv conv1;
        Linear emb;
        Norm norm2;
        Conv conv2;
        std::optional<Conv> skip;
        std::uint64_t dropout_id = 0;
    };
    struct Block {
        std::optional<ResBlock> res;
        std::optional<ops::AttentionWeights<T>> attn;
        std::optional<Conv> down;
        std::optional<Conv> up;
    };

    Tensor<T> add_param(const std::string& name, Shape shape);
    Conv make_conv(const std::string& name, int cin, int cout, int k, int stride = 1);
    Norm make_norm(const std::string& name, int channels);
    Linear make_linear(const std::string& name, int in, int out);
    ResBlock make_res(const std::string& name, int cin, int cout);
    ops::AttentionWeights<T> make_attn(const std::string& name, int channels);
    void initialize(std::uint64_t seed);

    Tensor<T> apply(const Conv& c, const Tensor<T>& x) const;
    Tensor<T> apply(const Norm& n, const Tensor<T>& x) const;
    Tensor<T> apply(const ResBlock& r, const Tensor<T>& x, const Tensor<T>& emb_act, const ForwardOptions& o) const;

    VelocityNetConfig cfg_;
    std::vector<Parameter<T>> params_;
    std::vector<std::string> zero_init_;

    Conv cond1_, cond2_;
    Linear time1_, time2_;
    Conv in_conv_;
    std::vector<Block> down_blocks_;
    ResBlock mid1_;
    ops::AttentionWeights<T> mid_attn_;
    ResBlock mid2_;
    std::vector<Block> up_blocks_;
    Norm out_norm_;
    Conv out_conv_;
    std::uint64_t next_dropout_id_ = 0;
};

extern template class VelocityNet<float>;
extern template class VelocityNet<double>;

} // namespace flowct::net
