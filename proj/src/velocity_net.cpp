#include "flowct/velocity_net.hpp"

#include <algorithm>
#include <cmath>

#include "flowct/error.hpp"
#include "flowct/rng.hpp"

namespace flowct::net {

namespace {
// t in [0, 1] is stretched onto the integer-timestep range the sinusoidal
// embedding was designed for.
constexpr double kTimeScale = 1000.0;
constexpr double kMaxPeriod = 10000.0;
} // namespace

std::vector<int> VelocityNetConfig::stage_sides() const {
    std::vector<int> sides;
    int side = input_side;
    for (int i = 0; i <= levels(); ++i) {
        sides.push_back(side);
        side /= 2;
    }
    return sides;
}

bool VelocityNetConfig::attention_at_stage(int stage) const {
    const auto sides = stage_sides();
    const std::int64_t side = sides.at(static_cast<std::size_t>(stage));
    return std::any_of(attention_at.begin(), attention_at.end(), [&](int a) {
        return side * reference_side == static_cast<std::int64_t>(a) * input_side;
    });
}

void VelocityNetConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("velocity net: " + msg); };
    if (base_channels < 1) fail("base_channels must be positive");
    if (channel_multipliers.size() < 1) fail("channel_multipliers must not be empty");
    for (int m : channel_multipliers) {
        if (m < 1) fail("channel multipliers must be positive");
    }
    if (blocks_per_level < 1) fail("blocks_per_level must be >= 1");
    if (cond_channels < 1) fail("cond_channels must be positive");
    if (heads < 1) fail("heads must be positive");
    if (norm_groups < 1) fail("norm_groups must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
    if (input_side < 1 || reference_side < 1) fail("input_side and reference_side must be positive");
    const std::int64_t factor = std::int64_t{1} << levels();
    if (input_side % factor != 0) {
        fail("input_side " + std::to_string(input_side) + " is not divisible by 2^levels = " +
             std::to_string(factor));
    }
    for (int m : channel_multipliers) {
        const int ch = m * base_channels;
        if (ch % norm_groups != 0) {
            fail(std::to_string(ch) + " channels are not divisible into " + std::to_string(norm_groups) + " groups");
        }
        if (ch % heads != 0) fail(std::to_string(ch) + " channels cannot be split into " + std::to_string(heads) + " heads");
    }
    for (int a : attention_at) {
        bool realized = false;
        for (int s : stage_sides()) {
            realized |= static_cast<std::int64_t>(s) * reference_side == static_cast<std::int64_t>(a) * input_side;
        }
        if (!realized) {
            fail("attention side " + std::to_string(a) + " (at reference " + std::to_string(reference_side) +
                 ") does not match any feature-map side");
        }
    }
}

VelocityNetConfig VelocityNetConfig::paper() { return VelocityNetConfig{}; }

VelocityNetConfig VelocityNetConfig::desk() {
    VelocityNetConfig cfg;
    cfg.base_channels = 8;
    cfg.cond_channels = 8;
    cfg.input_side = 16;
    return cfg;
}

std::int64_t conv3d_param_count(std::int64_t in_channels, std::int64_t out_channels, int kernel, bool bias) {
    return in_channels * out_channels * kernel * kernel * kernel + (bias ? out_channels : 0);
}

std::int64_t param_count(const VelocityNetConfig& cfg) {
    cfg.validate();
    const std::int64_t base = cfg.base_channels;
    const std::int64_t emb = cfg.embed_dim();
    auto norm = [](std::int64_t c) { return 2 * c; };
    auto linear = [](std::int64_t i, std::int64_t o) { return i * o + o; };
    auto res = [&](std::int64_t in, std::int64_t out) {
        std::int64_t p = norm(in) + conv3d_param_count(in, out, 3) + linear(emb, out) + norm(out) +
                         conv3d_param_count(out, out, 3);
        if (in != out) p += conv3d_param_count(in, out, 1);
        return p;
    };
    auto attn = [&](std::int64_t c) {
        return norm(c) + conv3d_param_count(c, 3 * c, 1) + conv3d_param_count(c, c, 1);
    };

    std::int64_t total = conv3d_param_count(1, cfg.cond_channels, 3) +
                         conv3d_param_count(cfg.cond_channels, cfg.cond_channels, 3);
    total += linear(base, emb) + linear(emb, emb);

    const auto& mult = cfg.channel_multipliers;
    const int last = cfg.levels();
    std::int64_t ch = base * mult[0];
    total += conv3d_param_count(1 + cfg.cond_channels, ch, 3);
    std::vector<std::int64_t> skips{ch};
    for (int level = 0; level <= last; ++level) {
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            total += res(ch, base * mult[level]);
            ch = base * mult[level];
            if (cfg.attention_at_stage(level)) total += attn(ch);
            skips.push_back(ch);
        }
        if (level != last) {
            total += conv3d_param_count(ch, ch, 3);
            skips.push_back(ch);
        }
    }
    total += res(ch, ch) + attn(ch) + res(ch, ch);
    for (int level = last; level >= 0; --level) {
        for (int b = 0; b <= cfg.blocks_per_level; ++b) {
            const std::int64_t skip = skips.back();
            skips.pop_back();
            total += res(ch + skip, base * mult[level]);
            ch = base * mult[level];
            if (cfg.attention_at_stage(level)) total += attn(ch);
            if (level > 0 && b == cfg.blocks_per_level) total += conv3d_param_count(ch, ch, 3);
        }
    }
    total += norm(ch) + conv3d_param_count(ch, 1, 3);
    return total;
}

template <typename T>
Tensor<T> VelocityNet<T>::add_param(const std::string& name, Shape shape) {
    Tensor<T> t(std::move(shape));
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
}

template <typename T>
typename VelocityNet<T>::Conv VelocityNet<T>::make_conv(const std::string& name, int cin, int cout, int k,
                                                        int stride) {
    Conv c;
    c.weight = add_param(name + ".weight", Shape{cout, cin, k, k, k});
    c.bias = add_param(name + ".bias", Shape{cout});
    c.stride = stride;
    c.padding = k / 2;
    return c;
}

template <typename T>
typename VelocityNet<T>::Norm VelocityNet<T>::make_norm(const std::string& name, int channels) {
    return Norm{add_param(name + ".gamma", Shape{channels}), add_param(name + ".beta", Shape{channels})};
}

template <typename T>
typename VelocityNet<T>::Linear VelocityNet<T>::make_linear(const std::string& name, int in, int out) {
    return Linear{add_param(name + ".weight", Shape{out, in}), add_param(name + ".bias", Shape{out})};
}

template <typename T>
typename VelocityNet<T>::ResBlock VelocityNet<T>::make_res(const std::string& name, int cin, int cout) {
    ResBlock r;
    r.norm1 = make_norm(name + ".norm1", cin);
    r.conv1 = make_conv(name + ".conv1", cin, cout, 3);
    r.emb = make_linear(name + ".emb", cfg_.embed_dim(), cout);
    r.norm2 = make_norm(name + ".norm2", cout);
    r.conv2 = make_conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) r.skip = make_conv(name + ".skip", cin, cout, 1);
    r.dropout_id = next_dropout_id_++;
    return r;
}

template <typename T>
ops::AttentionWeights<T> VelocityNet<T>::make_attn(const std::string& name, int channels) {
    ops::AttentionWeights<T> a;
    a.norm_gamma = add_param(name + ".norm.gamma", Shape{channels});
    a.norm_beta = add_param(name + ".norm.beta", Shape{channels});
    a.qkv_weight = add_param(name + ".qkv.weight", Shape{3 * channels, channels, 1, 1, 1});
    a.qkv_bias = add_param(name + ".qkv.bias", Shape{3 * channels});
    a.proj_weight = add_param(name + ".proj.weight", Shape{channels, channels, 1, 1, 1});
    a.proj_bias = add_param(name + ".proj.bias", Shape{channels});
    a.norm_groups = cfg_.norm_groups;
    return a;
}

template <typename T>
VelocityNet<T>::VelocityNet(VelocityNetConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int base = cfg_.base_channels;
    const int emb = cfg_.embed_dim();
    const auto& mult = cfg_.channel_multipliers;
    const int last = cfg_.levels();

    cond1_ = make_conv("cond.conv1", 1, cfg_.cond_channels, 3);
    cond2_ = make_conv("cond.conv2", cfg_.cond_channels, cfg_.cond_channels, 3);
    time1_ = make_linear("time.linear1", base, emb);
    time2_ = make_linear("time.linear2", emb, emb);

    int ch = base * mult[0];
    in_conv_ = make_conv("input.conv", 1 + cfg_.cond_channels, ch, 3);
    std::vector<int> skips{ch};
    for (int level = 0; level <= last; ++level) {
        for (int b = 0; b < cfg_.blocks_per_level; ++b) {
            const std::string name = "down." + std::to_string(level) + "." + std::to_string(b);
            Block blk;
            blk.res = make_res(name + ".res", ch, base * mult[level]);
            ch = base * mult[level];
            if (cfg_.attention_at_stage(level)) blk.attn = make_attn(name + ".attn", ch);
            down_blocks_.push_back(std::move(blk));
            skips.push_back(ch);
        }
        if (level != last) {
            Block blk;
            blk.down = make_conv("down." + std::to_string(level) + ".downsample", ch, ch, 3, 2);
            down_blocks_.push_back(std::move(blk));
            skips.push_back(ch);
        }
    }

    mid1_ = make_res("mid.res1", ch, ch);
    mid_attn_ = make_attn("mid.attn", ch);
    mid2_ = make_res("mid.res2", ch, ch);

    for (int level = last; level >= 0; --level) {
        for (int b = 0; b <= cfg_.blocks_per_level; ++b) {
            const std::string name = "up." + std::to_string(level) + "." + std::to_string(b);
            const int skip = skips.back();
            skips.pop_back();
            Block blk;
            blk.res = make_res(name + ".res", ch + skip, base * mult[level]);
            ch = base * mult[level];
            if (cfg_.attention_at_stage(level)) blk.attn = make_attn(name + ".attn", ch);
            if (level > 0 && b == cfg_.blocks_per_level) blk.up = make_conv(name + ".upsample", ch, ch, 3);
            up_blocks_.push_back(std::move(blk));
        }
    }

    out_norm_ = make_norm("out.norm", ch);
    out_conv_ = make_conv("out.conv", ch, 1, 3);
    if (cfg_.zero_init_output) zero_init_ = {"out.conv.weight", "out.conv.bias"};

    initialize(init_seed);
}

template <typename T>
void VelocityNet<T>::initialize(std::uint64_t seed) {
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases of
    // conv/linear layers; unit gain and zero shift for norms.
    std::int64_t fan_in = 1;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto values = p.tensor.mutable_values();
        const auto& name = p.name;
        const bool is_gamma = name.ends_with(".gamma");
        const bool is_beta = name.ends_with(".beta");
        if (name.ends_with(".weight")) {
            fan_in = 1;
            for (std::size_t ax = 1; ax < p.tensor.rank(); ++ax) fan_in *= p.tensor.dim(ax);
        }
        if (is_gamma || is_beta) {
            std::fill(values.begin(), values.end(), is_gamma ? T(1) : T(0));
            continue;
        }
        if (std::find(zero_init_.begin(), zero_init_.end(), name) != zero_init_.end()) {
            std::fill(values.begin(), values.end(), T(0));
            continue;
        }
        // Biases follow their weight, so fan_in carries over.
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        rng::Stream stream(rng::derive_key({seed, static_cast<std::uint64_t>(i)}));
        for (auto& v : values) v = static_cast<T>(stream.uniform(-bound, bound));
    }
}

template <typename T>
std::int64_t VelocityNet<T>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

template <typename T>
void VelocityNet<T>::set_requires_grad(bool on) {
    for (auto& p : params_) p.tensor.set_requires_grad(on);
}

template <typename T>
void VelocityNet<T>::zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
}

template <typename T>
Tensor<T> VelocityNet<T>::apply(const Conv& c, const Tensor<T>& x) const {
    return ops::conv3d(x, c.weight, c.bias, {c.stride, c.padding});
}

template <typename T>
Tensor<T> VelocityNet<T>::apply(const Norm& n, const Tensor<T>& x) const {
    return ops::group_norm(x, cfg_.norm_groups, n.gamma, n.beta);
}

template <typename T>
Tensor<T> VelocityNet<T>::apply(const ResBlock& r, const Tensor<T>& x, const Tensor<T>& emb_act,
                                const ForwardOptions& o) const {
    auto h = apply(r.conv1, ops::silu(apply(r.norm1, x)));
    h = ops::add_channel_bias(h, ops::linear(emb_act, r.emb.weight, r.emb.bias));
    h = ops::silu(apply(r.norm2, h));
    h = ops::dropout(h, cfg_.dropout_p, ops::DropoutKey{o.dropout_seed, r.dropout_id, o.step}, o.training);
    h = apply(r.conv2, h);
    const auto skip = r.skip ? apply(*r.skip, x) : x;
    return ops::add(skip, h);
}

template <typename T>
Tensor<T> VelocityNet<T>::encode_condition(const Tensor<T>& c) const {
    if (c.rank() != 5 || c.dim(1) != 1) {
        throw ShapeError("encode_condition: expected [N,1,D,H,W], got " + shape_str(c.shape()));
    }
    return ops::relu(apply(cond2_, ops::relu(apply(cond1_, c))));
}

template <typename T>
Tensor<T> VelocityNet<T>::time_features(std::span<const double> t) const {
    const int dim = cfg_.base_channels;
    const int half = dim / 2;
    std::vector<T> out(t.size() * static_cast<std::size_t>(dim), T(0));
    for (std::size_t n = 0; n < t.size(); ++n) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(kMaxPeriod) * i / half);
            const double arg = kTimeScale * t[n] * freq;
            out[n * dim + i] = static_cast<T>(std::cos(arg));
            out[n * dim + half + i] = static_cast<T>(std::sin(arg));
        }
    }
    return Tensor<T>(Shape{static_cast<std::int64_t>(t.size()), dim}, std::move(out));
}

template <typename T>
Tensor<T> VelocityNet<T>::forward(const Tensor<T>& x_t, std::span<const double> t, const Tensor<T>& c_features,
                                  const ForwardOptions& opts) const {
    if (x_t.rank() != 5 || x_t.dim(1) != 1) {
        throw ShapeError("forward: x_t must be [N,1,D,H,W], got " + shape_str(x_t.shape()));
    }
    if (static_cast<std::int64_t>(t.size()) != x_t.dim(0)) {
        throw ShapeError("forward: " + std::to_string(t.size()) + " time values for batch of " +
                         std::to_string(x_t.dim(0)));
    }
    for (double ti : t) {
        if (!(ti >= 0.0 && ti <= 1.0)) throw DomainError("forward: t must lie in [0, 1]");
    }
    const std::int64_t factor = std::int64_t{1} << cfg_.levels();
    for (std::size_t ax = 2; ax < 5; ++ax) {
        if (x_t.dim(ax) % factor != 0) {
            throw ShapeError("forward: spatial axis " + std::to_string(ax) + " of extent " +
                             std::to_string(x_t.dim(ax)) + " is not divisible by " + std::to_string(factor));
        }
    }
    if (c_features.rank() != 5 || c_features.dim(1) != cfg_.cond_channels) {
        throw ShapeError("forward: conditioning features must be [N," + std::to_string(cfg_.cond_channels) +
                         ",D,H,W], got " + shape_str(c_features.shape()));
    }

    const auto temb = ops::linear(ops::silu(ops::linear(time_features(t), time1_.weight, time1_.bias)),
                                  time2_.weight, time2_.bias);
    const auto emb_act = ops::silu(temb);

    auto h = apply(in_conv_, ops::concat_channels(x_t, c_features));
    std::vector<Tensor<T>> skips{h};
    for (const auto& blk : down_blocks_) {
        if (blk.down) {
            h = apply(*blk.down, h);
        } else {
            h = apply(*blk.res, h, emb_act, opts);
            if (blk.attn) h = ops::attention_block(h, *blk.attn, cfg_.heads);
        }
        skips.push_back(h);
    }

    h = apply(mid1_, h, emb_act, opts);
    h = ops::attention_block(h, mid_attn_, cfg_.heads);
    h = apply(mid2_, h, emb_act, opts);

    for (const auto& blk : up_blocks_) {
        h = ops::concat_channels(h, skips.back());
        skips.pop_back();
        h = apply(*blk.res, h, emb_act, opts);
        if (blk.attn) h = ops::attention_block(h, *blk.attn, cfg_.heads);
        if (blk.up) h = apply(*blk.up, ops::upsample_nearest2x(h));
    }
    return apply(out_conv_, ops::silu(apply(out_norm_, h)));
}

template class VelocityNet<float>;
template class VelocityNet<double>;

} // namespace flowct::net
