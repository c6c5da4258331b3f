#include "flowct/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "flowct/error.hpp"
#include "flowct/rng.hpp"

namespace flowct::train {

bool RigidTransform::is_identity() const {
    return translation == Vec3{0.0, 0.0, 0.0} && angles == Vec3{0.0, 0.0, 0.0};
}

RigidTransform sample_transform(double translate_range, double rotate_range, std::uint64_t seed, std::uint64_t step) {
    rng::Stream s(rng::derive_key({seed, step, 0x6175676dULL}));
    RigidTransform tf;
    for (auto& x : tf.translation) x = translate_range > 0.0 ? s.uniform(-translate_range, translate_range) : 0.0;
    for (auto& a : tf.angles) a = rotate_range > 0.0 ? s.uniform(-rotate_range, rotate_range) : 0.0;
    return tf;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 multiply(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
        }
    }
    return c;
}

Mat3 rotation(const Vec3& angles) {
    const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
    const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
    const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
    const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
    const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
    const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
    return multiply(rz, multiply(ry, rx));
}

double sample_trilinear(const Volume& v, const Vec3& q, double fill) {
    std::array<std::int64_t, 3> lo{};
    Vec3 f{};
    for (int ax = 0; ax < 3; ++ax) {
        if (q[ax] < 0.0 || q[ax] > static_cast<double>(v.dims[ax] - 1)) return fill;
        lo[ax] = static_cast<std::int64_t>(std::floor(q[ax]));
        f[ax] = q[ax] - static_cast<double>(lo[ax]);
    }
    auto at = [&](int di, int dj, int dk) {
        const auto i = std::min(lo[0] + di, v.dims[0] - 1);
        const auto j = std::min(lo[1] + dj, v.dims[1] - 1);
        const auto k = std::min(lo[2] + dk, v.dims[2] - 1);
        return v.at(i, j, k);
    };
    auto lerp = [](double a, double b, double t) { return t == 0.0 ? a : a + (b - a) * t; };
    const double c00 = lerp(at(0, 0, 0), at(1, 0, 0), f[0]);
    const double c10 = lerp(at(0, 1, 0), at(1, 1, 0), f[0]);
    const double c01 = lerp(at(0, 0, 1), at(1, 0, 1), f[0]);
    const double c11 = lerp(at(0, 1, 1), at(1, 1, 1), f[0]);
    return lerp(lerp(c00, c10, f[1]), lerp(c01, c11, f[1]), f[2]);
}

double sample_nearest(const Volume& v, const Vec3& q, double fill) {
    std::array<std::int64_t, 3> idx{};
    for (int ax = 0; ax < 3; ++ax) {
        idx[ax] = static_cast<std::int64_t>(std::floor(q[ax] + 0.5));
        if (idx[ax] < 0 || idx[ax] >= v.dims[ax]) return fill;
    }
    return v.at(idx[0], idx[1], idx[2]);
}

} // namespace

Volume apply_transform(const Volume& v, const RigidTransform& tf, prep::Interp mode, double fill) {
    if (tf.is_identity()) return v;
    Volume out = v;
    const bool rotate = tf.angles != Vec3{0.0, 0.0, 0.0};
    const Mat3 r = rotation(tf.angles);
    Vec3 c{};
    for (int ax = 0; ax < 3; ++ax) c[ax] = static_cast<double>(v.dims[ax] - 1) / 2.0;

    for (std::int64_t k = 0; k < v.dims[2]; ++k) {
        for (std::int64_t j = 0; j < v.dims[1]; ++j) {
            for (std::int64_t i = 0; i < v.dims[0]; ++i) {
                const Vec3 p{static_cast<double>(i) - tf.translation[0], static_cast<double>(j) - tf.translation[1],
                             static_cast<double>(k) - tf.translation[2]};
                Vec3 q = p;
                if (rotate) {
                    // Inverse rotation is the transpose.
                    const Vec3 d{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
                    for (int a = 0; a < 3; ++a) q[a] = c[a] + r[0][a] * d[0] + r[1][a] * d[1] + r[2][a] * d[2];
                }
                out.at(i, j, k) =
                    mode == prep::Interp::nearest ? sample_nearest(v, q, fill) : sample_trilinear(v, q, fill);
            }
        }
    }
    return out;
}

AugmentedPair augment_pair(const Volume& source, const Volume& target, const Volume& mask, const TrainConfig& cfg,
                           std::uint64_t seed, std::uint64_t step) {
    if (source.dims != target.dims || source.dims != mask.dims) {
        throw ShapeError("augment_pair: source, target and mask must share a grid");
    }
    AugmentedPair out;
    out.transform = sample_transform(cfg.translate_range, cfg.rotate_range, seed, step);
    if (out.transform.is_identity()) {
        out.source = source;
        out.target = target;
        out.mask = mask;
        return out;
    }
    const double src_bg = *std::min_element(source.data.begin(), source.data.end());
    const double tgt_bg = *std::min_element(target.data.begin(), target.data.end());
    out.source = apply_transform(source, out.transform, prep::Interp::trilinear, src_bg);
    out.target = apply_transform(target, out.transform, prep::Interp::trilinear, tgt_bg);
    out.mask = apply_transform(mask, out.transform, prep::Interp::nearest, 0.0);
    return out;
}

} // namespace flowct::train
