#include "flowct/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowct/error.hpp"

namespace flowct::prep {

void NormalizationSpec::validate() const {
    if (!(hu_min < hu_max)) throw ConfigError("normalization: hu_min must be below hu_max");
    if (!(hu_scale > 0.0)) throw ConfigError("normalization: hu_scale must be positive");
    if (!(mr_clip > 0.0)) throw ConfigError("normalization: mr_clip must be positive");
}

namespace {

struct AxisSample {
    std::int64_t lo, hi;
    double frac;
};

// Continuous source index for target index i, clamped to the source extent.
AxisSample axis_sample(std::int64_t i, double ratio, std::int64_t n) {
    double x = static_cast<double>(i) * ratio;
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(x));
    const auto hi = std::min(lo + 1, n - 1);
    return {lo, hi, x - static_cast<double>(lo)};
}

std::int64_t axis_nearest(std::int64_t i, double ratio, std::int64_t n) {
    const double x = static_cast<double>(i) * ratio;
    const auto idx = static_cast<std::int64_t>(std::floor(x + 0.5));
    return std::clamp<std::int64_t>(idx, 0, n - 1);
}

} // namespace

Volume resample(const Volume& v, Index3 target_dims, Vec3 target_spacing, Interp mode) {
    for (int ax = 0; ax < 3; ++ax) {
        if (target_dims[ax] <= 0) {
            throw DomainError("resample: target axis " + std::to_string(ax) + " has non-positive extent");
        }
        if (!(target_spacing[ax] > 0.0)) {
            throw DomainError("resample: target axis " + std::to_string(ax) + " has non-positive spacing");
        }
    }
    v.validate();
    Volume out(target_dims, target_spacing, v.origin, v.kind);
    out.element_type = v.element_type;
    if (target_dims == v.dims && target_spacing == v.spacing) {
        out.data = v.data;
        return out;
    }
    const Vec3 ratio{target_spacing[0] / v.spacing[0], target_spacing[1] / v.spacing[1],
                     target_spacing[2] / v.spacing[2]};

    if (mode == Interp::nearest) {
        for (std::int64_t k = 0; k < target_dims[2]; ++k) {
            const auto sk = axis_nearest(k, ratio[2], v.dims[2]);
            for (std::int64_t j = 0; j < target_dims[1]; ++j) {
                const auto sj = axis_nearest(j, ratio[1], v.dims[1]);
                for (std::int64_t i = 0; i < target_dims[0]; ++i) {
                    out.at(i, j, k) = v.at(axis_nearest(i, ratio[0], v.dims[0]), sj, sk);
                }
            }
        }
        return out;
    }

    for (std::int64_t k = 0; k < target_dims[2]; ++k) {
        const auto z = axis_sample(k, ratio[2], v.dims[2]);
        for (std::int64_t j = 0; j < target_dims[1]; ++j) {
            const auto y = axis_sample(j, ratio[1], v.dims[1]);
            for (std::int64_t i = 0; i < target_dims[0]; ++i) {
                const auto x = axis_sample(i, ratio[0], v.dims[0]);
                auto lerp = [](double a, double b, double f) { return f == 0.0 ? a : a + (b - a) * f; };
                const double c00 = lerp(v.at(x.lo, y.lo, z.lo), v.at(x.hi, y.lo, z.lo), x.frac);
                const double c10 = lerp(v.at(x.lo, y.hi, z.lo), v.at(x.hi, y.hi, z.lo), x.frac);
                const double c01 = lerp(v.at(x.lo, y.lo, z.hi), v.at(x.hi, y.lo, z.hi), x.frac);
                const double c11 = lerp(v.at(x.lo, y.hi, z.hi), v.at(x.hi, y.hi, z.hi), x.frac);
                out.at(i, j, k) = lerp(lerp(c00, c10, y.frac), lerp(c01, c11, y.frac), z.frac);
            }
        }
    }
    return out;
}

Volume to_model_grid(const Volume& v, int side, Interp mode) {
    if (side <= 0) throw DomainError("to_model_grid: side must be positive");
    const Index3 dims{side, side, side};
    Vec3 spacing{};
    for (int ax = 0; ax < 3; ++ax) {
        spacing[ax] = static_cast<double>(v.dims[ax]) * v.spacing[ax] / static_cast<double>(side);
    }
    return resample(v, dims, spacing, mode);
}

MrNormalization normalize_mr(const Volume& v, const NormalizationSpec& spec) {
    if (v.kind != IntensityKind::raw) {
        throw DomainError("normalize_mr expects a raw intensity volume, got " +
                          std::string(intensity_kind_name(v.kind)));
    }
    spec.validate();
    v.validate();
    double mean = 0.0;
    for (double x : v.data) mean += x;
    mean /= static_cast<double>(v.data.size());
    double var = 0.0;
    for (double x : v.data) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(v.data.size()));

    MrNormalization out{v, false};
    out.volume.kind = IntensityKind::z_scored;
    out.volume.element_type = ElementType::met_float;
    if (sd < 1e-8) {
        std::fill(out.volume.data.begin(), out.volume.data.end(), 0.0);
        out.degenerate = true;
        return out;
    }
    for (auto& x : out.volume.data) x = std::clamp((x - mean) / sd, -spec.mr_clip, spec.mr_clip);
    return out;
}

Volume normalize_ct(const Volume& v, const NormalizationSpec& spec) {
    if (v.kind != IntensityKind::hu) {
        throw DomainError("normalize_ct expects an HU volume, got " + std::string(intensity_kind_name(v.kind)));
    }
    spec.validate();
    Volume out = v;
    out.kind = IntensityKind::normalized_hu;
    out.element_type = ElementType::met_float;
    for (auto& x : out.data) x = std::clamp(x, spec.hu_min, spec.hu_max) / spec.hu_scale;
    return out;
}

Volume postprocess(const Volume& sct, const Volume& reference, const NormalizationSpec& spec) {
    spec.validate();
    for (int ax = 0; ax < 3; ++ax) {
        if (reference.dims[ax] <= 0 || !(reference.spacing[ax] > 0.0)) {
            throw DataError("postprocess: reference volume is missing grid metadata on axis " + std::to_string(ax));
        }
    }
    // Resample by index-space ratio so that the model grid's extent maps onto
    // the reference's extent.
    Vec3 model_spacing{};
    for (int ax = 0; ax < 3; ++ax) {
        model_spacing[ax] = static_cast<double>(reference.dims[ax]) * reference.spacing[ax] /
                            static_cast<double>(sct.dims[ax]);
    }
    Volume on_model = sct;
    on_model.spacing = model_spacing;
    on_model.origin = reference.origin;
    Volume out = resample(on_model, reference.dims, reference.spacing, Interp::nearest);
    for (auto& x : out.data) {
        const double hu = std::clamp(x * spec.hu_scale, spec.hu_min, spec.hu_max);
        x = static_cast<double>(static_cast<float>(hu));
    }
    out.spacing = reference.spacing;
    out.origin = reference.origin;
    out.kind = IntensityKind::hu;
    out.element_type = ElementType::met_float;
    return out;
}

} // namespace flowct::prep
