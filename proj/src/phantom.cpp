#include "flowct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "flowct/error.hpp"
#include "flowct/rng.hpp"

namespace flowct::io {

std::string_view modality_name(Modality m) { return m == Modality::mr_like ? "mr_like" : "cbct_like"; }

Modality parse_modality(std::string_view name) {
    if (name == "mr_like") return Modality::mr_like;
    if (name == "cbct_like") return Modality::cbct_like;
    throw ConfigError("unknown modality '" + std::string(name) + "' (expected mr_like or cbct_like)");
}

std::vector<TissueEntry> default_tissue_table() {
    // MR-like levels invert the contrast within the soft-tissue group (fat
    // brightest) while lung and bone sit in well separated dark bands. After
    // whole-volume z-scoring every tissue occupies its own interval below the
    // clip for any body the generator draws, so the source determines the
    // target and tissues with very different HU are never neighbours.
    return {
        {0, 0.0, -1024.0},  {1, 1000.0, 40.0}, {2, 1400.0, -100.0}, {3, 200.0, -800.0},
        {4, 680.0, 700.0},  {5, 450.0, 1500.0}, {6, 820.0, 60.0},   {7, 1150.0, 30.0},
    };
}

void PhantomSpec::validate() const {
    for (int ax = 0; ax < 3; ++ax) {
        if (shape[ax] < 8) throw ConfigError("phantom: every axis needs at least 8 voxels");
        if (!(spacing[ax] > 0.0)) throw ConfigError("phantom: spacing must be positive");
    }
    if (n_ellipsoids < 1 || n_ellipsoids > 8) throw ConfigError("phantom: n_ellipsoids must be in [1, 8]");
    if (noise_hu < 0.0 || noise_hu > 50.0) throw ConfigError("phantom: noise_hu must be in [0, 50]");
    if (cbct_cupping_hu < 0.0) throw ConfigError("phantom: cbct_cupping_hu must be nonnegative");
    if (tissues.size() < 3) throw ConfigError("phantom: tissue table needs background, body and one inner tissue");
    for (std::size_t i = 0; i < tissues.size(); ++i) {
        if (tissues[i].label != static_cast<int>(i)) throw ConfigError("phantom: tissue labels must be 0..n-1 in order");
        if (tissues[i].hu < -1024.0 || tissues[i].hu > 3071.0) throw ConfigError("phantom: tissue HU out of range");
    }
    if (tissues[0].hu != -1024.0) throw ConfigError("phantom: background tissue must be -1024 HU");
    for (std::size_t i = 1; i < tissues.size(); ++i) {
        if (tissues[i].hu - noise_hu <= -1024.0 + noise_hu) {
            throw ConfigError("phantom: tissue " + std::to_string(i) + " is indistinguishable from background");
        }
    }
}

bool Ellipsoid::contains(double i, double j, double k) const {
    const double x = (i - center[0]) / radii[0];
    const double y = (j - center[1]) / radii[1];
    const double z = (k - center[2]) / radii[2];
    return x * x + y * y + z * z <= 1.0;
}

namespace {

// Sum of a few low-frequency plane waves, bounded by `amplitude`.
struct SmoothField {
    static constexpr int kWaves = 3;
    Vec3 freq[kWaves];
    double phase[kWaves];
    double amplitude;

    double operator()(double i, double j, double k) const {
        double acc = 0.0;
        for (int w = 0; w < kWaves; ++w) {
            acc += std::sin(freq[w][0] * i + freq[w][1] * j + freq[w][2] * k + phase[w]);
        }
        return amplitude * acc / kWaves;
    }
};

} // namespace

PhantomPair generate_phantom_pair(const PhantomSpec& spec) {
    spec.validate();
    rng::Stream s(rng::derive_key({spec.seed, 0x7068616e746f6dULL}));
    const auto& d = spec.shape;

    std::vector<Ellipsoid> ells;
    Ellipsoid body;
    body.label = 1;
    for (int ax = 0; ax < 3; ++ax) {
        const double n = static_cast<double>(d[ax]);
        body.center[ax] = (n - 1.0) / 2.0 + s.uniform(-0.02, 0.02) * n;
        // Half a voxel of clearance keeps the outermost voxels empty.
        const double room = std::min(body.center[ax], n - 1.0 - body.center[ax]) - 0.5;
        body.radii[ax] = std::min(s.uniform(0.40, 0.42) * n, room);
    }
    ells.push_back(body);

    const auto n_tissues = static_cast<std::uint64_t>(spec.tissues.size());
    for (int e = 1; e < spec.n_ellipsoids; ++e) {
        Ellipsoid in;
        in.label = 2 + static_cast<int>(s.below(n_tissues - 2));
        for (int ax = 0; ax < 3; ++ax) {
            in.center[ax] = body.center[ax] + s.uniform(-0.45, 0.45) * body.radii[ax];
            in.radii[ax] = s.uniform(0.18, 0.45) * body.radii[ax];
        }
        ells.push_back(in);
    }

    SmoothField noise{};
    noise.amplitude = spec.noise_hu;
    for (int w = 0; w < SmoothField::kWaves; ++w) {
        for (int ax = 0; ax < 3; ++ax) {
            noise.freq[w][ax] = s.uniform(-1.0, 1.0) * 2.0 * std::numbers::pi / static_cast<double>(d[ax]) * 1.5;
        }
        noise.phase[w] = s.uniform(0.0, 2.0 * std::numbers::pi);
    }

    PhantomPair p;
    const Vec3 origin{0.0, 0.0, 0.0};
    const bool mr = spec.modality == Modality::mr_like;
    p.target = Volume(d, spec.spacing, origin, IntensityKind::hu, -1024.0);
    p.target.element_type = ElementType::met_short;
    p.source = Volume(d, spec.spacing, origin, mr ? IntensityKind::raw : IntensityKind::hu, 0.0);
    p.source.element_type = mr ? ElementType::met_float : ElementType::met_short;
    p.mask = Volume(d, spec.spacing, origin, IntensityKind::raw, 0.0);
    p.mask.element_type = ElementType::met_short;

    for (std::int64_t k = 0; k < d[2]; ++k) {
        for (std::int64_t j = 0; j < d[1]; ++j) {
            for (std::int64_t i = 0; i < d[0]; ++i) {
                const auto fi = static_cast<double>(i), fj = static_cast<double>(j), fk = static_cast<double>(k);
                if (!body.contains(fi, fj, fk)) continue;
                int label = body.label;
                for (std::size_t e = 1; e < ells.size(); ++e) {
                    if (ells[e].contains(fi, fj, fk)) label = ells[e].label;
                }
                const auto& tissue = spec.tissues[static_cast<std::size_t>(label)];
                const double tex = noise(fi, fj, fk);
                const double hu = std::clamp(std::round(tissue.hu + tex), -1023.0, 3071.0);
                p.mask.at(i, j, k) = 1.0;
                p.target.at(i, j, k) = hu;
                if (mr) {
                    p.source.at(i, j, k) = tissue.mr_intensity + tex;
                } else {
                    double r2 = 0.0;
                    const Vec3 pos{fi, fj, fk};
                    for (int ax = 0; ax < 3; ++ax) {
                        const double q = (pos[ax] - body.center[ax]) / body.radii[ax];
                        r2 += q * q;
                    }
                    // Cupping: the periphery reads brighter than the center.
                    const double shade = spec.cbct_cupping_hu * (r2 - 0.5);
                    p.source.at(i, j, k) = std::clamp(std::round(hu + shade), -1024.0, 3071.0);
                }
            }
        }
    }
    p.ellipsoids = std::move(ells);
    return p;
}

} // namespace flowct::io
