#pragma once

#include <cstdint>

#include "flowct/preprocess.hpp"
#include "flowct/train_config.hpp"

namespace flowct::train {

// Rigid motion in voxel-index space about the volume center: rotation
// Rz * Ry * Rx by `angles` (x, y, z order), then translation. Content moves by
// +translation.
struct RigidTransform {
    Vec3 translation{0.0, 0.0, 0.0};
    Vec3 angles{0.0, 0.0, 0.0};

    bool is_identity() const;
};

// Uniform in [-range, range] per axis, keyed by (seed, step).
RigidTransform sample_transform(double translate_range, double rotate_range, std::uint64_t seed, std::uint64_t step);

// Pull-back resampling; samples falling outside the volume take `fill`.
Volume apply_transform(const Volume& v, const RigidTransform& tf, prep::Interp mode, double fill);

struct AugmentedPair {
    Volume source, target, mask;
    RigidTransform transform;
};

// One transform per call, applied identically to all three volumes:
// trilinear for images (filled with each image's minimum), nearest for the
// mask (filled with 0). Zero ranges return exact copies.
AugmentedPair augment_pair(const Volume& source, const Volume& target, const Volume& mask, const TrainConfig& cfg,
                           std::uint64_t seed, std::uint64_t step);

} // namespace flowct::train
