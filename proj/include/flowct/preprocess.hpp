#pragma once

#include "flowct/volume.hpp"

namespace flowct::prep {

struct NormalizationSpec {
    double mr_clip = 3.0;
    double hu_min = -1024.0;
    double hu_max = 3071.0;
    double hu_scale = 1000.0;

    void validate() const;
};

enum class Interp { trilinear, nearest };

// Samples `v` on a grid of target_dims x target_spacing that shares v's
// origin. Positions outside the source take the nearest edge value.
Volume resample(const Volume& v, Index3 target_dims, Vec3 target_spacing, Interp mode);

// The model grid covers the full physical extent of `v` with side^3 voxels.
Volume to_model_grid(const Volume& v, int side, Interp mode = Interp::trilinear);

struct MrNormalization {
    Volume volume;
    bool degenerate = false;  // std < 1e-8: output is all zeros
};

// Whole-volume z-score followed by clipping to [-mr_clip, mr_clip].
MrNormalization normalize_mr(const Volume& v, const NormalizationSpec& spec = {});

// Clip to [hu_min, hu_max] and divide by hu_scale.
Volume normalize_ct(const Volume& v, const NormalizationSpec& spec = {});

// Nearest-neighbour resample of a normalized sCT onto the reference grid,
// multiply by hu_scale, clamp to the HU range, and take the reference's
// spacing and origin. Output values are rounded to float32 precision, which
// makes postprocess(normalize_ct(x)) == x for float32-representable HU.
Volume postprocess(const Volume& sct, const Volume& reference, const NormalizationSpec& spec = {});

} // namespace flowct::prep
