#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "flowct/volume.hpp"

namespace flowct::io {

enum class Modality { mr_like, cbct_like };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);

struct TissueEntry {
    int label = 0;
    double mr_intensity = 0.0;  // source value for mr_like phantoms
    double hu = 0.0;            // target value
};

// Label 0 is background and label 1 the body's soft tissue; inner ellipsoids
// draw labels from the rest of the table.
std::vector<TissueEntry> default_tissue_table();

struct PhantomSpec {
    std::uint64_t seed = 0;
    Index3 shape{32, 32, 32};
    Vec3 spacing{1.0, 1.0, 1.0};
    int n_ellipsoids = 5;  // body included
    Modality modality = Modality::mr_like;
    double noise_hu = 10.0;        // peak amplitude of the smooth texture
    double cbct_cupping_hu = 80.0; // depth of the radial CBCT shading
    std::vector<TissueEntry> tissues = default_tissue_table();

    void validate() const;
};

// Axis-aligned ellipsoid in voxel-index coordinates.
struct Ellipsoid {
    Vec3 center{};
    Vec3 radii{};
    int label = 0;

    bool contains(double i, double j, double k) const;
};

struct PhantomPair {
    Volume source;  // raw (mr_like) or HU (cbct_like)
    Volume target;  // HU
    Volume mask;    // 0/1
    std::vector<Ellipsoid> ellipsoids;  // body first, then inner structures in paint order
};

// Deterministic in `spec`. Target is integer HU stored as MET_SHORT; outside
// the body the target is -1024 and the source 0.
PhantomPair generate_phantom_pair(const PhantomSpec& spec);

} // namespace flowct::io
