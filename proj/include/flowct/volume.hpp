#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "flowct/tensor.hpp"

namespace flowct {

using Index3 = std::array<std::int64_t, 3>;
using Vec3 = std::array<double, 3>;

enum class IntensityKind { hu, z_scored, normalized_hu, raw };
enum class ElementType { met_short, met_float };

std::string_view intensity_kind_name(IntensityKind k);
std::string_view element_type_name(ElementType e);

// 3D scalar grid with physical metadata. Axis 0 (x) varies fastest in
// `data`; origin is the physical position of the center of voxel (0,0,0).
struct Volume {
    Index3 dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    IntensityKind kind = IntensityKind::raw;
    ElementType element_type = ElementType::met_float;  // on-disk representation
    std::vector<double> data;

    Volume() = default;
    Volume(Index3 dims, Vec3 spacing, Vec3 origin, IntensityKind kind, double fill = 0.0);

    std::int64_t size() const { return dims[0] * dims[1] * dims[2]; }
    std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const { return i + dims[0] * (j + dims[1] * k); }
    double at(std::int64_t i, std::int64_t j, std::int64_t k) const { return data[static_cast<std::size_t>(index(i, j, k))]; }
    double& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data[static_cast<std::size_t>(index(i, j, k))]; }

    bool same_grid(const Volume& other) const;
    // Throws DataError on non-positive dims/spacing, size mismatch or
    // non-finite data.
    void validate() const;
};

// Volume <-> [1,1,nz,ny,nx] tensor (same memory order).
template <typename T>
Tensor<T> to_tensor(const Volume& v);

// Copies values of a [1,1,nz,ny,nx] tensor into a volume with the grid
// metadata of `grid`.
template <typename T>
Volume from_tensor(const Tensor<T>& t, const Volume& grid, IntensityKind kind);

} // namespace flowct
