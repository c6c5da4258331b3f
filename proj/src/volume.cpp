#include "flowct/volume.hpp"

#include <cmath>
#include <string>

#include "flowct/error.hpp"

namespace flowct {

std::string_view intensity_kind_name(IntensityKind k) {
    switch (k) {
        case IntensityKind::hu: return "HU";
        case IntensityKind::z_scored: return "z_scored";
        case IntensityKind::normalized_hu: return "normalized_HU";
        case IntensityKind::raw: return "raw";
    }
    return "?";
}

std::string_view element_type_name(ElementType e) {
    return e == ElementType::met_short ? "MET_SHORT" : "MET_FLOAT";
}

Volume::Volume(Index3 dims_, Vec3 spacing_, Vec3 origin_, IntensityKind kind_, double fill)
    : dims(dims_), spacing(spacing_), origin(origin_), kind(kind_) {
    for (auto d : dims) {
        if (d <= 0) throw DataError("volume dims must be positive");
    }
    data.assign(static_cast<std::size_t>(size()), fill);
}

bool Volume::same_grid(const Volume& other) const {
    return dims == other.dims && spacing == other.spacing && origin == other.origin;
}

void Volume::validate() const {
    for (int ax = 0; ax < 3; ++ax) {
        if (dims[ax] <= 0) throw DataError("volume axis " + std::to_string(ax) + " has non-positive extent");
        if (!(spacing[ax] > 0.0)) throw DataError("volume axis " + std::to_string(ax) + " has non-positive spacing");
        if (!std::isfinite(origin[ax])) throw DataError("volume origin is not finite");
    }
    if (static_cast<std::int64_t>(data.size()) != size()) {
        throw DataError("volume holds " + std::to_string(data.size()) + " voxels, dims imply " +
                        std::to_string(size()));
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw DataError("volume contains non-finite values");
    }
}

template <typename T>
Tensor<T> to_tensor(const Volume& v) {
    std::vector<T> values(v.data.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(v.data[i]);
    return Tensor<T>(Shape{1, 1, v.dims[2], v.dims[1], v.dims[0]}, std::move(values));
}

template <typename T>
Volume from_tensor(const Tensor<T>& t, const Volume& grid, IntensityKind kind) {
    const Shape want{1, 1, grid.dims[2], grid.dims[1], grid.dims[0]};
    if (t.shape() != want) {
        throw ShapeError("from_tensor: tensor " + shape_str(t.shape()) + " does not match grid " + shape_str(want));
    }
    Volume out = grid;
    out.kind = kind;
    out.element_type = ElementType::met_float;
    const auto tv = t.values();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<double>(tv[i]);
    return out;
}

template Tensor<float> to_tensor<float>(const Volume&);
template Tensor<double> to_tensor<double>(const Volume&);
template Volume from_tensor<float>(const Tensor<float>&, const Volume&, IntensityKind);
template Volume from_tensor<double>(const Tensor<double>&, const Volume&, IntensityKind);

} // namespace flowct
