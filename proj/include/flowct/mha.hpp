#pragma once

#include <filesystem>

#include "flowct/volume.hpp"

namespace flowct::io {

// Reads an uncompressed, single-file (ElementDataFile = LOCAL) little-endian
// MetaImage with NDims = 3 and ElementType MET_SHORT or MET_FLOAT. The file
// format carries no intensity semantics, so the caller supplies `kind`.
Volume read_mha(const std::filesystem::path& path, IntensityKind kind = IntensityKind::raw);

// Writes `v` using v.element_type. MET_SHORT requires integer values in the
// int16 range; MET_FLOAT stores float32, so doubles that are not float32
// representable are rounded.
void write_mha(const Volume& v, const std::filesystem::path& path);

} // namespace flowct::io
