#include "flowct/mha.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flowct/error.hpp"

namespace flowct::io {

namespace {

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string where(const std::filesystem::path& p) { return p.string() + ": "; }

const std::string& require_key(const std::map<std::string, std::string>& h, const std::string& key,
                               const std::filesystem::path& path) {
    const auto it = h.find(key);
    if (it == h.end()) throw DataError(where(path) + "missing required header key '" + key + "'");
    return it->second;
}

template <typename T>
std::vector<T> parse_list(const std::string& value, std::size_t n, const std::string& key,
                          const std::filesystem::path& path) {
    std::istringstream is(value);
    std::vector<T> out;
    T x{};
    while (is >> x) out.push_back(x);
    if (!is.eof() || out.size() != n) {
        throw DataError(where(path) + "header key '" + key + "' must hold " + std::to_string(n) + " numbers, got '" +
                        value + "'");
    }
    return out;
}

bool is_true(const std::string& v) { return v == "True" || v == "true" || v == "1"; }

} // namespace

Volume read_mha(const std::filesystem::path& path, IntensityKind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(where(path) + "cannot open file");

    std::map<std::string, std::string> header;
    std::string line;
    bool saw_data_file = false;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (trim(line).empty()) continue;
            throw DataError(where(path) + "malformed header line '" + trim(line) + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        header[key] = trim(line.substr(eq + 1));
        if (key == "ElementDataFile") {
            saw_data_file = true;
            break;
        }
    }
    if (!saw_data_file) throw DataError(where(path) + "missing required header key 'ElementDataFile'");

    if (auto it = header.find("ObjectType"); it != header.end() && it->second != "Image") {
        throw DataError(where(path) + "header key 'ObjectType' must be Image, got '" + it->second + "'");
    }
    const std::string& ndims = require_key(header, "NDims", path);
    if (trim(ndims) != "3") {
        throw DataError(where(path) + "unsupported dimensionality: header key 'NDims' = " + ndims + ", expected 3");
    }
    for (const char* key : {"CompressedData"}) {
        if (auto it = header.find(key); it != header.end() && is_true(it->second)) {
            throw DataError(where(path) + "compressed payloads are not supported (header key '" + key + "')");
        }
    }
    for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"}) {
        if (auto it = header.find(key); it != header.end() && is_true(it->second)) {
            throw DataError(where(path) + "big-endian payloads are not supported (header key '" + key + "')");
        }
    }
    if (const auto& f = header.at("ElementDataFile"); f != "LOCAL") {
        throw DataError(where(path) + "header key 'ElementDataFile' must be LOCAL, got '" + f + "'");
    }

    const auto dim_size = parse_list<std::int64_t>(require_key(header, "DimSize", path), 3, "DimSize", path);
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    if (auto it = header.find("ElementSpacing"); it != header.end()) {
        const auto s = parse_list<double>(it->second, 3, "ElementSpacing", path);
        spacing = {s[0], s[1], s[2]};
    }
    for (const char* key : {"Offset", "Origin", "Position"}) {
        if (auto it = header.find(key); it != header.end()) {
            const auto o = parse_list<double>(it->second, 3, key, path);
            origin = {o[0], o[1], o[2]};
            break;
        }
    }

    const std::string& type = require_key(header, "ElementType", path);
    ElementType element_type;
    std::size_t bytes_per;
    if (type == "MET_SHORT") {
        element_type = ElementType::met_short;
        bytes_per = 2;
    } else if (type == "MET_FLOAT") {
        element_type = ElementType::met_float;
        bytes_per = 4;
    } else {
        throw DataError(where(path) + "unsupported header key 'ElementType' = " + type);
    }

    for (int ax = 0; ax < 3; ++ax) {
        if (dim_size[ax] <= 0) throw DataError(where(path) + "header key 'DimSize' has a non-positive extent");
    }
    Volume v({dim_size[0], dim_size[1], dim_size[2]}, spacing, origin, kind);
    v.element_type = element_type;

    const std::size_t expected = static_cast<std::size_t>(v.size()) * bytes_per;
    std::vector<char> payload(expected);
    in.read(payload.data(), static_cast<std::streamsize>(expected));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != expected) {
        throw DataError(where(path) + "truncated payload: DimSize and ElementType " + type + " imply " +
                        std::to_string(expected) + " bytes, found " + std::to_string(got));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw DataError(where(path) + "payload is longer than DimSize and ElementType imply");
    }

    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (element_type == ElementType::met_short) {
            std::int16_t x;
            std::memcpy(&x, payload.data() + 2 * i, 2);
            v.data[i] = x;
        } else {
            float x;
            std::memcpy(&x, payload.data() + 4 * i, 4);
            v.data[i] = x;
        }
    }
    return v;
}

void write_mha(const Volume& v, const std::filesystem::path& path) {
    v.validate();
    std::vector<char> payload;
    if (v.element_type == ElementType::met_short) {
        payload.resize(v.data.size() * 2);
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            const double x = v.data[i];
            if (x != std::round(x) || x < std::numeric_limits<std::int16_t>::min() ||
                x > std::numeric_limits<std::int16_t>::max()) {
                throw DataError(where(path) + "value " + std::to_string(x) + " at voxel " + std::to_string(i) +
                                " is not representable as MET_SHORT");
            }
            const auto s = static_cast<std::int16_t>(x);
            std::memcpy(payload.data() + 2 * i, &s, 2);
        }
    } else {
        payload.resize(v.data.size() * 4);
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            const auto f = static_cast<float>(v.data[i]);
            std::memcpy(payload.data() + 4 * i, &f, 4);
        }
    }

    std::ostringstream h;
    h << std::setprecision(17);
    h << "ObjectType = Image\n";
    h << "NDims = 3\n";
    h << "BinaryData = True\n";
    h << "BinaryDataByteOrderMSB = False\n";
    h << "CompressedData = False\n";
    h << "Offset = " << v.origin[0] << ' ' << v.origin[1] << ' ' << v.origin[2] << '\n';
    h << "ElementSpacing = " << v.spacing[0] << ' ' << v.spacing[1] << ' ' << v.spacing[2] << '\n';
    h << "DimSize = " << v.dims[0] << ' ' << v.dims[1] << ' ' << v.dims[2] << '\n';
    h << "ElementType = " << element_type_name(v.element_type) << '\n';
    h << "ElementDataFile = LOCAL\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(where(path) + "cannot open for writing");
    const std::string header = h.str();
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError(where(path) + "write failed");
}

} // namespace flowct::io
