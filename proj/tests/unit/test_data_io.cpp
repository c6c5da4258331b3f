#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "flowct/dataset.hpp"
#include "flowct/error.hpp"
#include "flowct/mha.hpp"
#include "flowct/phantom.hpp"
#include "test_util.hpp"

using namespace flowct;
using namespace flowct::io;
namespace fs = std::filesystem;

namespace {

void write_raw(const fs::path& p, const std::string& header, std::size_t payload_bytes) {
    std::ofstream out(p, std::ios::binary);
    out << header;
    const std::string payload(payload_bytes, '\0');
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

std::string header_444(const std::string& type, const std::string& extra = "", const std::string& ndims = "3") {
    return "ObjectType = Image\nNDims = " + ndims +
           "\nBinaryData = True\nBinaryDataByteOrderMSB = False\n" + extra +
           "Offset = 0 0 0\nElementSpacing = 1 1 1\nDimSize = 4 4 4\nElementType = " + type +
           "\nElementDataFile = LOCAL\n";
}

std::string error_of(const fs::path& p) {
    try {
        read_mha(p);
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

std::vector<CaseEntry> fake_cases(int n) {
    std::vector<CaseEntry> cases;
    for (int i = 0; i < n; ++i) cases.push_back(case_paths("/nowhere", "case_" + std::to_string(i)));
    return cases;
}

} // namespace

TEST_CASE("phantom generation is deterministic in the spec") {
    for (auto modality : {Modality::mr_like, Modality::cbct_like}) {
        PhantomSpec spec;
        spec.seed = 99;
        spec.modality = modality;
        const auto a = generate_phantom_pair(spec);
        const auto b = generate_phantom_pair(spec);
        CHECK(a.source.data == b.source.data);
        CHECK(a.target.data == b.target.data);
        CHECK(a.mask.data == b.mask.data);
        spec.seed = 100;
        CHECK(generate_phantom_pair(spec).target.data != a.target.data);
    }
}

TEST_CASE("phantom mask is the set of voxels above the noise floor") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.modality = seed % 2 ? Modality::cbct_like : Modality::mr_like;
        const auto p = generate_phantom_pair(spec);
        std::int64_t n = 0;
        for (std::size_t i = 0; i < p.mask.data.size(); ++i) {
            const bool above = p.target.data[i] > -1024.0 + spec.noise_hu;
            CHECK((p.mask.data[i] == 1.0) == above);
            n += above;
            CHECK(p.target.data[i] >= -1024.0);
            CHECK(p.target.data[i] <= 3071.0);
            CHECK(p.target.data[i] == std::round(p.target.data[i]));
            if (p.mask.data[i] == 0.0) {
                CHECK(p.target.data[i] == -1024.0);
                CHECK(p.source.data[i] == 0.0);
            }
        }
        CHECK(n > 0);
    }
}

TEST_CASE("phantom body lies strictly inside the volume") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.shape = {16 + static_cast<std::int64_t>(seed), 16, 24};
        const auto p = generate_phantom_pair(spec);
        for (std::int64_t k = 0; k < spec.shape[2]; ++k)
            for (std::int64_t j = 0; j < spec.shape[1]; ++j)
                for (std::int64_t i = 0; i < spec.shape[0]; ++i) {
                    const bool border = i == 0 || j == 0 || k == 0 || i == spec.shape[0] - 1 ||
                                        j == spec.shape[1] - 1 || k == spec.shape[2] - 1;
                    if (border) CHECK(p.mask.at(i, j, k) == 0.0);
                }
    }
}

TEST_CASE("single noiseless ellipsoid gives two target values and the analytic count") {
    PhantomSpec spec;
    spec.seed = 5;
    spec.n_ellipsoids = 1;
    spec.noise_hu = 0.0;
    const auto p = generate_phantom_pair(spec);
    const std::set<double> values(p.target.data.begin(), p.target.data.end());
    CHECK(values == std::set<double>{-1024.0, spec.tissues[1].hu});

    REQUIRE(p.ellipsoids.size() == 1);
    const auto& e = p.ellipsoids[0];
    std::int64_t inside = 0, labelled = 0;
    for (std::int64_t k = 0; k < 32; ++k)
        for (std::int64_t j = 0; j < 32; ++j)
            for (std::int64_t i = 0; i < 32; ++i) {
                const double x = (static_cast<double>(i) - e.center[0]) / e.radii[0];
                const double y = (static_cast<double>(j) - e.center[1]) / e.radii[1];
                const double z = (static_cast<double>(k) - e.center[2]) / e.radii[2];
                inside += x * x + y * y + z * z <= 1.0;
                labelled += p.target.at(i, j, k) == spec.tissues[1].hu;
            }
    CHECK(labelled == inside);
    // Lattice count of an ellipsoid with radii near 10 voxels is within a few
    // percent of its volume.
    const double analytic = 4.0 / 3.0 * std::numbers::pi * e.radii[0] * e.radii[1] * e.radii[2];
    CHECK(std::abs(static_cast<double>(inside) - analytic) / analytic < 0.05);
}

TEST_CASE("mr-like source inverts soft-tissue contrast and cbct-like tracks HU") {
    PhantomSpec spec;
    spec.seed = 3;
    spec.noise_hu = 0.0;
    const auto mr = generate_phantom_pair(spec);
    spec.modality = Modality::cbct_like;
    spec.cbct_cupping_hu = 0.0;
    const auto cb = generate_phantom_pair(spec);
    for (std::size_t i = 0; i < mr.target.data.size(); ++i) {
        if (mr.mask.data[i] == 0.0) continue;
        bool found = false;
        for (const auto& t : spec.tissues) {
            if (t.hu == mr.target.data[i]) found |= t.mr_intensity == mr.source.data[i];
        }
        CHECK(found);
        CHECK(cb.source.data[i] == cb.target.data[i]);
    }
}

TEST_CASE("phantom spec validation") {
    PhantomSpec spec;
    spec.n_ellipsoids = 0;
    CHECK_THROWS_AS(generate_phantom_pair(spec), ConfigError);
    spec.n_ellipsoids = 9;
    CHECK_THROWS_AS(generate_phantom_pair(spec), ConfigError);
    spec.n_ellipsoids = 3;
    spec.shape = {4, 32, 32};
    CHECK_THROWS_AS(generate_phantom_pair(spec), ConfigError);
    CHECK_THROWS_AS(parse_modality("pet_like"), ConfigError);
    CHECK(parse_modality(modality_name(Modality::cbct_like)) == Modality::cbct_like);
}

TEST_CASE("mha round trip is lossless for short and float") {
    const auto dir = testutil::temp_dir("mha_roundtrip");
    std::mt19937_64 gen(8);

    Volume s({5, 3, 4}, {0.5, 0.75, 3.0}, {-12.25, 4.5, 100.0}, IntensityKind::hu);
    s.element_type = ElementType::met_short;
    std::uniform_int_distribution<int> hu(-32768, 32767);
    for (auto& x : s.data) x = hu(gen);
    write_mha(s, dir / "s.mha");
    const auto s2 = read_mha(dir / "s.mha", IntensityKind::hu);
    CHECK(s2.data == s.data);
    CHECK(s2.dims == s.dims);
    CHECK(s2.spacing == s.spacing);
    CHECK(s2.origin == s.origin);
    CHECK(s2.element_type == ElementType::met_short);
    CHECK(fs::file_size(dir / "s.mha") > 5 * 3 * 4 * 2);

    Volume f({6, 2, 3}, {1.0 / 3.0, 0.1, 2.2}, {0.1, 0.2, 0.3}, IntensityKind::raw);
    std::uniform_real_distribution<double> d(-1e5, 1e5);
    for (auto& x : f.data) x = static_cast<double>(static_cast<float>(d(gen)));
    write_mha(f, dir / "f.mha");
    const auto f2 = read_mha(dir / "f.mha");
    CHECK(f2.data == f.data);
    CHECK(f2.spacing == f.spacing);
    CHECK(f2.origin == f.origin);
    CHECK(f2.element_type == ElementType::met_float);

    // Byte-identical on rewrite.
    write_mha(f2, dir / "f2.mha");
    std::ifstream a(dir / "f.mha", std::ios::binary), b(dir / "f2.mha", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST_CASE("mha short writer rejects non-integer and out-of-range values") {
    const auto dir = testutil::temp_dir("mha_short_range");
    Volume s({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, IntensityKind::hu, 0.0);
    s.element_type = ElementType::met_short;
    s.data[1] = 0.5;
    CHECK_THROWS_AS(write_mha(s, dir / "a.mha"), DataError);
    s.data[1] = 40000.0;
    CHECK_THROWS_AS(write_mha(s, dir / "a.mha"), DataError);
}

TEST_CASE("mha payload length follows DimSize and element size") {
    const auto dir = testutil::temp_dir("mha_truncated");
    write_raw(dir / "ok.mha", header_444("MET_SHORT"), 128);
    const auto v = read_mha(dir / "ok.mha");
    CHECK(v.dims == Index3{4, 4, 4});
    for (double x : v.data) CHECK(x == 0.0);

    write_raw(dir / "short.mha", header_444("MET_SHORT"), 127);
    const auto msg = error_of(dir / "short.mha");
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("128") != std::string::npos);

    write_raw(dir / "long.mha", header_444("MET_SHORT"), 129);
    CHECK_FALSE(error_of(dir / "long.mha").empty());

    write_raw(dir / "float.mha", header_444("MET_FLOAT"), 128);
    CHECK(error_of(dir / "float.mha").find("256") != std::string::npos);
}

TEST_CASE("mha header errors name the offending key") {
    const auto dir = testutil::temp_dir("mha_headers");
    write_raw(dir / "nd.mha", header_444("MET_SHORT", "", "2"), 128);
    CHECK(error_of(dir / "nd.mha").find("dimensionality") != std::string::npos);

    write_raw(dir / "type.mha", header_444("MET_UCHAR"), 64);
    CHECK(error_of(dir / "type.mha").find("ElementType") != std::string::npos);

    write_raw(dir / "comp.mha", header_444("MET_SHORT", "CompressedData = True\n"), 128);
    CHECK(error_of(dir / "comp.mha").find("CompressedData") != std::string::npos);

    write_raw(dir / "nodim.mha",
              "ObjectType = Image\nNDims = 3\nElementSpacing = 1 1 1\nElementType = MET_SHORT\n"
              "ElementDataFile = LOCAL\n",
              128);
    CHECK(error_of(dir / "nodim.mha").find("DimSize") != std::string::npos);

    write_raw(dir / "notype.mha", "ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementDataFile = LOCAL\n", 128);
    CHECK(error_of(dir / "notype.mha").find("ElementType") != std::string::npos);

    write_raw(dir / "ext.mha",
              "ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementType = MET_SHORT\n"
              "ElementDataFile = other.raw\n",
              0);
    CHECK(error_of(dir / "ext.mha").find("ElementDataFile") != std::string::npos);

    CHECK_FALSE(error_of(dir / "absent.mha").empty());
}

TEST_CASE("split sizes follow the floor rule") {
    auto m = split_manifest(fake_cases(100), 0.75, 1);
    CHECK(m.train.size() == 75);
    CHECK(m.val.size() == 25);
    m = split_manifest(fake_cases(2), 0.75, 1);
    CHECK(m.train.size() == 1);
    CHECK(m.val.size() == 1);
    m = split_manifest(fake_cases(7), 0.5, 1);
    CHECK(m.train.size() == 3);
}

TEST_CASE("split is a seeded partition") {
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = std::uniform_int_distribution<int>(2, 60)(gen);
        const double ratio = std::uniform_real_distribution<double>(0.05, 0.95)(gen);
        const auto seed = gen();
        const auto a = split_manifest(fake_cases(n), ratio, seed);
        const auto b = split_manifest(fake_cases(n), ratio, seed);
        CHECK(a.train == b.train);
        CHECK(a.val == b.val);
        CHECK(a.train.size() == static_cast<std::size_t>(std::floor(n * ratio)));
        std::set<std::string> ids;
        for (const auto& c : a.train) ids.insert(c.case_id);
        for (const auto& c : a.val) CHECK(ids.insert(c.case_id).second);
        CHECK(ids.size() == static_cast<std::size_t>(n));
    }
    const auto x = split_manifest(fake_cases(40), 0.75, 1);
    const auto y = split_manifest(fake_cases(40), 0.75, 2);
    CHECK(x.train != y.train);
}

TEST_CASE("split rejects bad ratios and tiny datasets") {
    CHECK_THROWS_AS(split_manifest(fake_cases(10), 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_manifest(fake_cases(10), 1.0, 1), ConfigError);
    CHECK_THROWS_AS(split_manifest(fake_cases(10), -0.5, 1), ConfigError);
    CHECK_THROWS_AS(split_manifest(fake_cases(1), 0.75, 1), DataError);
    auto dup = fake_cases(3);
    dup[2].case_id = dup[0].case_id;
    CHECK_THROWS_AS(split_manifest(dup, 0.5, 1), DataError);
}

TEST_CASE("manifest round trip resolves relative paths") {
    const auto dir = testutil::temp_dir("manifest");
    fs::create_directories(dir / "data");
    std::vector<CaseEntry> cases;
    for (int i = 0; i < 4; ++i) {
        auto c = case_paths(dir / "data", "c" + std::to_string(i));
        for (const auto& p : {c.source, c.target, c.mask}) std::ofstream(p) << "x";
        cases.push_back(c);
    }
    const auto m = split_manifest(cases, 0.75, 3);
    save_manifest(m, dir / "manifest.json");
    std::ifstream in(dir / "manifest.json");
    const std::string text(std::istreambuf_iterator<char>(in), {});
    CHECK(text.find(dir.string()) == std::string::npos);

    const auto loaded = load_manifest(dir / "manifest.json");
    REQUIRE(loaded.train.size() == m.train.size());
    REQUIRE(loaded.val.size() == m.val.size());
    for (std::size_t i = 0; i < m.train.size(); ++i) {
        CHECK(loaded.train[i].case_id == m.train[i].case_id);
        CHECK(fs::equivalent(loaded.train[i].source, m.train[i].source));
        CHECK(fs::equivalent(loaded.train[i].mask, m.train[i].mask));
    }

    fs::remove(m.val[0].target);
    try {
        load_manifest(dir / "manifest.json");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(m.val[0].target.filename().string()) != std::string::npos);
    }
    CHECK_THROWS_AS(load_manifest(dir / "nope.json"), DataError);
}
