#include "flowct/dataset.hpp"

#include <fstream>
#include <set>
#include <utility>

#include <json.hpp>

#include "flowct/error.hpp"
#include "flowct/rng.hpp"

namespace flowct::io {

namespace fs = std::filesystem;
using nlohmann::json;

CaseEntry case_paths(const fs::path& dir, const std::string& case_id) {
    return {case_id, dir / (case_id + "_source.mha"), dir / (case_id + "_target.mha"), dir / (case_id + "_mask.mha")};
}

DatasetManifest split_manifest(std::vector<CaseEntry> cases, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1), got " + std::to_string(ratio));
    if (cases.size() < 2) throw DataError("split needs at least 2 cases, got " + std::to_string(cases.size()));
    std::set<std::string> ids;
    for (const auto& c : cases) {
        if (!ids.insert(c.case_id).second) throw DataError("duplicate case id '" + c.case_id + "'");
    }
    rng::Stream s(rng::derive_key({seed, 0x73706c6974ULL}));
    for (std::size_t i = cases.size() - 1; i > 0; --i) {
        std::swap(cases[i], cases[static_cast<std::size_t>(s.below(i + 1))]);
    }
    const auto n_train = static_cast<std::size_t>(static_cast<double>(cases.size()) * ratio);
    DatasetManifest m;
    m.train.assign(cases.begin(), cases.begin() + static_cast<std::ptrdiff_t>(n_train));
    m.val.assign(cases.begin() + static_cast<std::ptrdiff_t>(n_train), cases.end());
    return m;
}

namespace {

json entry_json(const CaseEntry& c, const fs::path& base, const char* split) {
    auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_proximate(base).generic_string(); };
    return {{"case_id", c.case_id}, {"split", split},          {"source", rel(c.source)},
            {"target", rel(c.target)}, {"mask", rel(c.mask)}};
}

} // namespace

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    const fs::path base = fs::absolute(path).parent_path();
    json cases = json::array();
    for (const auto& c : m.train) cases.push_back(entry_json(c, base, "train"));
    for (const auto& c : m.val) cases.push_back(entry_json(c, base, "val"));
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << json{{"version", 1}, {"cases", cases}}.dump(2) << '\n';
    if (!out) throw DataError("failed writing manifest " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    const fs::path base = path.parent_path();
    DatasetManifest m;
    std::set<std::string> ids;
    try {
        for (const auto& e : j.at("cases")) {
            CaseEntry c;
            c.case_id = e.at("case_id").get<std::string>();
            c.source = base / e.at("source").get<std::string>();
            c.target = base / e.at("target").get<std::string>();
            c.mask = base / e.at("mask").get<std::string>();
            const auto split = e.at("split").get<std::string>();
            if (!ids.insert(c.case_id).second) throw DataError("manifest lists case '" + c.case_id + "' twice");
            for (const auto* p : {&c.source, &c.target, &c.mask}) {
                if (!fs::exists(*p)) throw DataError("case " + c.case_id + ": missing file " + p->string());
            }
            if (split == "train") {
                m.train.push_back(std::move(c));
            } else if (split == "val") {
                m.val.push_back(std::move(c));
            } else {
                throw DataError("case " + c.case_id + ": unknown split '" + split + "'");
            }
        }
    } catch (const json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

} // namespace flowct::io
