#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flowct::io {

struct CaseEntry {
    std::string case_id;
    std::filesystem::path source;
    std::filesystem::path target;
    std::filesystem::path mask;

    bool operator==(const CaseEntry&) const = default;
};

// {case_id}_{source|target|mask}.mha inside `dir`.
CaseEntry case_paths(const std::filesystem::path& dir, const std::string& case_id);

struct DatasetManifest {
    std::vector<CaseEntry> train;
    std::vector<CaseEntry> val;
};

// Seeded shuffle, then floor(n * ratio) cases to train and the rest to val.
DatasetManifest split_manifest(std::vector<CaseEntry> cases, double ratio, std::uint64_t seed);

// JSON manifest. Paths are stored relative to the manifest's directory and
// resolved against it on load; load checks every file exists.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

} // namespace flowct::io
