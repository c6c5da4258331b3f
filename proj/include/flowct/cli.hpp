#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flowct/dataset.hpp"
#include "flowct/flow.hpp"
#include "flowct/metrics.hpp"
#include "flowct/ode.hpp"
#include "flowct/preprocess.hpp"
#include "flowct/train_config.hpp"
#include "flowct/trainer.hpp"
#include "flowct/velocity_net.hpp"

namespace flowct::cli {

namespace fs = std::filesystem;

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

int exit_code_for(const std::exception& e);

struct DataGenConfig {
    int n_cases = 200;
    Index3 shape{16, 16, 16};
    Vec3 spacing{1.0, 1.0, 1.0};
    double split_ratio = 0.75;
    std::uint64_t seed = 0;
    int n_ellipsoids = 5;
    double noise_hu = 10.0;
    double cbct_cupping_hu = 80.0;
};

struct PathsConfig {
    fs::path data_dir = "data";
    fs::path output_dir = "runs/default";
    fs::path checkpoint;  // empty: output_dir / final.ckpt
    fs::path manifest;    // empty: data_dir / manifest.json
};

struct RunConfig {
    std::string task = "mr_to_ct";  // or cbct_to_ct
    std::string region = "phantom";
    DataGenConfig data;
    net::VelocityNetConfig net;
    flow::FlowPathConfig flow;
    train::TrainConfig train;
    ode::IntegratorConfig integrator;
    prep::NormalizationSpec normalization;
    std::uint64_t infer_seed = 0;
    PathsConfig paths;

    io::Modality modality() const;
    train::TaskConfig task_config() const;
    fs::path checkpoint_path() const;
    fs::path manifest_path() const;
    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_from_json(const nlohmann::json& j);
RunConfig load_run_config(const fs::path& path);

using Progress = std::function<void(std::string_view)>;

// Writes n_cases phantom triples into data_dir and the split manifest.
io::DatasetManifest cmd_gen_data(const RunConfig& cfg, const Progress& progress = {});

train::TrainResult cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume = std::nullopt,
                             const Progress& progress = {});

// Each input is a source volume or a directory of {case_id}_source.mha files.
// Outputs are {case_id}_sct.mha in out_dir (a source without the _source
// suffix keeps its stem). Returns the written paths.
std::vector<fs::path> cmd_infer(const RunConfig& cfg, const std::vector<fs::path>& inputs, const fs::path& out_dir,
                                const Progress& progress = {});

struct EvaluateResult {
    metrics::MetricReport report;
    std::vector<std::string> unpaired;     // case ids missing a prediction, target or mask
    std::vector<std::string> case_errors;  // "case_id: message" for cases that could not be scored
    int exit_code = kExitOk;
};

// Pairs {id}_sct.mha in pred_dir with {id}_target.mha in target_dir and
// {id}_mask.mha in mask_dir, writes metrics.csv and summary.txt into out_dir.
// Unpaired or unscorable cases make the exit code nonzero unless
// allow_partial is set.
EvaluateResult cmd_evaluate(const fs::path& pred_dir, const fs::path& target_dir, const fs::path& mask_dir,
                            const fs::path& out_dir, bool allow_partial, const Progress& progress = {});

} // namespace flowct::cli
