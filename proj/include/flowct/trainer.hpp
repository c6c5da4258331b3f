#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flowct/dataset.hpp"
#include "flowct/flow.hpp"
#include "flowct/ode.hpp"
#include "flowct/train_config.hpp"
#include "flowct/velocity_net.hpp"

namespace flowct::train {

struct StepRecord {
    std::int64_t step = 0;
    double loss_l1 = 0.0;
    double loss_mse = 0.0;
    double loss_total = 0.0;
    double wall_ms = 0.0;
};

struct ValRecord {
    std::int64_t step = 0;
    double val_mse = 0.0;
};

struct TrainOptions {
    std::filesystem::path output_dir;
    // Final checkpoint path; empty means output_dir / "final.ckpt".
    std::filesystem::path checkpoint_path;
    std::optional<std::filesystem::path> resume_from;
    // Stored verbatim under "run" in every checkpoint.
    nlohmann::json run_config = nlohmann::json::object();
    std::function<void(std::string_view)> progress;
};

struct TrainResult {
    std::int64_t start_step = 0;  // steps already done when this call began
    std::vector<StepRecord> steps;
    std::vector<ValRecord> validation;
    std::filesystem::path final_checkpoint;
};

// Seed of the network initialization used by train() for a given run seed.
std::uint64_t init_key(std::uint64_t seed);

// Step k (1-based) draws its cases, augmentation, (t, eps) and dropout masks
// from keys derived from (seed, k), so a resumed run replays the exact
// sequence of an uninterrupted one. Writes train_log.csv, val_log.csv and
// checkpoints into output_dir.
TrainResult train(const io::DatasetManifest& manifest, const net::VelocityNetConfig& net_cfg, const TrainConfig& cfg,
                  const flow::FlowPathConfig& flow_cfg, const TaskConfig& task, const TrainOptions& opts);

// Mean MSE between predicted and target velocity over held-out pairs at
// t = 0.1, ..., 0.9 with fixed noise.
double validation_mse(const net::VelocityNet<float>& net, const std::vector<Volume>& conditions,
                      const std::vector<Volume>& targets, const flow::FlowPathConfig& flow_cfg, std::uint64_t seed);

struct Model {
    net::VelocityNetConfig net_config;
    flow::FlowPathConfig flow;
    TaskConfig task;
    std::int64_t step = 0;
    std::unique_ptr<net::VelocityNet<float>> net;
};

// Rebuilds the network from the configuration stored in the checkpoint.
Model load_model(const std::filesystem::path& checkpoint);

using VelocityOverride = std::function<Tensor<float>(const Tensor<float>& x, double t)>;

// Integrates from seeded Gaussian noise to t = 1 conditioned on `source` and
// maps the result back to HU on the source grid. `override_velocity`, when
// set, replaces the network (the condition is still prepared and validated).
Volume infer(const Volume& source, const Model& model, const ode::IntegratorConfig& integrator, std::uint64_t seed,
             const VelocityOverride& override_velocity = {});

} // namespace flowct::train
