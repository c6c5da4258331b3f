#pragma once

#include <cstdint>

#include "flowct/phantom.hpp"
#include "flowct/preprocess.hpp"

namespace flowct::train {

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    int batch_size = 2;
    std::int64_t total_steps = 2000;
    double translate_range = 5.0;  // voxels on the model grid, +-
    double rotate_range = 0.1;     // radians per axis, +-
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 500;  // 0 disables periodic checkpoints
    std::int64_t validation_every = 500;  // 0 disables validation
    std::int64_t log_every = 50;
    int validation_cases = 8;  // cap on held-out cases scored per validation

    void validate() const;
};

// What the model translates from, and how intensities are normalized.
struct TaskConfig {
    io::Modality modality = io::Modality::mr_like;
    prep::NormalizationSpec normalization;
};

IntensityKind source_kind(io::Modality m);

// Normalized source on the model grid (the network's conditioning input).
Volume prepare_condition(const Volume& source, const TaskConfig& task, int side);
// Normalized target on the model grid (x1).
Volume prepare_target(const Volume& target, const TaskConfig& task, int side);
Volume prepare_mask(const Volume& mask, int side);

} // namespace flowct::train
