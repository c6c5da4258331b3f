#include "flowct/train_config.hpp"

#include "flowct/error.hpp"

namespace flowct::train {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be nonnegative");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be nonnegative");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (total_steps < 0) throw ConfigError("train.total_steps must be nonnegative");
    if (!(translate_range >= 0.0)) throw ConfigError("train.translate_range must be nonnegative");
    if (!(rotate_range >= 0.0)) throw ConfigError("train.rotate_range must be nonnegative");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be nonnegative");
    if (validation_every < 0) throw ConfigError("train.validation_every must be nonnegative");
    if (log_every < 1) throw ConfigError("train.log_every must be positive");
    if (validation_cases < 1) throw ConfigError("train.validation_cases must be positive");
}

IntensityKind source_kind(io::Modality m) {
    return m == io::Modality::mr_like ? IntensityKind::raw : IntensityKind::hu;
}

Volume prepare_condition(const Volume& source, const TaskConfig& task, int side) {
    const Volume norm = task.modality == io::Modality::mr_like
                            ? prep::normalize_mr(source, task.normalization).volume
                            : prep::normalize_ct(source, task.normalization);
    return prep::to_model_grid(norm, side, prep::Interp::trilinear);
}

Volume prepare_target(const Volume& target, const TaskConfig& task, int side) {
    return prep::to_model_grid(prep::normalize_ct(target, task.normalization), side, prep::Interp::trilinear);
}

Volume prepare_mask(const Volume& mask, int side) { return prep::to_model_grid(mask, side, prep::Interp::nearest); }

} // namespace flowct::train
