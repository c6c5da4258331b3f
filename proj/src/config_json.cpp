#include "flowct/config_json.hpp"

#include <string>

#include "flowct/error.hpp"

namespace flowct::config {

void require_known_keys(const json& j, const char* section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError(std::string("section '") + section + "' must be a JSON object");
    for (const auto& [k, _] : j.items()) {
        bool known = false;
        for (const char* allowed : keys) known = known || k == allowed;
        if (!known) throw ConfigError(std::string("unknown key '") + k + "' in section '" + section + "'");
    }
}

json to_json(const net::VelocityNetConfig& c) {
    return {{"base_channels", c.base_channels},
            {"channel_multipliers", c.channel_multipliers},
            {"blocks_per_level", c.blocks_per_level},
            {"attention_at", c.attention_at},
            {"reference_side", c.reference_side},
            {"dropout", c.dropout_p},
            {"cond_channels", c.cond_channels},
            {"time_embed_dim", c.time_embed_dim},
            {"input_side", c.input_side},
            {"heads", c.heads},
            {"norm_groups", c.norm_groups},
            {"zero_init_output", c.zero_init_output}};
}

net::VelocityNetConfig net_from_json(const json& j) {
    constexpr const char* s = "net";
    require_known_keys(j, s,
                       {"preset", "base_channels", "channel_multipliers", "blocks_per_level", "attention_at",
                        "reference_side", "dropout", "cond_channels", "time_embed_dim", "input_side", "heads",
                        "norm_groups", "zero_init_output"});
    net::VelocityNetConfig c;
    std::string preset = "paper";
    read_key(j, s, "preset", preset);
    if (preset == "desk") {
        c = net::VelocityNetConfig::desk();
    } else if (preset == "paper") {
        c = net::VelocityNetConfig::paper();
    } else {
        throw ConfigError("net.preset must be 'paper' or 'desk', got '" + preset + "'");
    }
    read_key(j, s, "base_channels", c.base_channels);
    read_key(j, s, "channel_multipliers", c.channel_multipliers);
    read_key(j, s, "blocks_per_level", c.blocks_per_level);
    read_key(j, s, "attention_at", c.attention_at);
    read_key(j, s, "reference_side", c.reference_side);
    read_key(j, s, "dropout", c.dropout_p);
    read_key(j, s, "cond_channels", c.cond_channels);
    read_key(j, s, "time_embed_dim", c.time_embed_dim);
    read_key(j, s, "input_side", c.input_side);
    read_key(j, s, "heads", c.heads);
    read_key(j, s, "norm_groups", c.norm_groups);
    read_key(j, s, "zero_init_output", c.zero_init_output);
    c.validate();
    return c;
}

json to_json(const flow::FlowPathConfig& c) {
    return {{"sigma_min", c.sigma_min}, {"lambda_l1", c.lambda_l1}, {"lambda_mse", c.lambda_mse}};
}

flow::FlowPathConfig flow_from_json(const json& j) {
    constexpr const char* s = "flow";
    require_known_keys(j, s, {"sigma_min", "lambda_l1", "lambda_mse"});
    flow::FlowPathConfig c;
    read_key(j, s, "sigma_min", c.sigma_min);
    read_key(j, s, "lambda_l1", c.lambda_l1);
    read_key(j, s, "lambda_mse", c.lambda_mse);
    c.validate();
    return c;
}

json to_json(const train::TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"total_steps", c.total_steps},
            {"translate_range", c.translate_range},
            {"rotate_range", c.rotate_range},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"validation_every", c.validation_every},
            {"log_every", c.log_every},
            {"validation_cases", c.validation_cases}};
}

train::TrainConfig train_from_json(const json& j) {
    constexpr const char* s = "train";
    require_known_keys(j, s,
                       {"learning_rate", "weight_decay", "batch_size", "total_steps", "translate_range",
                        "rotate_range", "seed", "checkpoint_every", "validation_every", "log_every",
                        "validation_cases"});
    train::TrainConfig c;
    read_key(j, s, "learning_rate", c.learning_rate);
    read_key(j, s, "weight_decay", c.weight_decay);
    read_key(j, s, "batch_size", c.batch_size);
    read_key(j, s, "total_steps", c.total_steps);
    read_key(j, s, "translate_range", c.translate_range);
    read_key(j, s, "rotate_range", c.rotate_range);
    read_key(j, s, "seed", c.seed);
    read_key(j, s, "checkpoint_every", c.checkpoint_every);
    read_key(j, s, "validation_every", c.validation_every);
    read_key(j, s, "log_every", c.log_every);
    read_key(j, s, "validation_cases", c.validation_cases);
    c.validate();
    return c;
}

json to_json(const ode::IntegratorConfig& c) {
    return {{"method", std::string(ode::method_name(c.method))}, {"steps", c.steps}};
}

ode::IntegratorConfig integrator_from_json(const json& j) {
    constexpr const char* s = "integrator";
    require_known_keys(j, s, {"method", "steps"});
    ode::IntegratorConfig c;
    std::string method(ode::method_name(c.method));
    read_key(j, s, "method", method);
    c.method = ode::parse_method(method);
    read_key(j, s, "steps", c.steps);
    c.validate();
    return c;
}

json to_json(const prep::NormalizationSpec& c) {
    return {{"mr_clip", c.mr_clip}, {"hu_min", c.hu_min}, {"hu_max", c.hu_max}, {"hu_scale", c.hu_scale}};
}

prep::NormalizationSpec normalization_from_json(const json& j) {
    constexpr const char* s = "normalization";
    require_known_keys(j, s, {"mr_clip", "hu_min", "hu_max", "hu_scale"});
    prep::NormalizationSpec c;
    read_key(j, s, "mr_clip", c.mr_clip);
    read_key(j, s, "hu_min", c.hu_min);
    read_key(j, s, "hu_max", c.hu_max);
    read_key(j, s, "hu_scale", c.hu_scale);
    c.validate();
    return c;
}

json to_json(const train::TaskConfig& c) {
    return {{"modality", std::string(io::modality_name(c.modality))}, {"normalization", to_json(c.normalization)}};
}

train::TaskConfig task_from_json(const json& j) {
    constexpr const char* s = "task";
    require_known_keys(j, s, {"modality", "normalization"});
    train::TaskConfig c;
    std::string modality(io::modality_name(c.modality));
    read_key(j, s, "modality", modality);
    c.modality = io::parse_modality(modality);
    if (auto it = j.find("normalization"); it != j.end()) c.normalization = normalization_from_json(*it);
    return c;
}

} // namespace flowct::config
