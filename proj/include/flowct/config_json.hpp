#pragma once

#include <json.hpp>

#include "flowct/error.hpp"
#include "flowct/flow.hpp"
#include "flowct/ode.hpp"
#include "flowct/phantom.hpp"
#include "flowct/preprocess.hpp"
#include "flowct/train_config.hpp"
#include "flowct/velocity_net.hpp"

// JSON forms of the per-module configs. Readers start from the defaults,
// override the keys present, reject unknown keys with ConfigError naming the
// section, and validate the result.
namespace flowct::config {

using nlohmann::json;

json to_json(const net::VelocityNetConfig& c);
net::VelocityNetConfig net_from_json(const json& j);

json to_json(const flow::FlowPathConfig& c);
flow::FlowPathConfig flow_from_json(const json& j);

json to_json(const train::TrainConfig& c);
train::TrainConfig train_from_json(const json& j);

json to_json(const ode::IntegratorConfig& c);
ode::IntegratorConfig integrator_from_json(const json& j);

json to_json(const prep::NormalizationSpec& c);
prep::NormalizationSpec normalization_from_json(const json& j);

json to_json(const train::TaskConfig& c);
train::TaskConfig task_from_json(const json& j);

// Shared helpers for section readers.
void require_known_keys(const json& j, const char* section, std::initializer_list<const char*> keys);

template <typename V>
void read_key(const json& j, const char* section, const char* key, V& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<V>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(section) + "." + key + " has the wrong type");
    }
}

} // namespace flowct::config
