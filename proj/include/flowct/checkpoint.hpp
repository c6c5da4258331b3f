#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowct/optim.hpp"
#include "flowct/velocity_net.hpp"

namespace flowct::train {

// Binary layout (all integers and payloads little-endian):
//   "FLOWCKPT" | u32 version | u64 n + config JSON
//   u32 n_params, then per parameter:
//     u32 n + name | u32 rank | i64 dims[rank] | u8 dtype (4 = f32, 8 = f64) | payload
//   "OPTM" | i64 step | f64 beta1, beta2, eps | per parameter: m payload, v payload
//   "RNGS" | u64 seed | i64 step
//   "END!"
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<T> values;
};

template <typename T>
struct Checkpoint {
    nlohmann::json config;
    std::vector<NamedArray<T>> params;
    OptimizerState<T> optimizer;
    std::uint64_t seed = 0;
    std::int64_t step = 0;  // optimizer steps completed
};

template <typename T>
Checkpoint<T> make_checkpoint(const nlohmann::json& config, const net::VelocityNet<T>& net,
                              const OptimizerState<T>& opt, std::uint64_t seed, std::int64_t step);

// Written to a sibling temporary file and renamed into place.
template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path);

// Throws DataError on a corrupt or truncated file and ConfigError when the
// stored dtype is not T.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Copies stored parameters into `net`. Throws ConfigError naming the first
// name or shape that differs.
template <typename T>
void restore_parameters(net::VelocityNet<T>& net, const Checkpoint<T>& ckpt);

} // namespace flowct::train
