#pragma once

#include "hdae/config.hpp"
#include "hdae/networks.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace hdae {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Versioned container: magic, version, config JSON with its SHA-256, then
/// named float tensors. Layout (little-endian):
///
///   "HDAECKPT" u32 version
///   u64 len, config JSON bytes, 64 hex chars of sha256(config JSON)
///   u64 tensor count, then per tensor:
///     u64 name len, name, u8 dtype(0=f32,1=f64), u32 ndim, i64 dims..., raw data
struct Checkpoint {
    nlohmann::json config;
    std::map<std::string, torch::Tensor> tensors;
};

/// Writes atomically (temp file then rename).
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws if the magic, version, or config hash does not check out.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Model + EMA weights and configs as saved by the trainer.
struct ModelBundle {
    ModelConfig model_config;
    nlohmann::json train_config;
    int64_t step = 0;
    DiffusionAutoencoder model{nullptr};
    std::string hash; // sha256 of the checkpoint file
};

void save_model(const std::filesystem::path& path, DiffusionAutoencoder& model, DiffusionAutoencoder* ema,
                const nlohmann::json& train_config, int64_t step);
/// Loads the EMA weights when present (prefer_ema) or the raw weights.
ModelBundle load_model(const std::filesystem::path& path, bool prefer_ema = true);

void put_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& m);
void take_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& m);

} // namespace hdae
