#pragma once

#include "hdae/config.hpp"
#include "hdae/diffusion.hpp"
#include "hdae/networks.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hdae {

struct ValidationPoint {
    int64_t step = 0;
    double reconstruction_mse = 0.0;
};

struct TrainResult {
    std::vector<double> losses; // one per optimizer step
    std::vector<ValidationPoint> validation;
    std::vector<std::filesystem::path> checkpoints;
};

/// Owns a model, its EMA shadow and the optimizer. Not thread-safe; the
/// optimization step is serialized by construction.
class Trainer {
public:
    Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

    /// One optimizer step on images [B, C, H, W]; returns the loss before the
    /// update. Throws std::runtime_error on a non-finite loss.
    double step(const ImageTensor& batch);

    /// Draws a batch from `images` with the trainer's generator and steps.
    double step_sampled(const ImageTensor& images);

    /// Loss of `batch` under fixed (t, eps) draws without updating weights.
    double evaluate_loss(const ImageTensor& batch, const torch::Tensor& t, const torch::Tensor& eps);

    DiffusionAutoencoder& model() { return model_; }
    DiffusionAutoencoder& ema() { return ema_; }
    int64_t steps_done() const { return step_; }
    const ModelConfig& model_config() const { return model_cfg_; }
    const TrainConfig& train_config() const { return train_cfg_; }
    at::Generator& generator() { return gen_; }

    void save(const std::filesystem::path& path);

private:
    ModelConfig model_cfg_;
    TrainConfig train_cfg_;
    DiffusionAutoencoder model_{nullptr};
    DiffusionAutoencoder ema_{nullptr};
    std::unique_ptr<torch::optim::Adam> optimizer_;
    at::Generator gen_;
    int64_t step_ = 0;
};

/// Mean per-pixel MSE of semantic + stochastic encode then generate.
double reconstruction_mse(DiffusionAutoencoder& model, const ImageTensor& images, const StepPlan& plan,
                          int64_t batch_size = 64);

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir; // checkpoints + loss log when set
    std::function<void(int64_t step, double loss)> on_log;
    std::function<void(const ValidationPoint&)> on_validation;
};

/// Full training run: the sampling loop, EMA, periodic validation-probe
/// reconstruction (EMA weights, default plan) and checkpoints.
TrainResult train(Trainer& trainer, const ImageTensor& train_images, const ImageTensor& validation_images,
                  const TrainOptions& options = {});

/// Resolves the dataset described by a train config into train/validation tensors.
struct LoadedData {
    ImageTensor train, validation;
};
LoadedData load_training_data(const TrainConfig& cfg, int64_t image_size);

} // namespace hdae
