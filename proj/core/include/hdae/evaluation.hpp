#pragma once

#include "hdae/config.hpp"
#include "hdae/diffusion.hpp"
#include "hdae/networks.hpp"
#include "hdae/trainer.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hdae {

/// Per-element mean squared error. Throws std::invalid_argument on shape mismatch.
double mse(const torch::Tensor& a, const torch::Tensor& b);

/// Mean SSIM over valid 7x7 uniform windows, data range 2 (images in [-1, 1]),
/// K1 = 0.01, K2 = 0.03, unbiased local (co)variances, averaged over channels
/// and batch. Accepts [C, H, W] or [B, C, H, W].
double ssim(const torch::Tensor& a, const torch::Tensor& b);

inline constexpr int64_t kSsimWindow = 7;

/// Perceptual distance slot (e.g. LPIPS). Receives two image batches; none ships.
using PerceptualMetric = std::function<double(const torch::Tensor& a, const torch::Tensor& b)>;

enum class XTMode { Encoded, Random };
std::string_view to_string(XTMode m);

struct BenchRow {
    std::string name;
    std::string variant;
    int64_t steps_trained = 0;
    XTMode mode = XTMode::Encoded;
    double mse = 0.0;
    double ssim = 0.0;
    std::optional<double> perceptual;
    int64_t images = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::string environment; // torch version, thread count, plan size, SSIM convention

    void write_csv(const std::filesystem::path& path) const;
    void write_json(const std::filesystem::path& path) const;
};

struct BenchModel {
    std::string name;
    DiffusionAutoencoder model{nullptr};
    int64_t steps_trained = 0;
};

struct BenchOptions {
    std::vector<XTMode> modes{XTMode::Encoded, XTMode::Random};
    int64_t batch_size = 32;
    uint64_t seed = 0; // drives the random-xT draws
    PerceptualMetric perceptual;
};

/// Rows are ordered model-major, mode-minor.
BenchReport reconstruction_benchmark(std::vector<BenchModel>& models, const ImageTensor& images, const StepPlan& plan,
                                     const BenchOptions& options = {});

/// Per-image reconstruction errors for one model and mode, in input order.
std::vector<double> per_image_reconstruction_mse(DiffusionAutoencoder& model, const ImageTensor& images,
                                                 const StepPlan& plan, XTMode mode, uint64_t seed,
                                                 int64_t batch_size = 32);

struct AblationCurve {
    Variant variant = Variant::HDAE_U;
    std::vector<int64_t> steps;
    std::vector<double> validation_mse;
    std::vector<double> losses; // raw per-step training loss
    std::filesystem::path final_checkpoint;
};

struct AblationOptions {
    int64_t checkpoints = 4; // shared validation points across variants, at least 3
    std::optional<std::filesystem::path> out_dir;
    std::function<void(Variant, const ValidationPoint&)> on_validation;
};

/// Trains every variant from scratch on the same data, seed and schedule and
/// reports validation reconstruction MSE at shared checkpoints.
std::vector<AblationCurve> ablation_harness(const std::vector<Variant>& variants, const ModelConfig& base_model,
                                            const TrainConfig& train_cfg, const ImageTensor& train_images,
                                            const ImageTensor& validation_images, const AblationOptions& options = {});

/// step,variant,validation_mse rows plus a final-ordering table.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationCurve>& curves);
std::vector<Variant> final_ordering(const std::vector<AblationCurve>& curves);

} // namespace hdae
