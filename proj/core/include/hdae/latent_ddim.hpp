#pragma once

#include "hdae/config.hpp"
#include "hdae/diffusion.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>

namespace hdae {

/// Per-dimension whitening statistics of a flattened code corpus.
struct LatentStats {
    torch::Tensor mean; // [D]
    torch::Tensor std;  // [D]

    bool defined() const { return mean.defined() && std.defined(); }
    static LatentStats from_codes(const torch::Tensor& flat_codes);
    torch::Tensor whiten(const torch::Tensor& flat) const;
    torch::Tensor unwhiten(const torch::Tensor& white) const;
};

struct LatentDiffusionConfig {
    int64_t dim = 512;
    int64_t hidden = 512;
    int64_t layers = 4;
    int64_t levels = 4;    // for reshaping sampled codes
    int64_t code_dim = 128;
    DiffusionConfig diffusion;
};
void to_json(nlohmann::json& j, const LatentDiffusionConfig& c);
void from_json(const nlohmann::json& j, LatentDiffusionConfig& c);

/// MLP noise predictor over whitened flat codes; every hidden layer also
/// sees the input (skip) and is modulated by the timestep embedding.
class LatentDenoiserImpl : public torch::nn::Module {
public:
    explicit LatentDenoiserImpl(const LatentDiffusionConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);

private:
    LatentDiffusionConfig cfg_;
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::ModuleList layers_, time_proj_, norms_;
    torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(LatentDenoiser);

/// Diffusion model over the semantic code space for unconditional sampling.
class LatentDiffusion {
public:
    explicit LatentDiffusion(const LatentDiffusionConfig& cfg);

    struct TrainOptions {
        int64_t steps = 5000;
        int64_t batch_size = 128;
        double learning_rate = 1e-3; // peak; decays to zero on a cosine
        uint64_t seed = 0;
    };
    /// Fits whitening statistics on the corpus, then trains the denoiser.
    std::vector<double> train(const torch::Tensor& flat_codes, const TrainOptions& opts);

    /// Samples `count` unwhitened flat codes [count, D]. Throws if no
    /// statistics are available.
    torch::Tensor sample_codes(int64_t count, uint64_t seed);
    /// Same, returned in whitened coordinates.
    torch::Tensor sample_whitened(int64_t count, uint64_t seed);

    const LatentDiffusionConfig& config() const { return cfg_; }
    const LatentStats& stats() const { return stats_; }
    void set_stats(LatentStats stats) { stats_ = std::move(stats); }
    LatentDenoiser& denoiser() { return denoiser_; }

    void save(const std::filesystem::path& path);
    static LatentDiffusion load(const std::filesystem::path& path);

private:
    LatentDiffusionConfig cfg_;
    NoiseSchedule schedule_;
    LatentDenoiser denoiser_{nullptr};
    LatentStats stats_;
};

} // namespace hdae
