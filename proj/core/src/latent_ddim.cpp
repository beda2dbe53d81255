#include "hdae/latent_ddim.hpp"

#include "hdae/checkpoint.hpp"
#include "hdae/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hdae {

namespace nn = torch::nn;

LatentStats LatentStats::from_codes(const torch::Tensor& flat_codes) {
    if (flat_codes.dim() != 2 || flat_codes.size(0) < 2) {
        throw std::invalid_argument("whitening statistics need at least two flat codes");
    }
    auto x = flat_codes.to(torch::kFloat64);
    return {x.mean(0), x.std(0).clamp_min(1e-8)};
}

torch::Tensor LatentStats::whiten(const torch::Tensor& flat) const {
    if (!defined()) {
        throw std::runtime_error("missing whitening statistics");
    }
    return ((flat.to(torch::kFloat64) - mean) / std).to(flat.scalar_type());
}

torch::Tensor LatentStats::unwhiten(const torch::Tensor& white) const {
    if (!defined()) {
        throw std::runtime_error("missing whitening statistics");
    }
    return (white.to(torch::kFloat64) * std + mean).to(white.scalar_type());
}

void to_json(nlohmann::json& j, const LatentDiffusionConfig& c) {
    j = nlohmann::json{{"dim", c.dim},       {"hidden", c.hidden},     {"layers", c.layers},
                       {"levels", c.levels}, {"code_dim", c.code_dim}, {"diffusion", c.diffusion}};
}

void from_json(const nlohmann::json& j, LatentDiffusionConfig& c) {
    c.dim = j.at("dim").get<int64_t>();
    c.hidden = j.value("hidden", c.hidden);
    c.layers = j.value("layers", c.layers);
    c.levels = j.value("levels", c.levels);
    c.code_dim = j.value("code_dim", c.code_dim);
    if (j.contains("diffusion")) {
        j.at("diffusion").get_to(c.diffusion);
    }
}

LatentDenoiserImpl::LatentDenoiserImpl(const LatentDiffusionConfig& cfg) : cfg_(cfg) {
    if (cfg_.dim < 1 || cfg_.hidden < 1 || cfg_.layers < 1) {
        throw std::invalid_argument("latent denoiser sizes must be positive");
    }
    const auto tdim = cfg_.hidden;
    time_mlp = register_module("time_mlp", nn::Sequential(nn::Linear(64, tdim), nn::SiLU(), nn::Linear(tdim, tdim)));
    for (int64_t i = 0; i < cfg_.layers; ++i) {
        const auto in = (i == 0 ? 0 : cfg_.hidden) + cfg_.dim;
        layers_->push_back(nn::Linear(in, cfg_.hidden));
        time_proj_->push_back(nn::Linear(tdim, cfg_.hidden));
        norms_->push_back(nn::LayerNorm(nn::LayerNormOptions({cfg_.hidden})));
    }
    register_module("layers", layers_);
    register_module("time_proj", time_proj_);
    register_module("norms", norms_);
    out_ = register_module("out", nn::Linear(cfg_.hidden, cfg_.dim));
}

torch::Tensor LatentDenoiserImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
    auto temb = time_mlp->forward(timestep_embedding(t.to(x.scalar_type()), 64));
    torch::Tensor h;
    for (size_t i = 0; i < layers_->size(); ++i) {
        auto in = i == 0 ? x : torch::cat({h, x}, 1);
        auto a = layers_[i]->as<nn::LinearImpl>()->forward(in);
        a = a + time_proj_[i]->as<nn::LinearImpl>()->forward(torch::silu(temb));
        h = torch::silu(norms_[i]->as<nn::LayerNormImpl>()->forward(a));
    }
    return out_(h);
}

LatentDiffusion::LatentDiffusion(const LatentDiffusionConfig& cfg)
    : cfg_(cfg),
      schedule_(NoiseSchedule::linear(cfg.diffusion.steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end)),
      denoiser_(cfg) {}

std::vector<double> LatentDiffusion::train(const torch::Tensor& flat_codes, const TrainOptions& opts) {
    if (flat_codes.dim() != 2 || flat_codes.size(1) != cfg_.dim) {
        throw std::invalid_argument("latent training codes must be [N, dim]");
    }
    stats_ = LatentStats::from_codes(flat_codes);
    auto data = stats_.whiten(flat_codes.to(torch::kFloat64)).to(torch::kFloat32);
    torch::manual_seed(opts.seed);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(opts.seed ^ 0x1a7eULL);
    torch::optim::Adam optim(denoiser_->parameters(), torch::optim::AdamOptions(opts.learning_rate));
    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(opts.steps));
    denoiser_->train();
    for (int64_t s = 0; s < opts.steps; ++s) {
        // cosine decay to zero; a constant rate leaves the final weights noisy
        const double lr = 0.5 * opts.learning_rate *
                          (1.0 + std::cos(std::numbers::pi * static_cast<double>(s) / static_cast<double>(opts.steps)));
        for (auto& group : optim.param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
        auto idx = torch::randint(0, data.size(0), {opts.batch_size}, gen, torch::kLong);
        auto x0 = data.index_select(0, idx);
        auto t = torch::randint(1, cfg_.diffusion.steps + 1, {opts.batch_size}, gen, torch::kLong);
        auto eps = torch::randn(x0.sizes(), gen, x0.options());
        auto loss = noise_loss(eps, denoiser_(q_sample(x0, t, eps, schedule_), t));
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            throw std::runtime_error("latent DDIM training diverged");
        }
        optim.zero_grad();
        loss.backward();
        optim.step();
        losses.push_back(value);
    }
    denoiser_->eval();
    return losses;
}

torch::Tensor LatentDiffusion::sample_whitened(int64_t count, uint64_t seed) {
    if (!stats_.defined()) {
        throw std::runtime_error("latent model has no whitening statistics");
    }
    if (count == 0) {
        return torch::empty({0, cfg_.dim});
    }
    torch::NoGradGuard no_grad;
    denoiser_->eval();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto xT = torch::randn({count, cfg_.dim}, gen, torch::kFloat32);
    const auto plan = StepPlan::strided(cfg_.diffusion.steps, cfg_.diffusion.inference_steps);
    auto eps_fn = [&](const torch::Tensor& x, int64_t t) {
        return denoiser_(x, torch::full({x.size(0)}, t, torch::kLong));
    };
    return ddim_sample(eps_fn, xT, plan, schedule_, /*clip_output=*/false);
}

torch::Tensor LatentDiffusion::sample_codes(int64_t count, uint64_t seed) {
    return stats_.unwhiten(sample_whitened(count, seed));
}

void LatentDiffusion::save(const std::filesystem::path& path) {
    if (!stats_.defined()) {
        throw std::runtime_error("refusing to save a latent model without whitening statistics");
    }
    Checkpoint ckpt;
    ckpt.config = {{"latent", cfg_}};
    put_module(ckpt, "denoiser.", *denoiser_);
    ckpt.tensors["stats.mean"] = stats_.mean;
    ckpt.tensors["stats.std"] = stats_.std;
    write_checkpoint(path, ckpt);
}

LatentDiffusion LatentDiffusion::load(const std::filesystem::path& path) {
    const auto ckpt = read_checkpoint(path);
    LatentDiffusion ld(ckpt.config.at("latent").get<LatentDiffusionConfig>());
    take_module(ckpt, "denoiser.", *ld.denoiser_);
    auto m = ckpt.tensors.find("stats.mean");
    auto s = ckpt.tensors.find("stats.std");
    if (m == ckpt.tensors.end() || s == ckpt.tensors.end()) {
        throw std::runtime_error("latent checkpoint missing whitening statistics");
    }
    ld.stats_ = {m->second, s->second};
    ld.denoiser_->eval();
    return ld;
}

} // namespace hdae
