#include "hdae/evaluation.hpp"

#include "hdae/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <nlohmann/json.hpp>
#include <torch/version.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hdae {

namespace fs = std::filesystem;

double mse(const torch::Tensor& a, const torch::Tensor& b) {
    if (!a.sizes().equals(b.sizes())) {
        throw std::invalid_argument("mse: shape mismatch");
    }
    if (a.numel() == 0) {
        throw std::invalid_argument("mse: empty tensors");
    }
    return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
}

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
    if (!a.sizes().equals(b.sizes())) {
        throw std::invalid_argument("ssim: shape mismatch");
    }
    if (a.dim() != 3 && a.dim() != 4) {
        throw std::invalid_argument("ssim: expected [C, H, W] or [B, C, H, W]");
    }
    auto x = (a.dim() == 3 ? a.unsqueeze(0) : a).to(torch::kFloat64);
    auto y = (b.dim() == 3 ? b.unsqueeze(0) : b).to(torch::kFloat64);
    if (x.size(2) < kSsimWindow || x.size(3) < kSsimWindow) {
        throw std::invalid_argument("ssim: image smaller than the 7x7 window");
    }
    constexpr double range = 2.0;
    constexpr double c1 = (0.01 * range) * (0.01 * range);
    constexpr double c2 = (0.03 * range) * (0.03 * range);
    constexpr double np = kSsimWindow * kSsimWindow;
    constexpr double cov_norm = np / (np - 1.0);

    auto mean = [](const torch::Tensor& t) { return torch::avg_pool2d(t, kSsimWindow, 1); };
    auto ux = mean(x), uy = mean(y);
    auto vx = cov_norm * (mean(x * x) - ux * ux);
    auto vy = cov_norm * (mean(y * y) - uy * uy);
    auto vxy = cov_norm * (mean(x * y) - ux * uy);
    auto s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    return s.mean().item<double>();
}

std::string_view to_string(XTMode m) { return m == XTMode::Encoded ? "encoded_xT" : "random_xT"; }

void BenchReport::write_csv(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "name,variant,steps_trained,xT_mode,mse,ssim,perceptual,images\n";
    out.precision(10);
    for (const auto& r : rows) {
        out << r.name << ',' << r.variant << ',' << r.steps_trained << ',' << to_string(r.mode) << ',' << r.mse << ','
            << r.ssim << ',';
        if (r.perceptual) {
            out << *r.perceptual;
        }
        out << ',' << r.images << '\n';
    }
}

void BenchReport::write_json(const fs::path& path) const {
    nlohmann::json j;
    j["environment"] = environment;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row{{"name", r.name},   {"variant", r.variant}, {"steps_trained", r.steps_trained},
                           {"xT_mode", to_string(r.mode)}, {"mse", r.mse}, {"ssim", r.ssim},
                           {"images", r.images}};
        row["perceptual"] = r.perceptual ? nlohmann::json(*r.perceptual) : nlohmann::json(nullptr);
        j["rows"].push_back(row);
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

namespace {

torch::Tensor reconstruct_batch(DiffusionAutoencoder& model, const ImageTensor& x0, const StepPlan& plan, XTMode mode,
                                at::Generator& gen) {
    auto code = model->encode_semantic(x0);
    StochasticCode xT = mode == XTMode::Encoded
                            ? encode_stochastic(model->predictor(), x0, code, plan, model->schedule())
                            : torch::randn(x0.sizes(), gen, x0.options());
    return generate(model->predictor(), code, xT, plan, model->schedule());
}

torch::Tensor reconstruct_all(DiffusionAutoencoder& model, const ImageTensor& images, const StepPlan& plan,
                              XTMode mode, uint64_t seed, int64_t batch_size) {
    torch::NoGradGuard no_grad;
    model->eval();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    std::vector<torch::Tensor> parts;
    const auto N = images.size(0);
    for (int64_t s = 0; s < N; s += batch_size) {
        parts.push_back(reconstruct_batch(model, images.narrow(0, s, std::min(batch_size, N - s)), plan, mode, gen));
    }
    return torch::cat(parts);
}

} // namespace

std::vector<double> per_image_reconstruction_mse(DiffusionAutoencoder& model, const ImageTensor& images,
                                                 const StepPlan& plan, XTMode mode, uint64_t seed,
                                                 int64_t batch_size) {
    auto rec = reconstruct_all(model, images, plan, mode, seed, batch_size);
    auto per = (rec.to(torch::kFloat64) - images.to(torch::kFloat64)).pow(2).flatten(1).mean(1).contiguous();
    return {per.data_ptr<double>(), per.data_ptr<double>() + per.numel()};
}

BenchReport reconstruction_benchmark(std::vector<BenchModel>& models, const ImageTensor& images, const StepPlan& plan,
                                     const BenchOptions& options) {
    if (images.size(0) == 0) {
        throw std::invalid_argument("reconstruction_benchmark: no images");
    }
    BenchReport report;
    report.environment = "torch " + std::string(TORCH_VERSION) + "; threads " +
                         std::to_string(at::get_num_threads()) + "; plan " + std::to_string(plan.size()) +
                         " steps; ssim 7x7 uniform, range 2, K1 0.01, K2 0.03, sample covariance";
    for (auto& m : models) {
        for (auto mode : options.modes) {
            auto rec = reconstruct_all(m.model, images, plan, mode, options.seed, options.batch_size);
            BenchRow row;
            row.name = m.name;
            row.variant = std::string(to_string(m.model->config().variant));
            row.steps_trained = m.steps_trained;
            row.mode = mode;
            row.mse = mse(rec, images);
            row.ssim = ssim(rec, images);
            if (options.perceptual) {
                row.perceptual = options.perceptual(rec, images);
            }
            row.images = images.size(0);
            report.rows.push_back(row);
        }
    }
    return report;
}

std::vector<AblationCurve> ablation_harness(const std::vector<Variant>& variants, const ModelConfig& base_model,
                                            const TrainConfig& train_cfg, const ImageTensor& train_images,
                                            const ImageTensor& validation_images, const AblationOptions& options) {
    if (variants.empty()) {
        throw std::invalid_argument("ablation_harness: no variants");
    }
    if (options.checkpoints < 3 || train_cfg.total_steps < options.checkpoints) {
        throw std::invalid_argument("ablation_harness: budget of " + std::to_string(train_cfg.total_steps) +
                                    " steps cannot produce 3 or more checkpoints");
    }
    TrainConfig cfg = train_cfg;
    cfg.checkpoint_every = train_cfg.total_steps / options.checkpoints;
    if (cfg.total_steps / cfg.checkpoint_every < 3) {
        throw std::invalid_argument("ablation_harness: budget too small for 3 checkpoints");
    }

    std::vector<AblationCurve> curves;
    for (auto v : variants) {
        ModelConfig mc = base_model;
        mc.variant = v;
        Trainer trainer(mc, cfg);
        TrainOptions topts;
        if (options.out_dir) {
            topts.out_dir = *options.out_dir / std::string(to_string(v));
        }
        if (options.on_validation) {
            topts.on_validation = [&](const ValidationPoint& vp) { options.on_validation(v, vp); };
        }
        auto result = train(trainer, train_images, validation_images, topts);
        AblationCurve c;
        c.variant = v;
        c.losses = std::move(result.losses);
        for (const auto& vp : result.validation) {
            c.steps.push_back(vp.step);
            c.validation_mse.push_back(vp.reconstruction_mse);
        }
        if (!result.checkpoints.empty()) {
            c.final_checkpoint = result.checkpoints.back();
        }
        curves.push_back(std::move(c));
    }
    return curves;
}

namespace {

std::vector<size_t> ordering_indices(const std::vector<AblationCurve>& curves) {
    std::vector<size_t> idx(curves.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto last = [&](size_t i) {
        return curves[i].validation_mse.empty() ? std::numeric_limits<double>::infinity()
                                                : curves[i].validation_mse.back();
    };
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return last(a) < last(b); });
    return idx;
}

} // namespace

std::vector<Variant> final_ordering(const std::vector<AblationCurve>& curves) {
    std::vector<Variant> out;
    for (auto i : ordering_indices(curves)) {
        out.push_back(curves[i].variant);
    }
    return out;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationCurve>& curves) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.precision(10);
    out << "step,variant,validation_mse\n";
    for (const auto& c : curves) {
        for (size_t i = 0; i < c.steps.size(); ++i) {
            out << c.steps[i] << ',' << to_string(c.variant) << ',' << c.validation_mse[i] << '\n';
        }
    }
    out << "\n# final ordering (best first)\nrank,variant,final_mse\n";
    const auto order = ordering_indices(curves);
    for (size_t r = 0; r < order.size(); ++r) {
        const auto& c = curves[order[r]];
        out << r + 1 << ',' << to_string(c.variant) << ','
            << (c.validation_mse.empty() ? 0.0 : c.validation_mse.back()) << '\n';
    }
}

} // namespace hdae
