#include "hdae/trainer.hpp"

#include "hdae/checkpoint.hpp"
#include "hdae/image_io.hpp"
#include "hdae/shapes.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hdae {

namespace fs = std::filesystem;

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg)
    : model_cfg_(model_cfg), train_cfg_(train_cfg),
      gen_(at::make_generator<at::CPUGeneratorImpl>(train_cfg.seed ^ 0x7a11ULL)) {
    model_cfg_.validate();
    train_cfg_.validate();
    torch::manual_seed(train_cfg_.seed);
    model_ = DiffusionAutoencoder(model_cfg_);
    ema_ = DiffusionAutoencoder(model_cfg_);
    copy_weights(*ema_, *model_);
    for (auto& p : ema_->parameters()) {
        p.set_requires_grad(false);
    }
    ema_->eval();
    optimizer_ = std::make_unique<torch::optim::Adam>(
        model_->parameters(), torch::optim::AdamOptions(train_cfg_.learning_rate)
                                  .betas({train_cfg_.adam_beta1, train_cfg_.adam_beta2}));
}

double Trainer::step(const ImageTensor& batch) {
    model_->train();
    const auto B = batch.size(0);
    const auto T = model_cfg_.diffusion.steps;
    auto t = torch::randint(1, T + 1, {B}, gen_, torch::kLong);
    auto eps = torch::randn(batch.sizes(), gen_, batch.options());

    optimizer_->zero_grad();
    auto code = model_->encode_semantic(batch);
    auto x_t = q_sample(batch, t, eps, model_->schedule());
    auto loss = noise_loss(eps, model_->predict_noise(x_t, t, code));
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step_));
    }
    loss.backward();
    if (train_cfg_.grad_clip > 0) {
        torch::nn::utils::clip_grad_norm_(model_->parameters(), train_cfg_.grad_clip);
    }
    optimizer_->step();
    ema_update(*ema_, *model_, train_cfg_.ema_decay);
    ++step_;
    return value;
}

double Trainer::step_sampled(const ImageTensor& images) {
    auto idx = torch::randint(0, images.size(0), {train_cfg_.batch_size}, gen_, torch::kLong);
    return step(images.index_select(0, idx));
}

double Trainer::evaluate_loss(const ImageTensor& batch, const torch::Tensor& t, const torch::Tensor& eps) {
    torch::NoGradGuard no_grad;
    auto code = model_->encode_semantic(batch);
    auto x_t = q_sample(batch, t, eps, model_->schedule());
    return noise_loss(eps, model_->predict_noise(x_t, t, code)).item<double>();
}

void Trainer::save(const fs::path& path) { save_model(path, model_, &ema_, train_cfg_, step_); }

double reconstruction_mse(DiffusionAutoencoder& model, const ImageTensor& images, const StepPlan& plan,
                          int64_t batch_size) {
    torch::NoGradGuard no_grad;
    model->eval();
    double total = 0.0;
    const auto N = images.size(0);
    for (int64_t s = 0; s < N; s += batch_size) {
        auto x0 = images.narrow(0, s, std::min(batch_size, N - s));
        auto code = model->encode_semantic(x0);
        auto xT = encode_stochastic(model->predictor(), x0, code, plan, model->schedule());
        auto rec = generate(model->predictor(), code, xT, plan, model->schedule());
        total += (rec - x0).pow(2).sum().item<double>();
    }
    return total / static_cast<double>(images.numel());
}

TrainResult train(Trainer& trainer, const ImageTensor& train_images, const ImageTensor& validation_images,
                  const TrainOptions& options) {
    const auto& cfg = trainer.train_config();
    if (train_images.size(0) == 0) {
        throw std::invalid_argument("training set is empty");
    }
    TrainResult result;
    std::ofstream loss_log;
    if (options.out_dir) {
        fs::create_directories(*options.out_dir);
        loss_log.open(*options.out_dir / "loss.csv");
        loss_log << "step,loss\n";
    }
    const auto plan = trainer.model()->default_plan();
    auto val = validation_images.size(0) > cfg.validation_images
                   ? validation_images.narrow(0, 0, cfg.validation_images)
                   : validation_images;

    auto checkpoint = [&](int64_t step) {
        if (val.size(0) > 0) {
            ValidationPoint vp{step, reconstruction_mse(trainer.ema(), val, plan)};
            result.validation.push_back(vp);
            if (options.on_validation) {
                options.on_validation(vp);
            }
        }
        if (options.out_dir) {
            const auto path = *options.out_dir / ("step_" + std::to_string(step) + ".hdae");
            trainer.save(path);
            fs::copy_file(path, *options.out_dir / "last.hdae", fs::copy_options::overwrite_existing);
            result.checkpoints.push_back(path);
        }
    };

    while (trainer.steps_done() < cfg.total_steps) {
        const double loss = trainer.step_sampled(train_images);
        result.losses.push_back(loss);
        const auto s = trainer.steps_done();
        if (loss_log.is_open()) {
            loss_log << s << ',' << loss << '\n';
        }
        if (s % cfg.log_every == 0 && options.on_log) {
            options.on_log(s, loss);
        }
        if (s % cfg.checkpoint_every == 0 || s == cfg.total_steps) {
            checkpoint(s);
        }
    }
    return result;
}

LoadedData load_training_data(const TrainConfig& cfg, int64_t image_size) {
    ImageTensor all;
    if (cfg.data.kind == "shapes") {
        auto spec = cfg.data.shapes;
        if (spec.canvas != image_size) {
            throw std::invalid_argument("shapes canvas does not match model image size");
        }
        all = generate_shapes(spec).images;
    } else {
        all = load_image_folder(cfg.data.folder, image_size);
    }
    const auto split = split_indices(all.size(0));
    auto pick = [&](const std::vector<int64_t>& idx) {
        if (idx.empty()) {
            return torch::empty({0, all.size(1), all.size(2), all.size(3)});
        }
        return all.index_select(0, torch::tensor(idx, torch::kLong));
    };
    return {pick(split.train), pick(split.validation)};
}

} // namespace hdae
