#include "hdae/latent_ops.hpp"

#include "hdae/hash.hpp"
#include "hdae/latent_ddim.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hdae {

std::string tensor_fingerprint(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    return Sha256()
        .update(std::span(static_cast<const std::byte*>(c.data_ptr()), c.nbytes()))
        .hex_digest();
}

void InterpolationPath::validate(int64_t levels) const {
    if (static_cast<int64_t>(lambdas.size()) != levels) {
        throw std::invalid_argument("interpolation path needs one lambda per code level");
    }
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) {
            throw std::invalid_argument("interpolation lambda outside [0, 1]");
        }
    }
    if (!(xT_weight >= 0.0 && xT_weight <= 1.0)) {
        throw std::invalid_argument("xT weight outside [0, 1]");
    }
}

EncodedImage encode(DiffusionAutoencoder& model, const ImageTensor& x0, const StepPlan& plan) {
    torch::NoGradGuard no_grad;
    model->eval();
    auto batch = x0.dim() == 3 ? x0.unsqueeze(0) : x0;
    EncodedImage out;
    out.code = model->encode_semantic(batch);
    out.xT = encode_stochastic(model->predictor(), batch, out.code, plan, model->schedule());
    out.fingerprint = tensor_fingerprint(batch);
    return out;
}

HierarchicalCode encode_codes(DiffusionAutoencoder& model, const ImageTensor& images, int64_t batch_size) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<HierarchicalCode> parts;
    const auto N = images.size(0);
    for (int64_t s = 0; s < N; s += batch_size) {
        parts.push_back(model->encode_semantic(images.narrow(0, s, std::min(batch_size, N - s))));
    }
    if (parts.empty()) {
        throw std::invalid_argument("encode_codes: no images");
    }
    return HierarchicalCode::cat(parts);
}

ImageTensor reconstruct(DiffusionAutoencoder& model, const EncodedImage& encoded, const StepPlan& plan,
                        bool randomize_xT, uint64_t seed) {
    torch::NoGradGuard no_grad;
    model->eval();
    auto xT = encoded.xT;
    if (randomize_xT) {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
        xT = torch::randn(encoded.xT.sizes(), gen, encoded.xT.options());
    }
    return generate(model->predictor(), encoded.code, xT, plan, model->schedule());
}

HierarchicalCode style_mix(const HierarchicalCode& a, const HierarchicalCode& b, int64_t split, bool swap) {
    if (!a.same_shape(b) || a.batch() != b.batch()) {
        throw std::invalid_argument("style_mix: code shapes differ");
    }
    const auto L = a.num_levels();
    if (split < 0 || split > L) {
        throw std::invalid_argument("style_mix: split must lie in [0, L]");
    }
    const auto& high = swap ? b : a;
    const auto& low = swap ? a : b;
    auto out = high.tensor().clone();
    if (split > 0) {
        out.narrow(1, 0, split).copy_(low.tensor().narrow(1, 0, split));
    }
    return HierarchicalCode(out);
}

torch::Tensor slerp(const torch::Tensor& a, const torch::Tensor& b, double weight) {
    if (!a.sizes().equals(b.sizes())) {
        throw std::invalid_argument("slerp: shape mismatch");
    }
    if (weight == 0.0) {
        return a.clone();
    }
    if (weight == 1.0) {
        return b.clone();
    }
    const auto B = a.size(0);
    auto fa = a.reshape({B, -1}).to(torch::kFloat64);
    auto fb = b.reshape({B, -1}).to(torch::kFloat64);
    auto cos = (fa * fb).sum(1) / (fa.norm(2, 1) * fb.norm(2, 1)).clamp_min(1e-12);
    auto omega = torch::acos(cos.clamp(-1.0, 1.0));
    auto so = torch::sin(omega);
    auto lerp_mask = so.abs() < 1e-6;
    auto wa = torch::where(lerp_mask, torch::full_like(so, 1.0 - weight), torch::sin((1.0 - weight) * omega) / so);
    auto wb = torch::where(lerp_mask, torch::full_like(so, weight), torch::sin(weight * omega) / so);
    auto out = wa.unsqueeze(1) * fa + wb.unsqueeze(1) * fb;
    return out.reshape(a.sizes()).to(a.scalar_type());
}

std::pair<HierarchicalCode, StochasticCode> interpolate(const EncodedImage& a, const EncodedImage& b,
                                                        const InterpolationPath& path) {
    if (!a.code.same_shape(b.code) || a.code.batch() != b.code.batch() || !a.xT.sizes().equals(b.xT.sizes())) {
        throw std::invalid_argument("interpolate: encoded images differ in shape");
    }
    path.validate(a.code.num_levels());
    auto out = torch::empty_like(a.code.tensor());
    for (int64_t l = 0; l < a.code.num_levels(); ++l) {
        const double lam = path.lambdas[static_cast<size_t>(l)];
        out.select(1, l).copy_(a.code.level(l) * (1.0 - lam) + b.code.level(l) * lam);
    }
    return {HierarchicalCode(out), slerp(a.xT, b.xT, path.xT_weight)};
}

namespace {

std::vector<InterpolationPath> staged_path(int64_t steps, int64_t levels, bool low_first) {
    if (steps < 2) {
        throw std::invalid_argument("interpolation path needs at least 2 frames");
    }
    if (levels < 1) {
        throw std::invalid_argument("interpolation path needs at least one level");
    }
    std::vector<InterpolationPath> frames;
    for (int64_t i = 0; i < steps; ++i) {
        const double progress = static_cast<double>(i) / static_cast<double>(steps - 1) * static_cast<double>(levels);
        InterpolationPath p;
        double sum = 0.0;
        for (int64_t l = 0; l < levels; ++l) {
            const auto rank = low_first ? l : levels - 1 - l;
            const double lam = std::clamp(progress - static_cast<double>(rank), 0.0, 1.0);
            p.lambdas.push_back(lam);
            sum += lam;
        }
        p.xT_weight = sum / static_cast<double>(levels);
        frames.push_back(std::move(p));
    }
    return frames;
}

} // namespace

std::vector<InterpolationPath> low_first_path(int64_t steps, int64_t levels) {
    return staged_path(steps, levels, true);
}

std::vector<InterpolationPath> high_first_path(int64_t steps, int64_t levels) {
    return staged_path(steps, levels, false);
}

ImageTensor sample_unconditional(LatentDiffusion& latent, DiffusionAutoencoder& decoder, int64_t count,
                                 uint64_t seed) {
    if (!latent.stats().defined()) {
        throw std::runtime_error("latent model has no whitening statistics");
    }
    const auto& mc = decoder->config();
    if (count < 0) {
        throw std::invalid_argument("sample count must be non-negative");
    }
    if (count == 0) {
        return torch::empty({0, mc.channels, mc.image_size, mc.image_size});
    }
    if (latent.config().dim != mc.flat_code_size()) {
        throw std::invalid_argument("latent model dimension does not match the decoder's code size");
    }
    torch::NoGradGuard no_grad;
    decoder->eval();
    auto flat = latent.sample_codes(count, seed).to(torch::kFloat32);
    auto code = HierarchicalCode::from_flat(flat, mc.code_levels(), mc.code_width());
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed ^ 0xC0DEULL);
    auto xT = torch::randn({count, mc.channels, mc.image_size, mc.image_size}, gen, torch::kFloat32);
    return generate(decoder->predictor(), code, xT, decoder->default_plan(), decoder->schedule());
}

} // namespace hdae
