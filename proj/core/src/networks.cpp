#include "hdae/networks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hdae {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

nn::Conv2d conv1x1(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1)); }

nn::GroupNorm group_norm(int64_t groups, int64_t channels, bool affine = true) {
    if (groups < 1 || channels % groups != 0) {
        throw std::invalid_argument("group count " + std::to_string(groups) + " does not divide " +
                                    std::to_string(channels) + " channels");
    }
    return nn::GroupNorm(nn::GroupNormOptions(groups, channels).affine(affine));
}

bool contains(const std::vector<int64_t>& v, int64_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }

} // namespace

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim) {
    const int64_t half = dim / 2;
    auto opts = torch::TensorOptions().dtype(t.is_floating_point() ? t.scalar_type() : torch::kFloat32);
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
    auto args = t.to(opts.dtype_opt()->toScalarType()).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
    if (dim % 2 == 1) {
        emb = F::pad(emb, F::PadFuncOptions({0, 1}));
    }
    return emb;
}

// ---------------------------------------------------------------------------
// AdaGroupNorm

AdaGroupNormImpl::AdaGroupNormImpl(int64_t channels, int64_t groups, int64_t time_dim, int64_t code_width)
    : channels_(channels), groups_(groups) {
    if (groups < 1 || channels % groups != 0) {
        throw std::invalid_argument("AdaGN: group count must divide channel count");
    }
    time_head = register_module("time_head", nn::Linear(time_dim, 2 * channels));
    code_head = register_module("code_head", nn::Linear(code_width, channels));
    reset_code_head();
}

void AdaGroupNormImpl::reset_code_head() {
    torch::NoGradGuard no_grad;
    code_head->weight.zero_();
    code_head->bias.zero_();
}

torch::Tensor AdaGroupNormImpl::forward(const torch::Tensor& h, const torch::Tensor& t_embed, const torch::Tensor& z) {
    if (h.size(1) != channels_) {
        throw std::invalid_argument("AdaGN: channel mismatch");
    }
    auto normed = F::group_norm(h, F::GroupNormFuncOptions(groups_));
    auto ts = time_head(torch::silu(t_embed)).unsqueeze(-1).unsqueeze(-1);
    auto parts = ts.chunk(2, 1);
    auto out = (1.0 + parts[0]) * normed + parts[1];
    auto zs = code_head(z).unsqueeze(-1).unsqueeze(-1);
    return (1.0 + zs) * out;
}

// ---------------------------------------------------------------------------
// Residual blocks

CondResBlockImpl::CondResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t groups, int64_t time_dim,
                                   int64_t code_width) {
    norm1 = register_module("norm1", group_norm(groups, in_ch));
    conv1 = register_module("conv1", conv3x3(in_ch, out_ch));
    adagn = register_module("adagn", AdaGroupNorm(out_ch, groups, time_dim, code_width));
    conv2 = register_module("conv2", conv3x3(out_ch, out_ch));
    if (in_ch != out_ch) {
        skip = register_module("skip", conv1x1(in_ch, out_ch));
    }
}

torch::Tensor CondResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& t_embed, const torch::Tensor& z) {
    auto h = conv1(torch::silu(norm1(x)));
    h = conv2(torch::silu(adagn(h, t_embed, z)));
    return (skip ? skip(x) : x) + h;
}

ResBlockImpl::ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t groups) {
    norm1 = register_module("norm1", group_norm(groups, in_ch));
    conv1 = register_module("conv1", conv3x3(in_ch, out_ch));
    norm2 = register_module("norm2", group_norm(groups, out_ch));
    conv2 = register_module("conv2", conv3x3(out_ch, out_ch));
    if (in_ch != out_ch) {
        skip = register_module("skip", conv1x1(in_ch, out_ch));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    auto h = conv1(torch::silu(norm1(x)));
    h = conv2(torch::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
}

SelfAttentionImpl::SelfAttentionImpl(int64_t channels, int64_t groups) {
    norm = register_module("norm", group_norm(groups, channels));
    qkv = register_module("qkv", conv1x1(channels, 3 * channels));
    proj = register_module("proj", conv1x1(channels, channels));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x) {
    const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    auto parts = qkv(norm(x)).reshape({B, 3, C, H * W}).unbind(1);
    auto attn = torch::softmax(torch::bmm(parts[0].transpose(1, 2), parts[1]) / std::sqrt(static_cast<double>(C)), -1);
    auto out = torch::bmm(parts[2], attn.transpose(1, 2)).reshape({B, C, H, W});
    return x + proj(out);
}

// ---------------------------------------------------------------------------
// Semantic encoder

SemanticEncoderImpl::SemanticEncoderImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto R = cfg_.resolution_levels();
    const auto L = cfg_.levels;
    std::vector<int64_t> ch;
    for (auto m : cfg_.channel_mult) {
        ch.push_back(cfg_.base_width * m);
    }

    conv_in = register_module("conv_in", conv3x3(cfg_.channels, ch[0]));
    int64_t cur = ch[0];
    for (int64_t r = 0; r < R; ++r) {
        nn::Sequential level;
        for (int64_t b = 0; b < cfg_.num_res_blocks; ++b) {
            level->push_back(ResBlock(cur, ch[r], cfg_.groups));
            cur = ch[r];
        }
        down_blocks->push_back(level);
        if (r + 1 < R) {
            downsamplers->push_back(conv3x3(cur, cur, 2));
        }
    }
    register_module("down_blocks", down_blocks);
    register_module("downsamplers", downsamplers);

    if (uses_unet_encoder(cfg_.variant)) {
        // up_blocks[i] handles resolution level R-1-i.
        for (int64_t r = R - 1; r >= 0; --r) {
            const int64_t in = r == R - 1 ? cur : cur + ch[r];
            up_blocks->push_back(ResBlock(in, ch[r], cfg_.groups));
            cur = ch[r];
            if (r > 0) {
                upsamplers->push_back(conv3x3(cur, cur));
            }
        }
        register_module("up_blocks", up_blocks);
        register_module("upsamplers", upsamplers);
    }

    // Code level l reads resolution level l, except the last code, which
    // always reads the deepest level.
    auto res_of = [&](int64_t l) { return l == L - 1 ? R - 1 : l; };
    switch (cfg_.variant) {
    case Variant::DAE:
    case Variant::DAE_WIDE:
        taps_.push_back({false, R - 1});
        break;
    case Variant::DAE_U:
        taps_.push_back({true, 0});
        break;
    case Variant::HDAE_E:
        for (int64_t l = 0; l < L; ++l) {
            taps_.push_back({false, res_of(l)});
        }
        break;
    case Variant::HDAE_U:
        for (int64_t l = 0; l < L; ++l) {
            taps_.push_back({true, res_of(l)});
        }
        break;
    case Variant::HDAE_UPLUS:
        for (int64_t l = 0; l < L; ++l) {
            taps_.push_back({false, res_of(l)});
        }
        for (int64_t l = 0; l < L; ++l) {
            taps_.push_back({true, res_of(l)});
        }
        break;
    }
    for (const auto& tap : taps_) {
        const auto c = ch[static_cast<size_t>(tap.level)];
        heads->push_back(nn::Sequential(group_norm(cfg_.groups, c), nn::SiLU(),
                                        nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)), nn::Flatten(),
                                        nn::Linear(c, cfg_.code_width())));
    }
    register_module("heads", heads);
}

HierarchicalCode SemanticEncoderImpl::forward(const torch::Tensor& x0) {
    if (x0.dim() != 4 || x0.size(1) != cfg_.channels || x0.size(2) != cfg_.image_size ||
        x0.size(3) != cfg_.image_size) {
        throw std::invalid_argument("semantic encoder: input must be [B, " + std::to_string(cfg_.channels) + ", " +
                                    std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + "]");
    }
    const auto R = cfg_.resolution_levels();
    std::vector<torch::Tensor> down(static_cast<size_t>(R)), up(static_cast<size_t>(R));
    auto h = conv_in(x0);
    for (int64_t r = 0; r < R; ++r) {
        h = down_blocks[static_cast<size_t>(r)]->as<nn::SequentialImpl>()->forward(h);
        down[static_cast<size_t>(r)] = h;
        if (r + 1 < R) {
            h = downsamplers[static_cast<size_t>(r)]->as<nn::Conv2dImpl>()->forward(h);
        }
    }
    if (uses_unet_encoder(cfg_.variant)) {
        size_t ui = 0;
        for (int64_t r = R - 1; r >= 0; --r, ++ui) {
            if (r < R - 1) {
                auto u = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0})
                                               .mode(torch::kNearest));
                u = upsamplers[ui - 1]->as<nn::Conv2dImpl>()->forward(u);
                h = torch::cat({u, down[static_cast<size_t>(r)]}, 1);
            }
            h = up_blocks[ui]->as<ResBlockImpl>()->forward(h);
            up[static_cast<size_t>(r)] = h;
        }
    }
    std::vector<torch::Tensor> codes;
    for (size_t i = 0; i < taps_.size(); ++i) {
        const auto& src = taps_[i].up ? up : down;
        codes.push_back(heads[i]->as<nn::SequentialImpl>()->forward(src[static_cast<size_t>(taps_[i].level)]));
    }
    return HierarchicalCode::from_levels(codes);
}

// ---------------------------------------------------------------------------
// Diffusion U-Net

DiffusionUNetImpl::DiffusionUNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto R = cfg_.resolution_levels();
    const auto width = cfg_.code_width();
    const auto G = cfg_.groups;
    std::vector<int64_t> ch;
    for (auto m : cfg_.channel_mult) {
        ch.push_back(cfg_.base_width * m);
    }
    time_dim_ = 4 * cfg_.base_width;
    time_mlp = register_module("time_mlp", nn::Sequential(nn::Linear(cfg_.base_width, time_dim_), nn::SiLU(),
                                                         nn::Linear(time_dim_, time_dim_)));
    conv_in = register_module("conv_in", conv3x3(cfg_.channels, ch[0]));

    int64_t cur = ch[0];
    for (int64_t r = 0; r < R; ++r) {
        for (int64_t b = 0; b < cfg_.num_res_blocks; ++b) {
            down_blocks->push_back(CondResBlock(cur, ch[r], G, time_dim_, width));
            cur = ch[r];
            down_attn->push_back(contains(cfg_.attention_levels, r)
                                      ? std::shared_ptr<nn::Module>(SelfAttention(cur, G).ptr())
                                      : std::shared_ptr<nn::Module>(nn::Identity().ptr()));
            down_level_of_.push_back(r);
            skip_channels_.push_back(cur);
        }
        if (r + 1 < R) {
            downsamplers->push_back(conv3x3(cur, cur, 2));
        }
    }
    mid1 = register_module("mid1", CondResBlock(cur, cur, G, time_dim_, width));
    mid_attn = register_module("mid_attn", SelfAttention(cur, G));
    mid2 = register_module("mid2", CondResBlock(cur, cur, G, time_dim_, width));

    auto skips = skip_channels_;
    for (int64_t r = R - 1; r >= 0; --r) {
        for (int64_t b = 0; b < cfg_.num_res_blocks; ++b) {
            const auto skip_ch = skips.back();
            skips.pop_back();
            up_blocks->push_back(CondResBlock(cur + skip_ch, ch[r], G, time_dim_, width));
            cur = ch[r];
            up_attn->push_back(contains(cfg_.attention_levels, r)
                                    ? std::shared_ptr<nn::Module>(SelfAttention(cur, G).ptr())
                                    : std::shared_ptr<nn::Module>(nn::Identity().ptr()));
            up_level_of_.push_back(r);
        }
        if (r > 0) {
            upsamplers->push_back(conv3x3(cur, cur));
        }
    }
    register_module("down_blocks", down_blocks);
    register_module("down_attn", down_attn);
    register_module("downsamplers", downsamplers);
    register_module("up_blocks", up_blocks);
    register_module("up_attn", up_attn);
    register_module("upsamplers", upsamplers);
    norm_out = register_module("norm_out", group_norm(G, cur));
    conv_out = register_module("conv_out", conv3x3(cur, cfg_.channels));
}

torch::Tensor DiffusionUNetImpl::route(const HierarchicalCode& code, int64_t r, bool up_path) const {
    if (!is_hierarchical(cfg_.variant)) {
        return code.level(0);
    }
    const auto l = std::min(r, cfg_.levels - 1);
    if (cfg_.variant == Variant::HDAE_UPLUS && up_path) {
        return code.level(cfg_.levels + l);
    }
    return code.level(l);
}

std::vector<AdaGroupNorm> DiffusionUNetImpl::adagn_layers() const {
    std::vector<AdaGroupNorm> out;
    for (const auto& m : modules(/*include_self=*/false)) {
        if (auto p = std::dynamic_pointer_cast<AdaGroupNormImpl>(m)) {
            out.emplace_back(p);
        }
    }
    return out;
}

torch::Tensor DiffusionUNetImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t,
                                         const HierarchicalCode& code) {
    const auto R = cfg_.resolution_levels();
    auto temb = time_mlp->forward(timestep_embedding(t.to(x_t.scalar_type()), cfg_.base_width));
    auto h = conv_in(x_t);
    std::vector<torch::Tensor> skips;
    size_t di = 0;
    for (int64_t r = 0; r < R; ++r) {
        const auto z = route(code, r, false);
        for (int64_t b = 0; b < cfg_.num_res_blocks; ++b, ++di) {
            h = down_blocks[di]->as<CondResBlockImpl>()->forward(h, temb, z);
            if (auto* attn = down_attn[di]->as<SelfAttentionImpl>()) {
                h = attn->forward(h);
            }
            skips.push_back(h);
        }
        if (r + 1 < R) {
            h = downsamplers[static_cast<size_t>(r)]->as<nn::Conv2dImpl>()->forward(h);
        }
    }
    h = mid1(h, temb, route(code, R - 1, false));
    h = mid_attn(h);
    h = mid2(h, temb, route(code, R - 1, true));

    size_t ui = 0, si = 0;
    for (int64_t r = R - 1; r >= 0; --r) {
        const auto z = route(code, r, true);
        for (int64_t b = 0; b < cfg_.num_res_blocks; ++b, ++ui) {
            h = torch::cat({h, skips.back()}, 1);
            skips.pop_back();
            h = up_blocks[ui]->as<CondResBlockImpl>()->forward(h, temb, z);
            if (auto* attn = up_attn[ui]->as<SelfAttentionImpl>()) {
                h = attn->forward(h);
            }
        }
        if (r > 0) {
            h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest));
            h = upsamplers[si++]->as<nn::Conv2dImpl>()->forward(h);
        }
    }
    return conv_out(torch::silu(norm_out(h)));
}

// ---------------------------------------------------------------------------
// Autoencoder

DiffusionAutoencoderImpl::DiffusionAutoencoderImpl(const ModelConfig& cfg)
    : cfg_(cfg),
      schedule_(NoiseSchedule::linear(cfg.diffusion.steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end)) {
    cfg_.validate();
    encoder = register_module("encoder", SemanticEncoder(cfg_));
    decoder = register_module("decoder", DiffusionUNet(cfg_));
}

void DiffusionAutoencoderImpl::check_code(const HierarchicalCode& code) const {
    if (!code.defined() || code.num_levels() != cfg_.code_levels() || code.dim() != cfg_.code_width()) {
        throw std::invalid_argument("code shape incompatible with variant " + std::string(to_string(cfg_.variant)) +
                                    ": expected " + std::to_string(cfg_.code_levels()) + "x" +
                                    std::to_string(cfg_.code_width()));
    }
}

HierarchicalCode DiffusionAutoencoderImpl::encode_semantic(const ImageTensor& x0) {
    return encoder(x0.dim() == 3 ? x0.unsqueeze(0) : x0);
}

torch::Tensor DiffusionAutoencoderImpl::predict_noise(const ImageTensor& x_t, const torch::Tensor& t,
                                                      const HierarchicalCode& code) {
    check_code(code);
    if (x_t.dim() != 4 || x_t.size(1) != cfg_.channels || x_t.size(2) != cfg_.image_size ||
        x_t.size(3) != cfg_.image_size) {
        throw std::invalid_argument("predict_noise: x_t has the wrong shape");
    }
    if (code.batch() != x_t.size(0)) {
        if (code.batch() != 1) {
            throw std::invalid_argument("predict_noise: code batch does not match x_t");
        }
        return decoder(x_t, t, HierarchicalCode(code.tensor().expand({x_t.size(0), code.num_levels(), code.dim()})));
    }
    return decoder(x_t, t, code);
}

torch::Tensor DiffusionAutoencoderImpl::predict_noise(const ImageTensor& x_t, int64_t t, const HierarchicalCode& code) {
    if (t < 0 || t > schedule_.steps()) {
        throw std::out_of_range("predict_noise: step out of range");
    }
    return predict_noise(x_t, torch::full({x_t.size(0)}, t, torch::TensorOptions().dtype(torch::kLong)), code);
}

NoisePredictor DiffusionAutoencoderImpl::predictor() {
    return [this](const torch::Tensor& x, int64_t t, const HierarchicalCode& code) {
        return predict_noise(x, t, code);
    };
}

void DiffusionAutoencoderImpl::ablate_code_conditioning() {
    for (auto& layer : decoder->adagn_layers()) {
        layer->reset_code_head();
    }
}

StepPlan DiffusionAutoencoderImpl::default_plan() const {
    return StepPlan::strided(cfg_.diffusion.steps, cfg_.diffusion.inference_steps);
}

// ---------------------------------------------------------------------------

void copy_weights(nn::Module& dst, const nn::Module& src) {
    torch::NoGradGuard no_grad;
    auto dp = dst.named_parameters();
    for (const auto& item : src.named_parameters()) {
        dp[item.key()].copy_(item.value());
    }
    auto db = dst.named_buffers();
    for (const auto& item : src.named_buffers()) {
        db[item.key()].copy_(item.value());
    }
}

void ema_update(nn::Module& ema, const nn::Module& model, double decay) {
    torch::NoGradGuard no_grad;
    auto ep = ema.named_parameters();
    for (const auto& item : model.named_parameters()) {
        auto& e = ep[item.key()];
        e.mul_(decay).add_(item.value(), 1.0 - decay);
    }
    auto eb = ema.named_buffers();
    for (const auto& item : model.named_buffers()) {
        eb[item.key()].copy_(item.value());
    }
}

int64_t parameter_count(const nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) {
        n += p.numel();
    }
    return n;
}

} // namespace hdae
