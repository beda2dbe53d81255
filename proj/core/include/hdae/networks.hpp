#pragma once

#include "hdae/code.hpp"
#include "hdae/config.hpp"
#include "hdae/diffusion.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace hdae {

/// Sinusoidal embedding of (possibly fractional) timesteps, [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim);

/// Group normalization modulated by a timestep embedding and a code vector:
///
///     out = (1 + code_head(z)) * ((1 + s_t) * GN(h) + b_t),   [s_t, b_t] = time_head(silu(t_embed))
///
/// code_head starts at zero so a fresh layer ignores the code.
class AdaGroupNormImpl : public torch::nn::Module {
public:
    AdaGroupNormImpl(int64_t channels, int64_t groups, int64_t time_dim, int64_t code_width);

    torch::Tensor forward(const torch::Tensor& h, const torch::Tensor& t_embed, const torch::Tensor& z);

    /// Zero the code head (restores independence from z).
    void reset_code_head();

    torch::nn::Linear time_head{nullptr};
    torch::nn::Linear code_head{nullptr};

private:
    int64_t channels_;
    int64_t groups_;
};
TORCH_MODULE(AdaGroupNorm);

/// Residual block of the diffusion decoder; conditioned through AdaGN.
class CondResBlockImpl : public torch::nn::Module {
public:
    CondResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t groups, int64_t time_dim, int64_t code_width);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t_embed, const torch::Tensor& z);

    AdaGroupNorm adagn{nullptr};

private:
    torch::nn::GroupNorm norm1{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(CondResBlock);

/// Plain residual block used by the semantic encoders.
class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t groups);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResBlock);

class SelfAttentionImpl : public torch::nn::Module {
public:
    SelfAttentionImpl(int64_t channels, int64_t groups);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(SelfAttention);

/// Semantic encoder. The plain family is a downsampling CNN; the U-Net
/// family adds an upsampling path with skip connections. Which feature maps
/// feed the code heads depends on the variant:
///   DAE, DAE_WIDE  deepest down-path map
///   DAE_U          final up-path map
///   HDAE_E         down-path map of each level
///   HDAE_U         up-path map of each level
///   HDAE_UPLUS     down-path maps (codes 0..L-1) then up-path maps (L..2L-1)
/// Each head is GN, SiLU, global average pooling, then one linear layer.
class SemanticEncoderImpl : public torch::nn::Module {
public:
    explicit SemanticEncoderImpl(const ModelConfig& cfg);
    HierarchicalCode forward(const torch::Tensor& x0);

private:
    struct Tap {
        bool up;
        int64_t level;
    };
    ModelConfig cfg_;
    torch::nn::Conv2d conv_in{nullptr};
    torch::nn::ModuleList down_blocks, downsamplers, up_blocks, upsamplers, heads;
    std::vector<Tap> taps_;
};
TORCH_MODULE(SemanticEncoder);

/// Conditional noise predictor: U-Net whose blocks at resolution level r are
/// modulated by the code routed to that level.
class DiffusionUNetImpl : public torch::nn::Module {
public:
    explicit DiffusionUNetImpl(const ModelConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const HierarchicalCode& code);

    /// Code vector ([B, width]) consumed by blocks at resolution level r.
    torch::Tensor route(const HierarchicalCode& code, int64_t r, bool up_path) const;

    std::vector<AdaGroupNorm> adagn_layers() const;

private:
    ModelConfig cfg_;
    int64_t time_dim_;
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::ModuleList down_blocks, down_attn, downsamplers, up_blocks, up_attn, upsamplers;
    CondResBlock mid1{nullptr}, mid2{nullptr};
    SelfAttention mid_attn{nullptr};
    std::vector<int64_t> down_level_of_, up_level_of_;
    std::vector<int64_t> skip_channels_;
};
TORCH_MODULE(DiffusionUNet);

/// Semantic encoder plus conditional decoder for one variant.
class DiffusionAutoencoderImpl : public torch::nn::Module {
public:
    explicit DiffusionAutoencoderImpl(const ModelConfig& cfg);

    HierarchicalCode encode_semantic(const ImageTensor& x0);
    torch::Tensor predict_noise(const ImageTensor& x_t, const torch::Tensor& t, const HierarchicalCode& code);
    torch::Tensor predict_noise(const ImageTensor& x_t, int64_t t, const HierarchicalCode& code);

    /// Bound predictor usable with generate/encode_stochastic.
    NoisePredictor predictor();

    /// Zero every AdaGN code head.
    void ablate_code_conditioning();

    const ModelConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    StepPlan default_plan() const;

    SemanticEncoder encoder{nullptr};
    DiffusionUNet decoder{nullptr};

private:
    void check_code(const HierarchicalCode& code) const;

    ModelConfig cfg_;
    NoiseSchedule schedule_;
};
TORCH_MODULE(DiffusionAutoencoder);

/// Copies parameters and buffers from src into dst (same architecture).
void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src);

/// dst <- decay * dst + (1 - decay) * src over parameters; buffers copied.
void ema_update(torch::nn::Module& ema, const torch::nn::Module& model, double decay);

int64_t parameter_count(const torch::nn::Module& m);

} // namespace hdae
