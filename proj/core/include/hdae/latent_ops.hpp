#pragma once

#include "hdae/code.hpp"
#include "hdae/diffusion.hpp"
#include "hdae/networks.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hdae {

class LatentDiffusion;

/// The (semantic code, noise map) pair for one image or a batch.
struct EncodedImage {
    HierarchicalCode code;
    StochasticCode xT;       // [B, C, H, W]
    std::string fingerprint; // sha256 of the source pixels
};

struct InterpolationPath {
    std::vector<double> lambdas; // one weight per code level, each in [0, 1]
    double xT_weight = 0.0;

    /// Throws std::invalid_argument for out-of-range weights or a level-count mismatch.
    void validate(int64_t levels) const;
};

EncodedImage encode(DiffusionAutoencoder& model, const ImageTensor& x0, const StepPlan& plan);

/// Semantic codes only, in batches (no inversion).
HierarchicalCode encode_codes(DiffusionAutoencoder& model, const ImageTensor& images, int64_t batch_size = 256);

/// Decodes with the stored xT, or with a fresh Gaussian map drawn from `seed`.
ImageTensor reconstruct(DiffusionAutoencoder& model, const EncodedImage& encoded, const StepPlan& plan,
                        bool randomize_xT = false, uint64_t seed = 0);

/// Levels [0, split) come from b, levels [split, L) from a; `swap` exchanges
/// the roles of a and b.
HierarchicalCode style_mix(const HierarchicalCode& a, const HierarchicalCode& b, int64_t split, bool swap = false);

/// Spherical interpolation, per batch element, between two noise maps.
torch::Tensor slerp(const torch::Tensor& a, const torch::Tensor& b, double weight);

/// z_l = (1 - lambda_l) A_l + lambda_l B_l; xT by slerp with xT_weight.
std::pair<HierarchicalCode, StochasticCode> interpolate(const EncodedImage& a, const EncodedImage& b,
                                                        const InterpolationPath& path);

/// Frames that saturate lambda_1 before raising lambda_2, and so on. xT
/// weight follows the mean lambda.
std::vector<InterpolationPath> low_first_path(int64_t steps, int64_t levels);
/// Level-reversed counterpart of low_first_path.
std::vector<InterpolationPath> high_first_path(int64_t steps, int64_t levels);

/// Latent-DDIM codes decoded with fresh Gaussian noise maps. Returns
/// [count, C, H, W] (empty batch for count 0).
ImageTensor sample_unconditional(LatentDiffusion& latent, DiffusionAutoencoder& decoder, int64_t count,
                                 uint64_t seed);

std::string tensor_fingerprint(const torch::Tensor& t);

} // namespace hdae
