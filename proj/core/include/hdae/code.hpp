#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hdae {

/// Pixel tensor in [-1, 1], laid out NCHW (or CHW for a single image).
using ImageTensor = torch::Tensor;

/// Image-shaped noise map produced by DDIM inversion.
using StochasticCode = torch::Tensor;

/// Semantic latent code: an ordered list of L per-level vectors of equal width.
///
/// Stored as a [B, L, d] tensor so a batch of codes travels as one value.
/// Level 0 is the highest-resolution (lowest-abstraction) level. Flat
/// variants are the L = 1 special case.
class HierarchicalCode {
public:
    HierarchicalCode() = default;
    /// Accepts [L, d] (single code) or [B, L, d].
    explicit HierarchicalCode(torch::Tensor levels);

    static HierarchicalCode from_levels(const std::vector<torch::Tensor>& levels);
    static HierarchicalCode from_flat(const torch::Tensor& flat, int64_t num_levels, int64_t dim);
    static HierarchicalCode cat(const std::vector<HierarchicalCode>& codes);

    bool defined() const { return levels_.defined(); }
    int64_t batch() const { return levels_.size(0); }
    int64_t num_levels() const { return levels_.size(1); }
    int64_t dim() const { return levels_.size(2); }
    int64_t flat_size() const { return num_levels() * dim(); }

    /// [B, d] slice for level l.
    torch::Tensor level(int64_t l) const;
    /// [B, L*d], level-major.
    torch::Tensor flat() const;
    const torch::Tensor& tensor() const { return levels_; }

    HierarchicalCode select(int64_t index) const;
    HierarchicalCode slice(int64_t begin, int64_t end) const;
    HierarchicalCode to(torch::ScalarType dtype) const;
    HierarchicalCode clone() const;

    bool same_shape(const HierarchicalCode& other) const;

private:
    torch::Tensor levels_;
};

/// JSON text for one code (batch element 0): {levels, d, L, model_hash}.
std::string code_to_json(const HierarchicalCode& code, const std::string& model_hash);
HierarchicalCode code_from_json(const std::string& text, std::string* model_hash = nullptr);

/// Raw float container for a single noise map: one JSON header line
/// {"H","W","C","dtype"} followed by float32 little-endian samples in HWC order.
void save_noise_map(const std::filesystem::path& path, const StochasticCode& noise);
StochasticCode load_noise_map(const std::filesystem::path& path);

} // namespace hdae
