#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hdae {

inline constexpr int kConfigSchemaVersion = 1;

/// Encoder/latent design. Flat variants emit one code; hierarchical ones
/// emit L (or 2L for HDAE_UPLUS).
enum class Variant { DAE, DAE_WIDE, DAE_U, HDAE_E, HDAE_U, HDAE_UPLUS };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);
std::vector<Variant> parse_variant_list(std::string_view comma_separated);

bool is_hierarchical(Variant v);
bool uses_unet_encoder(Variant v);

struct DiffusionConfig {
    int64_t steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int64_t inference_steps = 100;
};

struct ModelConfig {
    int64_t image_size = 32;
    int64_t channels = 3;
    int64_t base_width = 32;
    std::vector<int64_t> channel_mult{1, 2, 2, 2};
    int64_t num_res_blocks = 1;
    int64_t levels = 4;     // L
    int64_t code_dim = 128; // d
    std::vector<int64_t> attention_levels{2};
    int64_t groups = 8;
    Variant variant = Variant::HDAE_U;
    DiffusionConfig diffusion;

    int64_t resolution_levels() const { return static_cast<int64_t>(channel_mult.size()); }
    /// Number of code vectors the encoder emits: 1, L or 2L.
    int64_t code_levels() const;
    /// Width of each emitted code vector: d, or L*d for DAE_WIDE.
    int64_t code_width() const;
    int64_t flat_code_size() const { return code_levels() * code_width(); }

    /// Throws std::invalid_argument on an inconsistent configuration.
    void validate() const;
};

struct ShapesSpec {
    int64_t canvas = 32;
    int64_t count = 8000;
    uint64_t seed = 0;
    int64_t supersample = 4;
    // Factor ranges; a factor with min == max must be listed in `constant`.
    int64_t shape_classes = 4;
    double hue_min = 0.0, hue_max = 1.0;
    double background_min = 0.0, background_max = 1.0;
    double size_min = 0.35, size_max = 0.75;
    double position_min = 0.3, position_max = 0.7;
    double rotation_min = 0.0, rotation_max = 1.0;
    std::vector<std::string> constant;

    void validate() const;
};

struct DatasetSpec {
    std::string kind = "shapes"; // "shapes" or "folder"
    ShapesSpec shapes;
    std::string folder;
};

struct TrainConfig {
    DatasetSpec data;
    int64_t batch_size = 16;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double grad_clip = 1.0;
    int64_t total_steps = 20000;
    double ema_decay = 0.999;
    int64_t checkpoint_every = 5000;
    int64_t log_every = 100;
    int64_t validation_images = 64;
    uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const DiffusionConfig& c);
void from_json(const nlohmann::json& j, DiffusionConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const ShapesSpec& c);
void from_json(const nlohmann::json& j, ShapesSpec& c);
void to_json(nlohmann::json& j, const DatasetSpec& c);
void from_json(const nlohmann::json& j, DatasetSpec& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

} // namespace hdae
