#include "hdae/config.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace hdae {

using nlohmann::json;

namespace {

constexpr std::pair<Variant, std::string_view> kVariantNames[] = {
    {Variant::DAE, "DAE"},       {Variant::DAE_WIDE, "DAE_WIDE"}, {Variant::DAE_U, "DAE_U"},
    {Variant::HDAE_E, "HDAE_E"}, {Variant::HDAE_U, "HDAE_U"},     {Variant::HDAE_UPLUS, "HDAE_UPLUS"},
};

void check_schema(const json& j) {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kConfigSchemaVersion) {
        throw std::invalid_argument("unsupported config schema_version " + j.at("schema_version").dump());
    }
}

// Keys a config object may carry are exactly the ones its serializer writes.
template <typename T>
void reject_unknown_keys(const json& j, const char* what) {
    if (!j.is_object()) {
        throw std::invalid_argument(std::string(what) + " config must be a JSON object");
    }
    const json known = T{};
    for (const auto& item : j.items()) {
        if (!known.contains(item.key())) {
            throw std::invalid_argument("unknown " + std::string(what) + " config key '" + item.key() + "'");
        }
    }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        j.at(key).get_to(out);
    }
}

} // namespace

std::string_view to_string(Variant v) {
    for (const auto& [var, name] : kVariantNames) {
        if (var == v) {
            return name;
        }
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    for (const auto& [var, n] : kVariantNames) {
        if (n == name) {
            return var;
        }
    }
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

std::vector<Variant> parse_variant_list(std::string_view text) {
    std::vector<Variant> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto item = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        if (!item.empty()) {
            out.push_back(parse_variant(item));
        }
        if (comma == std::string_view::npos) {
            break;
        }
        pos = comma + 1;
    }
    if (out.empty()) {
        throw std::invalid_argument("empty variant list");
    }
    return out;
}

bool is_hierarchical(Variant v) { return v == Variant::HDAE_E || v == Variant::HDAE_U || v == Variant::HDAE_UPLUS; }

bool uses_unet_encoder(Variant v) { return v == Variant::DAE_U || v == Variant::HDAE_U || v == Variant::HDAE_UPLUS; }

int64_t ModelConfig::code_levels() const {
    switch (variant) {
    case Variant::HDAE_E:
    case Variant::HDAE_U:
        return levels;
    case Variant::HDAE_UPLUS:
        return 2 * levels;
    default:
        return 1;
    }
}

int64_t ModelConfig::code_width() const { return variant == Variant::DAE_WIDE ? levels * code_dim : code_dim; }

void ModelConfig::validate() const {
    if (image_size < 4 || channels < 1 || base_width < 1 || code_dim < 1 || levels < 1 || num_res_blocks < 1) {
        throw std::invalid_argument("model config: sizes must be positive");
    }
    if (channel_mult.empty()) {
        throw std::invalid_argument("model config: channel_mult must not be empty");
    }
    const auto R = resolution_levels();
    if (image_size % (int64_t{1} << (R - 1)) != 0) {
        throw std::invalid_argument("model config: image size not divisible by 2^(levels-1)");
    }
    if (levels > R) {
        throw std::invalid_argument("model config: L exceeds the number of resolution levels");
    }
    if (variant == Variant::HDAE_UPLUS && 2 * levels > R) {
        throw std::invalid_argument("model config: HDAE_UPLUS needs 2L <= number of resolution levels");
    }
    for (auto m : channel_mult) {
        if (m < 1 || (base_width * m) % groups != 0) {
            throw std::invalid_argument("model config: group count must divide every channel width");
        }
    }
    for (auto a : attention_levels) {
        if (a < 0 || a >= R) {
            throw std::invalid_argument("model config: attention level out of range");
        }
    }
    if (diffusion.inference_steps < 1 || diffusion.inference_steps > diffusion.steps) {
        throw std::invalid_argument("model config: inference steps must be in [1, T]");
    }
}

void ShapesSpec::validate() const {
    if (canvas < 4 || count < 0 || supersample < 1 || shape_classes < 1 || shape_classes > 4) {
        throw std::invalid_argument("shapes spec: invalid canvas/count/classes");
    }
    auto check = [&](const char* name, double lo, double hi) {
        if (hi < lo) {
            throw std::invalid_argument(std::string("shapes spec: inverted range for ") + name);
        }
        if (hi == lo && std::find(constant.begin(), constant.end(), name) == constant.end()) {
            throw std::invalid_argument(std::string("shapes spec: degenerate range for ") + name +
                                        " must be flagged constant");
        }
    };
    check("hue", hue_min, hue_max);
    check("background", background_min, background_max);
    check("size", size_min, size_max);
    check("position", position_min, position_max);
    check("rotation", rotation_min, rotation_max);
    if (shape_classes == 1 && std::find(constant.begin(), constant.end(), "shape") == constant.end()) {
        throw std::invalid_argument("shapes spec: single shape class must be flagged constant");
    }
}

void TrainConfig::validate() const {
    if (batch_size < 1 || total_steps < 0 || checkpoint_every < 1 || log_every < 1 || validation_images < 0) {
        throw std::invalid_argument("train config: counts must be positive");
    }
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("train config: learning rate must be positive");
    }
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
        throw std::invalid_argument("train config: EMA decay must lie in [0, 1)");
    }
    if (data.kind == "shapes") {
        data.shapes.validate();
    } else if (data.kind != "folder") {
        throw std::invalid_argument("train config: dataset kind must be 'shapes' or 'folder'");
    }
}

void to_json(json& j, const DiffusionConfig& c) {
    j = json{{"steps", c.steps},
             {"beta_start", c.beta_start},
             {"beta_end", c.beta_end},
             {"inference_steps", c.inference_steps}};
}

void from_json(const json& j, DiffusionConfig& c) {
    reject_unknown_keys<DiffusionConfig>(j, "diffusion");
    read_opt(j, "steps", c.steps);
    read_opt(j, "beta_start", c.beta_start);
    read_opt(j, "beta_end", c.beta_end);
    read_opt(j, "inference_steps", c.inference_steps);
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"schema_version", kConfigSchemaVersion},
             {"image_size", c.image_size},
             {"channels", c.channels},
             {"base_width", c.base_width},
             {"channel_mult", c.channel_mult},
             {"num_res_blocks", c.num_res_blocks},
             {"levels", c.levels},
             {"code_dim", c.code_dim},
             {"attention_levels", c.attention_levels},
             {"groups", c.groups},
             {"variant", std::string(to_string(c.variant))},
             {"diffusion", c.diffusion}};
}

void from_json(const json& j, ModelConfig& c) {
    reject_unknown_keys<ModelConfig>(j, "model");
    check_schema(j);
    read_opt(j, "image_size", c.image_size);
    read_opt(j, "channels", c.channels);
    read_opt(j, "base_width", c.base_width);
    read_opt(j, "channel_mult", c.channel_mult);
    read_opt(j, "num_res_blocks", c.num_res_blocks);
    read_opt(j, "levels", c.levels);
    read_opt(j, "code_dim", c.code_dim);
    read_opt(j, "attention_levels", c.attention_levels);
    read_opt(j, "groups", c.groups);
    if (j.contains("variant")) {
        c.variant = parse_variant(j.at("variant").get<std::string>());
    }
    read_opt(j, "diffusion", c.diffusion);
}

void to_json(json& j, const ShapesSpec& c) {
    j = json{{"canvas", c.canvas},
             {"count", c.count},
             {"seed", c.seed},
             {"supersample", c.supersample},
             {"shape_classes", c.shape_classes},
             {"hue", {c.hue_min, c.hue_max}},
             {"background", {c.background_min, c.background_max}},
             {"size", {c.size_min, c.size_max}},
             {"position", {c.position_min, c.position_max}},
             {"rotation", {c.rotation_min, c.rotation_max}},
             {"constant", c.constant}};
}

void from_json(const json& j, ShapesSpec& c) {
    reject_unknown_keys<ShapesSpec>(j, "shapes");
    read_opt(j, "canvas", c.canvas);
    read_opt(j, "count", c.count);
    read_opt(j, "seed", c.seed);
    read_opt(j, "supersample", c.supersample);
    read_opt(j, "shape_classes", c.shape_classes);
    auto range = [&](const char* key, double& lo, double& hi) {
        if (j.contains(key)) {
            lo = j.at(key).at(0).get<double>();
            hi = j.at(key).at(1).get<double>();
        }
    };
    range("hue", c.hue_min, c.hue_max);
    range("background", c.background_min, c.background_max);
    range("size", c.size_min, c.size_max);
    range("position", c.position_min, c.position_max);
    range("rotation", c.rotation_min, c.rotation_max);
    read_opt(j, "constant", c.constant);
}

void to_json(json& j, const DatasetSpec& c) {
    j = json{{"kind", c.kind}, {"shapes", c.shapes}, {"folder", c.folder}};
}

void from_json(const json& j, DatasetSpec& c) {
    reject_unknown_keys<DatasetSpec>(j, "data");
    read_opt(j, "kind", c.kind);
    read_opt(j, "shapes", c.shapes);
    read_opt(j, "folder", c.folder);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"schema_version", kConfigSchemaVersion},
             {"data", c.data},
             {"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"adam_beta1", c.adam_beta1},
             {"adam_beta2", c.adam_beta2},
             {"grad_clip", c.grad_clip},
             {"total_steps", c.total_steps},
             {"ema_decay", c.ema_decay},
             {"checkpoint_every", c.checkpoint_every},
             {"log_every", c.log_every},
             {"validation_images", c.validation_images},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    reject_unknown_keys<TrainConfig>(j, "train");
    check_schema(j);
    read_opt(j, "data", c.data);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "learning_rate", c.learning_rate);
    read_opt(j, "adam_beta1", c.adam_beta1);
    read_opt(j, "adam_beta2", c.adam_beta2);
    read_opt(j, "grad_clip", c.grad_clip);
    read_opt(j, "total_steps", c.total_steps);
    read_opt(j, "ema_decay", c.ema_decay);
    read_opt(j, "checkpoint_every", c.checkpoint_every);
    read_opt(j, "log_every", c.log_every);
    read_opt(j, "validation_images", c.validation_images);
    read_opt(j, "seed", c.seed);
}

} // namespace hdae
