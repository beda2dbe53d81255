#include "hdae/code.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hdae {

using nlohmann::json;

HierarchicalCode::HierarchicalCode(torch::Tensor levels) {
    if (levels.dim() == 2) {
        levels = levels.unsqueeze(0);
    }
    if (levels.dim() != 3 || levels.size(1) < 1 || levels.size(2) < 1) {
        throw std::invalid_argument("hierarchical code must be [L, d] or [B, L, d] with L, d >= 1");
    }
    levels_ = std::move(levels);
}

HierarchicalCode HierarchicalCode::from_levels(const std::vector<torch::Tensor>& levels) {
    if (levels.empty()) {
        throw std::invalid_argument("hierarchical code needs at least one level");
    }
    std::vector<torch::Tensor> parts;
    parts.reserve(levels.size());
    for (const auto& lv : levels) {
        if (lv.size(-1) != levels.front().size(-1)) {
            throw std::invalid_argument("all code levels must share one dimension");
        }
        parts.push_back(lv.dim() == 1 ? lv.unsqueeze(0) : lv);
    }
    return HierarchicalCode(torch::stack(parts, 1));
}

HierarchicalCode HierarchicalCode::from_flat(const torch::Tensor& flat, int64_t num_levels, int64_t dim) {
    auto f = flat.dim() == 1 ? flat.unsqueeze(0) : flat;
    if (f.dim() != 2 || f.size(1) != num_levels * dim) {
        throw std::invalid_argument("flat code length does not match L*d");
    }
    return HierarchicalCode(f.reshape({f.size(0), num_levels, dim}));
}

HierarchicalCode HierarchicalCode::cat(const std::vector<HierarchicalCode>& codes) {
    if (codes.empty()) {
        throw std::invalid_argument("cannot concatenate zero codes");
    }
    std::vector<torch::Tensor> parts;
    for (const auto& c : codes) {
        if (!c.same_shape(codes.front())) {
            throw std::invalid_argument("code shape mismatch in concatenation");
        }
        parts.push_back(c.tensor());
    }
    return HierarchicalCode(torch::cat(parts, 0));
}

torch::Tensor HierarchicalCode::level(int64_t l) const {
    if (l < 0 || l >= num_levels()) {
        throw std::out_of_range("code level out of range");
    }
    return levels_.select(1, l);
}

torch::Tensor HierarchicalCode::flat() const { return levels_.reshape({batch(), flat_size()}); }

HierarchicalCode HierarchicalCode::select(int64_t index) const {
    return HierarchicalCode(levels_.narrow(0, index, 1));
}

HierarchicalCode HierarchicalCode::slice(int64_t begin, int64_t end) const {
    return HierarchicalCode(levels_.narrow(0, begin, end - begin));
}

HierarchicalCode HierarchicalCode::to(torch::ScalarType dtype) const { return HierarchicalCode(levels_.to(dtype)); }

HierarchicalCode HierarchicalCode::clone() const { return HierarchicalCode(levels_.clone()); }

bool HierarchicalCode::same_shape(const HierarchicalCode& other) const {
    return num_levels() == other.num_levels() && dim() == other.dim();
}

std::string code_to_json(const HierarchicalCode& code, const std::string& model_hash) {
    auto lv = code.select(0).tensor().squeeze(0).to(torch::kFloat64).contiguous();
    json levels = json::array();
    for (int64_t l = 0; l < lv.size(0); ++l) {
        auto row = lv[l];
        const double* p = row.data_ptr<double>();
        levels.push_back(std::vector<double>(p, p + row.numel()));
    }
    json j{{"levels", levels}, {"d", code.dim()}, {"L", code.num_levels()}, {"model_hash", model_hash}};
    return j.dump();
}

HierarchicalCode code_from_json(const std::string& text, std::string* model_hash) {
    const auto j = json::parse(text);
    const auto L = j.at("L").get<int64_t>();
    const auto d = j.at("d").get<int64_t>();
    const auto& levels = j.at("levels");
    if (static_cast<int64_t>(levels.size()) != L) {
        throw std::invalid_argument("code JSON: level count disagrees with L");
    }
    std::vector<double> values;
    values.reserve(static_cast<size_t>(L * d));
    for (const auto& row : levels) {
        if (static_cast<int64_t>(row.size()) != d) {
            throw std::invalid_argument("code JSON: level width disagrees with d");
        }
        for (const auto& v : row) {
            values.push_back(v.get<double>());
        }
    }
    if (model_hash != nullptr) {
        *model_hash = j.value("model_hash", "");
    }
    return HierarchicalCode(torch::tensor(values, torch::kFloat64).reshape({L, d}).to(torch::kFloat32));
}

void save_noise_map(const std::filesystem::path& path, const StochasticCode& noise) {
    static_assert(std::endian::native == std::endian::little, "noise map container is little-endian");
    auto chw = noise.dim() == 4 ? noise.squeeze(0) : noise;
    if (chw.dim() != 3) {
        throw std::invalid_argument("noise map must be CHW or 1xCHW");
    }
    auto hwc = chw.permute({1, 2, 0}).to(torch::kFloat32).contiguous();
    json header{{"H", hwc.size(0)}, {"W", hwc.size(1)}, {"C", hwc.size(2)}, {"dtype", "float32"}};
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    const auto line = header.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.write(reinterpret_cast<const char*>(hwc.data_ptr<float>()),
              static_cast<std::streamsize>(hwc.numel() * sizeof(float)));
}

StochasticCode load_noise_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::string line;
    std::getline(in, line);
    const auto header = json::parse(line);
    if (header.at("dtype").get<std::string>() != "float32") {
        throw std::runtime_error("unsupported noise map dtype");
    }
    const auto H = header.at("H").get<int64_t>();
    const auto W = header.at("W").get<int64_t>();
    const auto C = header.at("C").get<int64_t>();
    auto hwc = torch::empty({H, W, C}, torch::kFloat32);
    in.read(reinterpret_cast<char*>(hwc.data_ptr<float>()), static_cast<std::streamsize>(hwc.numel() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(hwc.numel() * sizeof(float))) {
        throw std::runtime_error("truncated noise map " + path.string());
    }
    return hwc.permute({2, 0, 1}).contiguous();
}

} // namespace hdae
