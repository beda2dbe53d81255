#include "hdae/shapes.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace hdae {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform double in [0, 1) from the top 53 bits; avoids implementation-
// defined distribution objects so the stream is portable.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

bool inside(int shape, double x, double y) {
    switch (static_cast<ShapeClass>(shape)) {
    case ShapeClass::Circle:
        return x * x + y * y <= 1.0;
    case ShapeClass::Square:
        return std::abs(x) <= 0.8 && std::abs(y) <= 0.8;
    case ShapeClass::Triangle: {
        // Equilateral triangle inscribed in the unit circle, apex up.
        const double s3 = std::sqrt(3.0);
        return y >= -0.5 && (s3 * x + y) <= 1.0 && (-s3 * x + y) <= 1.0;
    }
    case ShapeClass::Cross:
        return (std::abs(x) <= 0.33 && std::abs(y) <= 0.95) || (std::abs(y) <= 0.33 && std::abs(x) <= 0.95);
    }
    return false;
}

} // namespace

double factor_value(const ShapeFactors& f, std::string_view name) {
    if (name == "shape") return f.shape;
    if (name == "hue") return f.hue;
    if (name == "background") return f.background;
    if (name == "size") return f.size;
    if (name == "x") return f.x;
    if (name == "y") return f.y;
    if (name == "rotation") return f.rotation;
    throw std::invalid_argument("unknown factor '" + std::string(name) + "'");
}

std::array<double, 3> hue_to_rgb(double hue) {
    constexpr double kSat = 0.85, kVal = 0.95;
    const double h = std::clamp(hue, 0.0, 1.0) * 240.0 / 60.0;
    const double c = kVal * kSat;
    const double xx = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    const double m = kVal - c;
    std::array<double, 3> rgb{};
    if (h < 1) rgb = {c, xx, 0};
    else if (h < 2) rgb = {xx, c, 0};
    else if (h < 3) rgb = {0, c, xx};
    else rgb = {0, xx, c};
    for (auto& v : rgb) v += m;
    return rgb;
}

ImageTensor render_shape(const ShapeFactors& f, int64_t canvas, int64_t supersample) {
    const auto fg = hue_to_rgb(f.hue);
    const double radius = f.size * 0.4 * static_cast<double>(canvas);
    const double cx = f.x * static_cast<double>(canvas), cy = f.y * static_cast<double>(canvas);
    const double angle = f.rotation * std::numbers::pi / 2.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double inv_ss = 1.0 / static_cast<double>(supersample);
    const double norm = inv_ss * inv_ss;

    auto img = torch::empty({3, canvas, canvas}, torch::kFloat32);
    auto acc = img.accessor<float, 3>();
    for (int64_t py = 0; py < canvas; ++py) {
        for (int64_t px = 0; px < canvas; ++px) {
            int hits = 0;
            for (int64_t sy = 0; sy < supersample; ++sy) {
                for (int64_t sx = 0; sx < supersample; ++sx) {
                    const double dx = (static_cast<double>(px) + (static_cast<double>(sx) + 0.5) * inv_ss - cx) / radius;
                    const double dy = (static_cast<double>(py) + (static_cast<double>(sy) + 0.5) * inv_ss - cy) / radius;
                    // rotate into the shape frame; image y points down, flip for "apex up"
                    const double lx = ca * dx + sa * dy;
                    const double ly = -(-sa * dx + ca * dy);
                    hits += inside(f.shape, lx, ly) ? 1 : 0;
                }
            }
            const double cover = hits * norm;
            for (int c = 0; c < 3; ++c) {
                const double v = cover * fg[static_cast<size_t>(c)] + (1.0 - cover) * f.background;
                acc[c][py][px] = static_cast<float>(2.0 * v - 1.0);
            }
        }
    }
    return img;
}

ShapesDataset generate_shapes(const ShapesSpec& spec) {
    spec.validate();
    ShapesDataset out;
    out.factors.resize(static_cast<size_t>(spec.count));
    out.images = torch::empty({spec.count, 3, spec.canvas, spec.canvas}, torch::kFloat32);
    for (int64_t i = 0; i < spec.count; ++i) {
        std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(static_cast<uint64_t>(i))));
        ShapeFactors f;
        f.shape = static_cast<int>(rng() % static_cast<uint64_t>(spec.shape_classes));
        f.hue = uniform(rng, spec.hue_min, spec.hue_max);
        f.background = uniform(rng, spec.background_min, spec.background_max);
        f.size = uniform(rng, spec.size_min, spec.size_max);
        f.x = uniform(rng, spec.position_min, spec.position_max);
        f.y = uniform(rng, spec.position_min, spec.position_max);
        f.rotation = uniform(rng, spec.rotation_min, spec.rotation_max);
        out.factors[static_cast<size_t>(i)] = f;
        out.images[i].copy_(render_shape(f, spec.canvas, spec.supersample));
    }
    return out;
}

std::vector<int> binary_labels(const ShapesDataset& data, const ShapesSpec& spec, std::string_view factor) {
    double lo = 0, hi = 0;
    if (factor == "shape") { lo = 0; hi = static_cast<double>(spec.shape_classes - 1); }
    else if (factor == "hue") { lo = spec.hue_min; hi = spec.hue_max; }
    else if (factor == "background") { lo = spec.background_min; hi = spec.background_max; }
    else if (factor == "size") { lo = spec.size_min; hi = spec.size_max; }
    else if (factor == "x" || factor == "y") { lo = spec.position_min; hi = spec.position_max; }
    else if (factor == "rotation") { lo = spec.rotation_min; hi = spec.rotation_max; }
    else throw std::invalid_argument("unknown factor '" + std::string(factor) + "'");
    const double mid = 0.5 * (lo + hi);
    std::vector<int> labels;
    labels.reserve(data.factors.size());
    for (const auto& f : data.factors) {
        labels.push_back(factor_value(f, factor) > mid ? 1 : 0);
    }
    return labels;
}

void write_factor_csv(const std::filesystem::path& path, const ShapesDataset& data) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "index";
    for (auto n : kFactorNames) out << ',' << n;
    out << '\n';
    out.precision(17);
    for (size_t i = 0; i < data.factors.size(); ++i) {
        const auto& f = data.factors[i];
        out << i << ',' << f.shape << ',' << f.hue << ',' << f.background << ',' << f.size << ',' << f.x << ','
            << f.y << ',' << f.rotation << '\n';
    }
}

bool is_validation_index(int64_t index) { return splitmix64(static_cast<uint64_t>(index) ^ 0x5eedULL) % 70 < 5; }

SplitIndices split_indices(int64_t count) {
    SplitIndices s;
    for (int64_t i = 0; i < count; ++i) {
        (is_validation_index(i) ? s.validation : s.train).push_back(i);
    }
    return s;
}

} // namespace hdae
