#pragma once

#include "hdae/code.hpp"
#include "hdae/config.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hdae {

enum class ShapeClass : int { Circle = 0, Square = 1, Triangle = 2, Cross = 3 };

/// Ground-truth generative factors of one synthetic image.
struct ShapeFactors {
    int shape = 0;         // ShapeClass index
    double hue = 0.0;      // [0, 1] -> hue angle 0..240 degrees
    double background = 0; // gray level in [0, 1]
    double size = 0.0;     // radius as a fraction of 0.4 * canvas
    double x = 0.0, y = 0.0;
    double rotation = 0.0; // [0, 1] -> 0..90 degrees
};

inline constexpr std::array<std::string_view, 7> kFactorNames{"shape", "hue",      "background", "size",
                                                              "x",     "y",        "rotation"};

double factor_value(const ShapeFactors& f, std::string_view name);

struct ShapesDataset {
    ImageTensor images; // [N, 3, canvas, canvas] in [-1, 1]
    std::vector<ShapeFactors> factors;
    int64_t size() const { return static_cast<int64_t>(factors.size()); }
};

/// Renders an independent-factor dataset; bit-identical for equal specs.
ShapesDataset generate_shapes(const ShapesSpec& spec);

/// Renders a single image for explicit factors (CHW).
ImageTensor render_shape(const ShapeFactors& f, int64_t canvas, int64_t supersample);

/// Foreground RGB for a hue factor (components in [0, 1]).
std::array<double, 3> hue_to_rgb(double hue);

/// Binary label per image: value > midpoint of the sampling range (the
/// median of the uniform factor distribution).
std::vector<int> binary_labels(const ShapesDataset& data, const ShapesSpec& spec, std::string_view factor);

/// Factor table with a header row, aligned by index.
void write_factor_csv(const std::filesystem::path& path, const ShapesDataset& data);

/// Deterministic 65:5 train/validation assignment by index hash.
bool is_validation_index(int64_t index);

struct SplitIndices {
    std::vector<int64_t> train, validation;
};
SplitIndices split_indices(int64_t count);

} // namespace hdae
