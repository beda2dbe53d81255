#pragma once

#include "hdae/code.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hdae {

/// Decodes PNG/JPEG bytes, center-crops to a square, resizes to size x size
/// (area interpolation) and scales to [-1, 1]. Returns CHW RGB.
/// Throws std::invalid_argument if the bytes are not a decodable image.
ImageTensor decode_image(const std::string& bytes, int64_t size);
ImageTensor read_image(const std::filesystem::path& path, int64_t size);

/// Loads every image file in a directory (sorted by name) into [N, 3, size, size].
ImageTensor load_image_folder(const std::filesystem::path& dir, int64_t size);

/// Encodes a CHW (or 1xCHW) image in [-1, 1] as 8-bit RGB PNG bytes.
std::string encode_png(const ImageTensor& image);
void write_png(const std::filesystem::path& path, const ImageTensor& image);

/// Tiles a batch [N, C, H, W] into one row-major grid image.
ImageTensor make_grid(const ImageTensor& batch, int64_t columns, int64_t padding = 1);

} // namespace hdae
