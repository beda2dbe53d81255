#include "hdae/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hdae {

namespace fs = std::filesystem;

namespace {

ImageTensor from_mat(const cv::Mat& decoded, int64_t size) {
    cv::Mat rgb;
    if (decoded.channels() == 1) {
        cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB);
    } else if (decoded.channels() == 4) {
        cv::cvtColor(decoded, rgb, cv::COLOR_BGRA2RGB);
    } else {
        cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB);
    }
    const int side = std::min(rgb.rows, rgb.cols);
    cv::Mat cropped = rgb(cv::Rect((rgb.cols - side) / 2, (rgb.rows - side) / 2, side, side));
    cv::Mat resized;
    const auto s = static_cast<int>(size);
    if (side == s) {
        resized = cropped.clone();
    } else {
        cv::resize(cropped, resized, cv::Size(s, s), 0, 0, side > s ? cv::INTER_AREA : cv::INTER_LINEAR);
    }
    cv::Mat f;
    resized.convertTo(f, CV_32FC3, 2.0 / 255.0, -1.0);
    return torch::from_blob(f.data, {s, s, 3}, torch::kFloat32).permute({2, 0, 1}).clone();
}

} // namespace

ImageTensor decode_image(const std::string& bytes, int64_t size) {
    if (bytes.empty()) {
        throw std::invalid_argument("empty image payload");
    }
    std::vector<uchar> buf(bytes.begin(), bytes.end());
    cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
    if (decoded.empty()) {
        throw std::invalid_argument("payload is not a decodable image");
    }
    if (decoded.depth() != CV_8U) {
        decoded.convertTo(decoded, CV_8U, decoded.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
    }
    return from_mat(decoded, size);
}

ImageTensor read_image(const fs::path& path, int64_t size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read image " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_image(ss.str(), size);
    } catch (const std::invalid_argument&) {
        throw std::runtime_error("unreadable image file: " + path.string());
    }
}

ImageTensor load_image_folder(const fs::path& dir, int64_t size) {
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) {
        throw std::runtime_error("no images found in " + dir.string());
    }
    std::sort(files.begin(), files.end());
    std::vector<torch::Tensor> images;
    images.reserve(files.size());
    for (const auto& f : files) {
        images.push_back(read_image(f, size));
    }
    return torch::stack(images);
}

std::string encode_png(const ImageTensor& image) {
    auto chw = image.dim() == 4 ? image.squeeze(0) : image;
    if (chw.dim() != 3 || (chw.size(0) != 3 && chw.size(0) != 1)) {
        throw std::invalid_argument("encode_png expects a CHW image with 1 or 3 channels");
    }
    auto u8 = ((chw.detach().to(torch::kFloat32).clamp(-1, 1) + 1.0) * 127.5)
                  .round()
                  .to(torch::kUInt8)
                  .permute({1, 2, 0})
                  .contiguous();
    const int h = static_cast<int>(u8.size(0)), w = static_cast<int>(u8.size(1));
    cv::Mat mat(h, w, chw.size(0) == 3 ? CV_8UC3 : CV_8UC1, u8.data_ptr<uint8_t>());
    cv::Mat out;
    if (chw.size(0) == 3) {
        cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
    } else {
        out = mat;
    }
    std::vector<uchar> buf;
    if (!cv::imencode(".png", out, buf)) {
        throw std::runtime_error("PNG encoding failed");
    }
    return {buf.begin(), buf.end()};
}

void write_png(const fs::path& path, const ImageTensor& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ImageTensor make_grid(const ImageTensor& batch, int64_t columns, int64_t padding) {
    const auto N = batch.size(0), C = batch.size(1), H = batch.size(2), W = batch.size(3);
    columns = std::max<int64_t>(1, std::min(columns, N));
    const auto rows = (N + columns - 1) / columns;
    auto grid = torch::full({C, rows * (H + padding) + padding, columns * (W + padding) + padding}, 1.0f);
    for (int64_t i = 0; i < N; ++i) {
        const auto r = i / columns, c = i % columns;
        grid.narrow(1, padding + r * (H + padding), H).narrow(2, padding + c * (W + padding), W).copy_(batch[i]);
    }
    return grid;
}

} // namespace hdae
