#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace inst4d {

// RGB image, values in [0, 1], row-major, 3 channels interleaved.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w) : width(w), height(h), data(static_cast<size_t>(h) * w * 3, 0.0) {}

    double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }

    void clamp01();
};

// Per-pixel instance ids in [0, K-1]; 255 marks unlabeled/background.
struct LabelMap {
    static constexpr uint8_t kUnlabeled = 255;

    int width = 0;
    int height = 0;
    std::vector<uint8_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w)
        : width(w), height(h), labels(static_cast<size_t>(h) * w, kUnlabeled) {}

    uint8_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Binary PPM (P6, 8-bit), round-to-nearest quantization, clamped to [0,1].
void save_ppm(const Image& img, const std::filesystem::path& path);
Image load_ppm(const std::filesystem::path& path);

// Binary PGM (P5, 8-bit); 255 = unlabeled.
void save_pgm(const LabelMap& map, const std::filesystem::path& path);
LabelMap load_pgm(const std::filesystem::path& path);

// Quantize a channel value exactly as save_ppm would.
uint8_t quantize8(double v);

// Image with every channel quantized to the 8-bit grid (save/load round trip).
Image quantized(const Image& img);

}  // namespace inst4d
