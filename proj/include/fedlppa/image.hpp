#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fedlppa {

// Row-major single-channel raster. Used for class maps (Image8) and
// grayscale intensities in [0,1] (ImageF).
struct Image8 {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    Image8() = default;
    Image8(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}
    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    bool in(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
    size_t count(uint8_t val) const;
};

struct ImageF {
    int h = 0, w = 0;
    std::vector<float> v;

    ImageF() = default;
    ImageF(int h_, int w_, float fill = 0.0f) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}
    float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

// 8-bit binary P5 PGM (maxval 255)
void write_pgm8(const std::filesystem::path& path, const Image8& img);
Image8 read_pgm8(const std::filesystem::path& path);

// 16-bit P5 PGM; float values clamped to [0,1] and scaled to 65535
void write_pgm16(const std::filesystem::path& path, const ImageF& img);
ImageF read_pgm16(const std::filesystem::path& path);

}  // namespace fedlppa
