#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stylecode {

// 8-bit interleaved RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* pixel(int x, int y) const {
        return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    bool operator==(const Image&) const = default;
};

// Binary NetPBM (P6, maxval 255).
std::vector<std::uint8_t> encode_ppm(const Image& image);
// Accepts comments and arbitrary whitespace in the header; maxval must be 255.
Image decode_ppm(std::span<const std::uint8_t> bytes);

void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

} // namespace stylecode
