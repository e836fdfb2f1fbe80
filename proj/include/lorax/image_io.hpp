#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lorax {

/// 8-bit image stored planar: pixels[(c * height + y) * width + x].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

    std::uint8_t& at(int c, int y, int x) {
        return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::uint8_t at(int c, int y, int x) const {
        return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    bool operator==(const Image&) const = default;
};

/// Reads a PNG converted to `channels` (1 = grayscale, 3 = RGB).
/// Throws DataError on missing or undecodable files.
Image read_png(const std::filesystem::path& path, int channels);

void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace lorax
