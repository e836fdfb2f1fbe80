#include "lorax/image_io.hpp"

#include <cstdio>
#include <memory>

#include <png.h>

#include "lorax/errors.hpp"

namespace lorax {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path, int channels) {
    if (channels != 1 && channels != 3) throw ConfigError("only 1 or 3 image channels are supported");
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw DataError("cannot open image " + path.string());

    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_stdio(&img, file.get()) == 0) {
        throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<std::uint8_t> interleaved(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, interleaved.data(), 0, nullptr) == 0) {
        png_image_free(&img);
        throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height), channels);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < channels; ++c) {
                out.at(c, y, x) = interleaved[(static_cast<std::size_t>(y) * out.width + x) * channels + c];
            }
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ConfigError("only 1 or 3 image channels are supported");
    std::vector<std::uint8_t> interleaved(image.pixels.size());
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                interleaved[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] = image.at(c, y, x);
            }
        }
    }
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (png_image_write_to_file(&img, path.c_str(), 0, interleaved.data(), 0, nullptr) == 0) {
        throw DataError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

}  // namespace lorax
