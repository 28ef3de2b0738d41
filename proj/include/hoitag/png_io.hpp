#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoitag/scene.hpp"

namespace hoitag {

/// 8-bit RGB PNG. Pixels are rounded to the nearest k/255, which is exact for
/// generator output.
inline void write_png(const std::string& path, const SceneImage& img) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.size);
    image.height = static_cast<png_uint_32>(img.size);
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(img.pixels.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG " + path + ": " + image.message);
}

inline SceneImage read_png(const std::string& path, const std::string& image_id = {}) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw std::runtime_error("cannot read PNG " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    if (image.width != image.height) {
        png_image_free(&image);
        throw std::runtime_error("PNG " + path + " is not square");
    }
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
        throw std::runtime_error("cannot decode PNG " + path + ": " + image.message);
    SceneImage img;
    img.image_id = image_id;
    img.size = static_cast<int>(image.width);
    img.pixels.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / 255.0;
    return img;
}

}  // namespace hoitag
