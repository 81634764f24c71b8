#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace geoprobe::png_io {

struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;  // 1 = gray, 3 = RGB
    std::vector<std::uint8_t> pixels;  // row-major H x W x C
};

// 8-bit grayscale or RGB only. Throws DataError on anything else.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace geoprobe::png_io
