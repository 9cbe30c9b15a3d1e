#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentdir::img {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    std::uint8_t at(int row, int col) const {
        return pixels[static_cast<size_t>(row) * static_cast<size_t>(width) +
                      static_cast<size_t>(col)];
    }
};

/// Binary PGM: "P5\n<w> <h>\n255\n" followed by row-major bytes.
std::string write_pgm(const Image& im);
Image read_pgm(const std::string& bytes);

/// Tile a rows x cols grid of equally sized images into one image.
Image montage(const std::vector<std::vector<Image>>& grid);

void save_pgm(const Image& im, const std::string& path);

}  // namespace latentdir::img
