#include "latentdir/image.hpp"

#include <fstream>
#include <sstream>

namespace latentdir::img {

std::string write_pgm(const Image& im) {
    if (im.width <= 0 || im.height <= 0)
        throw std::invalid_argument("write_pgm: empty image");
    if (im.pixels.size() != static_cast<size_t>(im.width) * static_cast<size_t>(im.height))
        throw std::invalid_argument("write_pgm: pixel buffer size disagrees with dimensions");
    std::string out = "P5\n" + std::to_string(im.width) + " " + std::to_string(im.height) +
                      "\n255\n";
    out.append(reinterpret_cast<const char*>(im.pixels.data()), im.pixels.size());
    return out;
}

Image read_pgm(const std::string& bytes) {
    std::istringstream is(bytes);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw std::invalid_argument("read_pgm: not a binary 8-bit PGM");
    is.get();  // single whitespace after maxval
    Image im;
    im.width = w;
    im.height = h;
    im.pixels.resize(static_cast<size_t>(w) * static_cast<size_t>(h));
    is.read(reinterpret_cast<char*>(im.pixels.data()), static_cast<std::streamsize>(im.pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(im.pixels.size()))
        throw std::invalid_argument("read_pgm: truncated pixel data");
    return im;
}

Image montage(const std::vector<std::vector<Image>>& grid) {
    if (grid.empty() || grid[0].empty())
        throw std::invalid_argument("montage: empty grid");
    const int cell_w = grid[0][0].width;
    const int cell_h = grid[0][0].height;
    const int rows = static_cast<int>(grid.size());
    const int cols = static_cast<int>(grid[0].size());
    for (const auto& row : grid) {
        if (static_cast<int>(row.size()) != cols)
            throw std::invalid_argument("montage: ragged grid");
        for (const Image& cell : row)
            if (cell.width != cell_w || cell.height != cell_h)
                throw std::invalid_argument("montage: cell dimensions disagree");
    }
    Image out;
    out.width = cols * cell_w;
    out.height = rows * cell_h;
    out.pixels.assign(static_cast<size_t>(out.width) * static_cast<size_t>(out.height), 0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            for (int y = 0; y < cell_h; ++y) {
                const auto* src = &grid[static_cast<size_t>(r)][static_cast<size_t>(c)]
                                       .pixels[static_cast<size_t>(y) * static_cast<size_t>(cell_w)];
                auto* dst = &out.pixels[(static_cast<size_t>(r) * cell_h + y) *
                                            static_cast<size_t>(out.width) +
                                        static_cast<size_t>(c) * cell_w];
                std::copy(src, src + cell_w, dst);
            }
    return out;
}

void save_pgm(const Image& im, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    std::string bytes = write_pgm(im);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("short write to '" + path + "'");
}

}  // namespace latentdir::img
