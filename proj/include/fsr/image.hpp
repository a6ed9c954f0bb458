#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fsr/error.hpp"

namespace fsr {

enum class SourceDepth { U8, U16, F32 };

inline const char* depth_name(SourceDepth d) {
    switch (d) {
        case SourceDepth::U8: return "u8";
        case SourceDepth::U16: return "u16";
        case SourceDepth::F32: return "f32";
    }
    return "?";
}

// Calibrated grayscale plane.  Values are 64-bit reals in row-major order;
// pixel_pitch_nm carries the physical calibration used by FWHM conversion.
struct Image2D {
    int width = 0;
    int height = 0;
    double pixel_pitch_nm = 250.0;
    SourceDepth source_depth = SourceDepth::F32;
    std::vector<double> values;

    Image2D() = default;
    Image2D(int w, int h, double pitch_nm = 250.0,
            SourceDepth depth = SourceDepth::F32)
        : width(w), height(h), pixel_pitch_nm(pitch_nm), source_depth(depth) {
        if (w <= 0 || h <= 0)
            throw Error(Error::Kind::Size, "image dimensions must be positive");
        if (pitch_nm <= 0)
            throw Error(Error::Kind::Param, "pixel pitch must be positive");
        values.assign(static_cast<size_t>(w) * h, 0.0);
    }

    double& at(int y, int x) {
        return values[static_cast<size_t>(y) * width + x];
    }
    double at(int y, int x) const {
        return values[static_cast<size_t>(y) * width + x];
    }
    double& operator()(int y, int x) { return at(y, x); }
    double operator()(int y, int x) const { return at(y, x); }

    size_t size() const { return values.size(); }

    double max_value() const {
        double m = 0.0;
        bool first = true;
        for (double v : values) {
            if (first || v > m) { m = v; first = false; }
        }
        return m;
    }
};

inline double round_half_away_from_zero(double v) {
    return v < 0.0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5);
}

// Maps 16-bit values onto the 8-bit range with a full-range linear ramp:
// round_half_away_from_zero(v * 255 / 65535).  Monotone; 0 -> 0, 65535 -> 255.
inline Image2D convert_16_to_8(const Image2D& img) {
    if (img.source_depth != SourceDepth::U16)
        throw Error(Error::Kind::Depth, "convert_16_to_8 requires a 16-bit source image");
    Image2D out(img.width, img.height, img.pixel_pitch_nm, SourceDepth::U8);
    for (size_t i = 0; i < img.values.size(); ++i) {
        double v = img.values[i];
        if (v < 0.0 || v > 65535.0)
            throw Error(Error::Kind::Range, "16-bit image value outside [0, 65535]");
        out.values[i] = round_half_away_from_zero(v * 255.0 / 65535.0);
    }
    return out;
}

// Divides by the maximum so the range becomes [0, 1].  An all-zero image is
// returned unchanged; *was_zero reports that degenerate case when provided.
inline Image2D normalize_unit(const Image2D& img, bool* was_zero = nullptr) {
    Image2D out = img;
    double m = img.max_value();
    if (m <= 0.0) {
        if (was_zero) *was_zero = true;
        return out;
    }
    if (was_zero) *was_zero = false;
    for (double& v : out.values) v /= m;
    return out;
}

struct TileGrid {
    int tile_size = 0;
    int rows = 0;
    int cols = 0;  // tiles are laid out row-major
};

// Half-sample reflection: index -1 maps to 0, n maps to n-1.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// Splits into tile_size squares, reflect-padding right/bottom when the
// dimensions do not divide evenly.  Tiles are emitted row-major.
inline std::vector<Image2D> split_tiles(const Image2D& img, int tile_size,
                                        TileGrid* grid_out = nullptr) {
    if (tile_size < 8)
        throw Error(Error::Kind::Param, "tile size must be at least 8");
    int rows = (img.height + tile_size - 1) / tile_size;
    int cols = (img.width + tile_size - 1) / tile_size;
    int pad_h = rows * tile_size - img.height;
    int pad_w = cols * tile_size - img.width;
    if (pad_h > img.height || pad_w > img.width)
        throw Error(Error::Kind::Size,
                    "tile size too large: reflection cannot pad beyond the image size");
    std::vector<Image2D> tiles;
    tiles.reserve(static_cast<size_t>(rows) * cols);
    for (int ty = 0; ty < rows; ++ty) {
        for (int tx = 0; tx < cols; ++tx) {
            Image2D tile(tile_size, tile_size, img.pixel_pitch_nm, img.source_depth);
            for (int y = 0; y < tile_size; ++y) {
                int sy = reflect_index(ty * tile_size + y, img.height);
                for (int x = 0; x < tile_size; ++x) {
                    int sx = reflect_index(tx * tile_size + x, img.width);
                    tile.at(y, x) = img.at(sy, sx);
                }
            }
            tiles.push_back(std::move(tile));
        }
    }
    if (grid_out) *grid_out = TileGrid{tile_size, rows, cols};
    return tiles;
}

// Places tiles row-major and crops to (target_w, target_h); exact inverse of
// split_tiles on the unpadded region.
inline Image2D assemble_tiles(const std::vector<Image2D>& tiles, const TileGrid& grid,
                              int target_w, int target_h) {
    if (static_cast<int>(tiles.size()) != grid.rows * grid.cols)
        throw Error(Error::Kind::Grid, "tile count does not match grid dimensions");
    if (grid.rows <= 0 || grid.cols <= 0 || grid.tile_size <= 0)
        throw Error(Error::Kind::Grid, "invalid tile grid");
    if (target_w <= 0 || target_h <= 0 ||
        target_w > grid.cols * grid.tile_size || target_h > grid.rows * grid.tile_size)
        throw Error(Error::Kind::Size, "assembly target does not fit the grid");
    for (const Image2D& t : tiles) {
        if (t.width != grid.tile_size || t.height != grid.tile_size)
            throw Error(Error::Kind::Grid, "tile dimensions do not match the grid tile size");
    }
    Image2D out(target_w, target_h, tiles[0].pixel_pitch_nm, tiles[0].source_depth);
    for (int ty = 0; ty < grid.rows; ++ty) {
        for (int tx = 0; tx < grid.cols; ++tx) {
            const Image2D& tile = tiles[static_cast<size_t>(ty) * grid.cols + tx];
            for (int y = 0; y < grid.tile_size; ++y) {
                int oy = ty * grid.tile_size + y;
                if (oy >= target_h) break;
                for (int x = 0; x < grid.tile_size; ++x) {
                    int ox = tx * grid.tile_size + x;
                    if (ox >= target_w) break;
                    out.at(oy, ox) = tile.at(y, x);
                }
            }
        }
    }
    return out;
}

}  // namespace fsr
