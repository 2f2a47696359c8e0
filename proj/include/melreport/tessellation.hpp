#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace melreport {

// Binary grid, row-major, nonzero = foreground.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w, fill) {}
    [[nodiscard]] bool at(std::size_t r, std::size_t c) const { return pixels[r * width + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v = true) { pixels[r * width + c] = v ? 1 : 0; }
    [[nodiscard]] bool empty() const { return height == 0 || width == 0; }
};

// Tissue and pen-marking segmentations at 1.25× plus the native resolution
// of the scan they were computed from.
struct MaskPair {
    Mask tissue;
    Mask pen;
    double native_mpp = 0.50;

    void validate() const;
};

struct TileCoord {
    std::int32_t col = 0;
    std::int32_t row = 0;
    double coverage = 0.0;
    bool operator==(const TileCoord&) const = default;
};

inline constexpr double kTargetMpp = 0.50;        // 20×
inline constexpr std::size_t kTilePx = 224;
inline constexpr double kCoverageMin = 0.05;
inline constexpr double kMaskDownsample = 16.0;   // 20× → 1.25×

// Per-axis factor from native pixels to 20×-equivalent pixels.
double tile_scale_factor(double native_mpp, double target_mpp = kTargetMpp);

// Half-open mask window [row0,row1)×[col0,col1) of tile (col,row), clipped
// to the mask. Edges of non-integer windows are rounded outward.
struct MaskWindow {
    std::size_t row0 = 0, row1 = 0, col0 = 0, col1 = 0;
    [[nodiscard]] std::size_t area() const { return (row1 - row0) * (col1 - col0); }
};
MaskWindow tile_window(const MaskPair& masks, std::int32_t col, std::int32_t row, std::size_t tile_px = kTilePx);

// Tissue fraction of the clipped window, from an integer pixel count.
double coverage_of(const MaskPair& masks, std::int32_t col, std::int32_t row, std::size_t tile_px = kTilePx);

// Non-overlapping tile grid anchored at the mask origin. A tile is kept iff
// coverage >= coverage_min and its window holds no pen pixel. Sorted by
// (row, col).
std::vector<TileCoord> compute_tile_grid(const MaskPair& masks, std::size_t tile_px = kTilePx,
                                         double coverage_min = kCoverageMin);

// 8-bit binary PGM (P5); nonzero = foreground.
Mask read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Mask& mask);

std::string tiles_to_csv(const std::string& slide_id, const std::vector<TileCoord>& tiles);

}  // namespace melreport
