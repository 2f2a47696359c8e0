#include "melreport/tessellation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "melreport/errors.hpp"

namespace melreport {

void MaskPair::validate() const
{
    if (tissue.height != pen.height || tissue.width != pen.width) {
        throw ShapeError("tessellation: tissue and pen masks differ in shape");
    }
    if (!(native_mpp > 0.0)) throw DomainError("tessellation: native_mpp must be positive");
}

double tile_scale_factor(double native_mpp, double target_mpp)
{
    if (!(native_mpp > 0.0) || !(target_mpp > 0.0)) throw DomainError("tile_scale_factor: resolutions must be positive");
    return target_mpp / native_mpp;
}

MaskWindow tile_window(const MaskPair& masks, std::int32_t col, std::int32_t row, std::size_t tile_px)
{
    if (tile_px == 0) throw DomainError("tessellation: tile_px must be positive");
    if (col < 0 || row < 0) throw DomainError("tessellation: negative tile index");
    // The 1.25× mask is a 16× downsample of the 20× grid the tiles live on.
    const double w = static_cast<double>(tile_px) / kMaskDownsample;
    auto lo = [w](std::int32_t i) { return static_cast<std::size_t>(std::floor(w * i)); };
    auto hi = [w](std::int32_t i) { return static_cast<std::size_t>(std::ceil(w * (i + 1))); };
    MaskWindow win{lo(row), hi(row), lo(col), hi(col)};
    if (win.row0 >= masks.tissue.height || win.col0 >= masks.tissue.width) {
        throw DomainError("tessellation: tile (" + std::to_string(col) + "," + std::to_string(row) +
                          ") lies outside the mask");
    }
    win.row1 = std::min(win.row1, masks.tissue.height);
    win.col1 = std::min(win.col1, masks.tissue.width);
    return win;
}

double coverage_of(const MaskPair& masks, std::int32_t col, std::int32_t row, std::size_t tile_px)
{
    masks.validate();
    const auto win = tile_window(masks, col, row, tile_px);
    std::size_t count = 0;
    for (std::size_t r = win.row0; r < win.row1; ++r)
        for (std::size_t c = win.col0; c < win.col1; ++c) count += masks.tissue.at(r, c) ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(win.area());
}

std::vector<TileCoord> compute_tile_grid(const MaskPair& masks, std::size_t tile_px, double coverage_min)
{
    masks.validate();
    if (tile_px == 0) throw DomainError("tessellation: tile_px must be positive");
    std::vector<TileCoord> out;
    if (masks.tissue.empty()) return out;
    const double w = static_cast<double>(tile_px) / kMaskDownsample;
    const auto n_rows = static_cast<std::int32_t>(std::ceil(static_cast<double>(masks.tissue.height) / w));
    const auto n_cols = static_cast<std::int32_t>(std::ceil(static_cast<double>(masks.tissue.width) / w));
    for (std::int32_t row = 0; row < n_rows; ++row) {
        for (std::int32_t col = 0; col < n_cols; ++col) {
            const auto win = tile_window(masks, col, row, tile_px);
            std::size_t tissue = 0;
            bool pen = false;
            for (std::size_t r = win.row0; r < win.row1 && !pen; ++r)
                for (std::size_t c = win.col0; c < win.col1; ++c) {
                    tissue += masks.tissue.at(r, c) ? 1 : 0;
                    if (masks.pen.at(r, c)) {
                        pen = true;
                        break;
                    }
                }
            if (pen) continue;
            const double coverage = static_cast<double>(tissue) / static_cast<double>(win.area());
            if (coverage >= coverage_min) out.push_back({col, row, coverage});
        }
    }
    return out;
}

Mask read_pgm(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open mask " + path.string());
    auto next_token = [&]() {
        std::string tok;
        char ch = 0;
        while (is.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(is, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!tok.empty()) break;
                continue;
            }
            tok += ch;
        }
        return tok;
    };
    if (next_token() != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_token());
        h = std::stoul(next_token());
        maxval = std::stoul(next_token());
    } catch (const std::exception&) {
        throw DataError(path.string() + ": malformed PGM header");
    }
    if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": only 8-bit PGM masks are supported");
    Mask m(h, w);
    is.read(reinterpret_cast<char*>(m.pixels.data()), static_cast<std::streamsize>(m.pixels.size()));
    if (static_cast<std::size_t>(is.gcount()) != m.pixels.size()) throw DataError(path.string() + ": truncated pixel data");
    for (auto& p : m.pixels) p = p ? 1 : 0;
    return m;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write mask " + path.string());
    os << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
    for (auto p : mask.pixels) os.put(static_cast<char>(p ? 255 : 0));
}

std::string tiles_to_csv(const std::string& slide_id, const std::vector<TileCoord>& tiles)
{
    std::ostringstream os;
    os << "slide_id,col,row,coverage\n";
    char buf[64];
    for (const auto& t : tiles) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.6f", t.col, t.row, t.coverage);
        os << slide_id << ',' << buf << '\n';
    }
    return os.str();
}

}  // namespace melreport
