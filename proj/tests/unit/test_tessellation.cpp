#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "melreport/tessellation.hpp"

using namespace melreport;

namespace {

MaskPair full_masks(std::size_t h, std::size_t w, std::uint8_t tissue = 1)
{
    return {Mask(h, w, tissue), Mask(h, w, 0), 0.5};
}

// Pixel-count oracle for 224 px tiles (14×14 mask windows) at a 5 % threshold,
// written with integer arithmetic only.
std::set<std::pair<int, int>> oracle_grid(const MaskPair& m)
{
    std::set<std::pair<int, int>> kept;
    const int h = static_cast<int>(m.tissue.height), w = static_cast<int>(m.tissue.width);
    for (int row = 0; row * 14 < h; ++row)
        for (int col = 0; col * 14 < w; ++col) {
            int tissue = 0, area = 0, pen = 0;
            for (int r = row * 14; r < std::min(h, row * 14 + 14); ++r)
                for (int c = col * 14; c < std::min(w, col * 14 + 14); ++c) {
                    ++area;
                    tissue += m.tissue.at(r, c);
                    pen += m.pen.at(r, c);
                }
            if (pen == 0 && tissue * 20 >= area) kept.insert({col, row});
        }
    return kept;
}

}  // namespace

TEST_CASE("tile scale factor")
{
    CHECK(tile_scale_factor(0.5, 0.5) == 1.0);
    CHECK(std::abs(tile_scale_factor(0.23, 0.5) - 2.1739130434782608) <= 1e-6);
    CHECK_THROWS_AS(tile_scale_factor(0.0, 0.5), DomainError);
    CHECK_THROWS_AS(tile_scale_factor(-0.2, 0.5), DomainError);
}

TEST_CASE("full 28x28 mask gives four full tiles")
{
    const auto tiles = compute_tile_grid(full_masks(28, 28));
    REQUIRE(tiles.size() == 4);
    for (const auto& t : tiles) CHECK(t.coverage == 1.0);
}

TEST_CASE("a single pen pixel excludes its tile")
{
    MaskPair m = full_masks(28, 28);
    m.pen.set(5, 7);
    const auto tiles = compute_tile_grid(m);
    REQUIRE(tiles.size() == 3);
    for (const auto& t : tiles) CHECK_FALSE((t.col == 0 && t.row == 0));
}

TEST_CASE("coverage boundary: 10 of 196 kept, 9 of 196 dropped")
{
    MaskPair m = full_masks(14, 14, 0);
    CHECK(coverage_of(m, 0, 0) == 0.0);
    for (int i = 0; i < 9; ++i) m.tissue.set(static_cast<std::size_t>(i), static_cast<std::size_t>(i));
    CHECK(coverage_of(m, 0, 0) == doctest::Approx(9.0 / 196.0));
    CHECK(compute_tile_grid(m).empty());
    m.tissue.set(13, 0);
    CHECK(coverage_of(m, 0, 0) == doctest::Approx(10.0 / 196.0));
    CHECK(compute_tile_grid(m).size() == 1);
}

TEST_CASE("coverage exactly at the threshold is retained")
{
    MaskPair m = full_masks(14, 10, 0);  // clipped window area 140; 7/140 = 0.05
    for (std::size_t i = 0; i < 7; ++i) m.tissue.set(i, 0);
    CHECK(compute_tile_grid(m).size() == 1);
}

TEST_CASE("random masks match the pixel-count oracle; tiles never overlap; threshold is monotone")
{
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double density = u(rng) * 0.2, pen_density = u(rng) * 0.002;
        MaskPair m = full_masks(64, 64, 0);
        for (std::size_t r = 0; r < 64; ++r)
            for (std::size_t c = 0; c < 64; ++c) {
                m.tissue.set(r, c, u(rng) < density);
                m.pen.set(r, c, u(rng) < pen_density);
            }
        const auto tiles = compute_tile_grid(m);
        std::set<std::pair<int, int>> got;
        for (const auto& t : tiles) got.insert({t.col, t.row});
        CHECK(got.size() == tiles.size());
        CHECK(got == oracle_grid(m));
        CHECK(compute_tile_grid(m, kTilePx, 0.1).size() <= tiles.size());
    }
}

TEST_CASE("native resolution does not change the mask window")
{
    MaskPair a = full_masks(28, 28), b = full_masks(28, 28);
    b.native_mpp = 0.25;
    CHECK(compute_tile_grid(a).size() == compute_tile_grid(b).size());
}

TEST_CASE("empty and mismatched masks")
{
    CHECK(compute_tile_grid(MaskPair{Mask(), Mask(), 0.5}).empty());
    MaskPair bad{Mask(4, 4), Mask(5, 4), 0.5};
    CHECK_THROWS(compute_tile_grid(bad));
    CHECK_THROWS_AS(tile_window(full_masks(14, 14), 3, 0), DomainError);
}

TEST_CASE("PGM round trip and CSV")
{
    auto dir = testutil::temp_dir("pgm");
    Mask m(3, 5);
    m.set(1, 2);
    m.set(2, 4);
    write_pgm(dir / "m.pgm", m);
    const Mask back = read_pgm(dir / "m.pgm");
    CHECK(back.height == 3);
    CHECK(back.width == 5);
    CHECK(back.pixels == m.pixels);
    const std::string csv = tiles_to_csv("S1", {{0, 1, 0.5}});
    CHECK(csv.rfind("slide_id,col,row,coverage\n", 0) == 0);
    CHECK(csv.find("S1,0,1,0.5") != std::string::npos);
}
