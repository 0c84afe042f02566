#include <fstream>
#include <set>

#include "doctest.h"
#include "follipipe/image.hpp"
#include "follipipe/slide.hpp"
#include "support.hpp"

using namespace follipipe;

namespace {

RgbImage random_rgb(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  RgbImage img(w, h);
  for (auto& px : img.pixels)
    for (auto& c : px) c = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

GrayImage random_mask(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  GrayImage m(w, h);
  for (auto& v : m.pixels) v = static_cast<std::uint8_t>(rng() & 1);
  return m;
}

}  // namespace

TEST_CASE("tile grid counts and offsets") {
  CHECK(tile_grid(100, 100, 50).size() == 4);
  CHECK(tile_grid(99, 100, 50).size() == 2);
  const auto g = tile_grid(512, 384, 64);
  CHECK(g.size() == 48);
  for (const auto& c : g) {
    CHECK(c.x % 64 == 0);
    CHECK(c.y % 64 == 0);
    CHECK(c.x == c.col * 64);
    CHECK(c.y == c.row * 64);
  }
  CHECK(tile_grid(10, 10, 20).empty());
}

TEST_CASE("patch extraction") {
  std::mt19937_64 rng(1);
  const RgbImage slide = random_rgb(70, 50, rng);
  CHECK(extract_patch(slide, PatchCoord{0, 0, 0, 0, 50}).pixels.size() == 2500);
  const RgbImage square = random_rgb(32, 32, rng);
  CHECK(extract_patch(square, PatchCoord::at(0, 0, 32)) == square);
  for (int t = 0; t < 50; ++t) {
    const std::size_t x = uniform_index(rng, 50), y = uniform_index(rng, 30);
    const PatchCoord c{0, 0, x, y, 20};
    const RgbImage p = extract_patch(slide, c);
    const std::size_t i = uniform_index(rng, 20), j = uniform_index(rng, 20);
    CHECK(p.at(i, j) == slide.at(x + i, y + j));
  }
  CHECK_THROWS(extract_patch(slide, PatchCoord{0, 0, 60, 0, 20}));
}

TEST_CASE("extract then insert reconstructs the covered region") {
  std::mt19937_64 rng(2);
  const RgbImage slide = random_rgb(100, 70, rng);
  RgbImage rebuilt(100, 70);
  for (const auto& c : tile_grid(100, 70, 32)) insert_patch(rebuilt, c, extract_patch(slide, c));
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 96; ++x) CHECK(rebuilt.at(x, y) == slide.at(x, y));
}

TEST_CASE("stitch") {
  CHECK(stitch({}, 40, 30) == GrayImage(40, 30));

  std::vector<std::pair<PatchCoord, GrayImage>> ones;
  for (const auto& c : tile_grid(70, 50, 16)) ones.emplace_back(c, GrayImage(16, 16, 1));
  const GrayImage full = stitch(ones, 70, 50);
  for (std::size_t y = 0; y < 50; ++y)
    for (std::size_t x = 0; x < 70; ++x) CHECK(full.at(x, y) == ((x < 64 && y < 48) ? 1 : 0));

  std::mt19937_64 rng(3);
  const GrayImage mask = random_mask(70, 50, rng);
  std::vector<std::pair<PatchCoord, GrayImage>> tiles;
  for (const auto& c : tile_grid(70, 50, 16)) tiles.emplace_back(c, extract_patch(mask, c));
  const GrayImage back = stitch(tiles, 70, 50);
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 64; ++x) CHECK(back.at(x, y) == mask.at(x, y));

  CHECK_THROWS(stitch({{PatchCoord::at(0, 0, 16), GrayImage(16, 16)}, {PatchCoord{0, 0, 8, 0, 16}, GrayImage(16, 16)}}, 70, 50));
  CHECK_THROWS(stitch({{PatchCoord::at(3, 0, 16), GrayImage(16, 16)}}, 70, 50));
  CHECK_THROWS(stitch({{PatchCoord::at(0, 0, 16), GrayImage(8, 8)}}, 70, 50));
}

TEST_CASE("coverage and patch labels") {
  GrayImage mask(8, 4), colloid(8, 4);
  mask.at(0, 0) = 1;                                      // 1/16 in patch 0
  for (std::size_t x = 4; x < 6; ++x) colloid.at(x, 0) = 1;  // 2/16 in patch 1
  mask.at(4, 1) = 1;
  colloid.at(4, 1) = 1;  // follicle wins, not counted as colloid
  CHECK(coverage(mask, PatchCoord::at(0, 0, 4)) == 1.0 / 16.0);
  const auto labels = compute_patch_labels(mask, colloid, 4, 0.05, 0.1);
  REQUIRE(labels.size() == 2);
  CHECK(labels[0].label == PatchLabel::Follicular);
  CHECK(labels[1].label == PatchLabel::Follicular);
  const auto strict = compute_patch_labels(mask, colloid, 4, 0.1, 0.1);
  CHECK(strict[0].label == PatchLabel::NonInfo);
  CHECK(strict[1].label == PatchLabel::Colloid);
  CHECK(compute_patch_labels(mask, colloid, 4, 0.1, 0.2)[1].label == PatchLabel::NonInfo);
}

TEST_CASE("patch label text") {
  for (auto l : {PatchLabel::Follicular, PatchLabel::Colloid, PatchLabel::NonInfo})
    CHECK(parse_patch_label(to_string(l)) == l);
  CHECK_THROWS(parse_patch_label("Tumour"));
}

TEST_CASE("image files round trip") {
  const auto dir = testing::scratch_dir("image_io");
  std::mt19937_64 rng(4);
  const RgbImage img = random_rgb(13, 7, rng);
  write_ppm(dir / "a.ppm", img);
  CHECK(read_ppm(dir / "a.ppm") == img);
  const GrayImage m = random_mask(9, 5, rng);
  write_mask(dir / "m.pgm", m);
  CHECK(read_mask(dir / "m.pgm") == m);
  GrayImage g(3, 2);
  g.pixels = {0, 7, 255, 128, 1, 2};
  write_pgm(dir / "g.pgm", g);
  CHECK(read_pgm(dir / "g.pgm") == g);

  std::ofstream(dir / "c.pgm", std::ios::binary) << "P5\n# comment\n2 1\n255\n" << '\x01' << '\x00';
  CHECK(read_pgm(dir / "c.pgm").pixels == std::vector<std::uint8_t>{1, 0});
  std::ofstream(dir / "bad.ppm", std::ios::binary) << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS(read_ppm(dir / "bad.ppm"));
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  CHECK_THROWS(read_pgm(dir / "short.pgm"));
  CHECK_THROWS(read_ppm(dir / "missing.ppm"));
}

TEST_CASE("synthetic slides") {
  SynthParams p;
  SUBCASE("deterministic in the seed") {
    const LabeledSlide a = synth_slide(7, p), b = synth_slide(7, p), c = synth_slide(8, p);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    CHECK(a.patch_labels == b.patch_labels);
    CHECK_FALSE(a.image == c.image);
  }
  SUBCASE("no clusters means no follicles") {
    p.n_follicle_clusters = 0;
    const LabeledSlide s = synth_slide(3, p);
    for (auto v : s.mask.pixels) CHECK(v == 0);
    for (const auto& l : s.patch_labels) CHECK(l.label != PatchLabel::Follicular);
  }
  SUBCASE("follicular fraction over 20 seeds") {
    std::size_t follicular = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const LabeledSlide s = synth_slide(seed, p);
      std::size_t f = 0;
      for (const auto& l : s.patch_labels) f += l.label == PatchLabel::Follicular;
      CHECK(static_cast<double>(f) / static_cast<double>(s.patch_labels.size()) < 0.10);
      CHECK(f >= 1);
      follicular += f;
      total += s.patch_labels.size();
      // Labels agree with a recount from the masks.
      CHECK(compute_patch_labels(s.mask, s.colloid, p.patch_size, p.follicle_threshold, p.colloid_threshold) ==
            s.patch_labels);
    }
    const double frac = static_cast<double>(follicular) / static_cast<double>(total);
    CHECK(frac >= 0.03);
    CHECK(frac <= 0.10);
  }
  SUBCASE("infeasible requests are rejected") {
    p.n_follicle_clusters = 7;
    CHECK_THROWS_AS(synth_slide(1, p), std::invalid_argument);
    p = SynthParams{};
    p.patch_size = 600;
    CHECK_THROWS_AS(synth_slide(1, p), std::invalid_argument);
  }
}

TEST_CASE("patch label files") {
  const auto dir = testing::scratch_dir("labels");
  const LabeledSlide s = synth_slide(2, SynthParams{});
  write_patch_labels(dir / "l.csv", s.patch_labels);
  CHECK(read_patch_labels(dir / "l.csv", 64) == s.patch_labels);
  std::ofstream(dir / "bad.csv") << "row,col,label\n0,0,Unknown\n";
  CHECK_THROWS(read_patch_labels(dir / "bad.csv", 64));
}
