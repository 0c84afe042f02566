#include "follipipe/slide.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "follipipe/rng.hpp"

namespace follipipe {

std::string_view to_string(PatchLabel label) {
  switch (label) {
    case PatchLabel::Follicular: return "Follicular";
    case PatchLabel::Colloid: return "Colloid";
    case PatchLabel::NonInfo: return "NonInfo";
  }
  return "?";
}

PatchLabel parse_patch_label(std::string_view text) {
  if (text == "Follicular") return PatchLabel::Follicular;
  if (text == "Colloid") return PatchLabel::Colloid;
  if (text == "NonInfo") return PatchLabel::NonInfo;
  throw std::invalid_argument("unknown patch label '" + std::string(text) + "'");
}

std::vector<PatchCoord> tile_grid(std::size_t width, std::size_t height, std::size_t patch_size) {
  if (patch_size == 0) throw std::invalid_argument("tile_grid: patch_size must be >= 1");
  std::vector<PatchCoord> coords;
  const std::size_t rows = height / patch_size, cols = width / patch_size;
  coords.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) coords.push_back(PatchCoord::at(r, c, patch_size));
  return coords;
}

namespace {

void check_inside(const PatchCoord& coord, std::size_t width, std::size_t height, const char* what) {
  if (coord.size == 0 || coord.x + coord.size > width || coord.y + coord.size > height)
    throw std::out_of_range(std::string(what) + ": patch at (" + std::to_string(coord.x) + "," +
                            std::to_string(coord.y) + ") size " + std::to_string(coord.size) +
                            " exceeds " + std::to_string(width) + "x" + std::to_string(height));
}

template <typename Image>
Image extract(const Image& slide, const PatchCoord& coord) {
  check_inside(coord, slide.width, slide.height, "extract_patch");
  Image patch(coord.size, coord.size);
  for (std::size_t j = 0; j < coord.size; ++j) {
    auto src = slide.pixels.begin() + static_cast<std::ptrdiff_t>((coord.y + j) * slide.width + coord.x);
    std::copy(src, src + static_cast<std::ptrdiff_t>(coord.size),
              patch.pixels.begin() + static_cast<std::ptrdiff_t>(j * coord.size));
  }
  return patch;
}

}  // namespace

RgbImage extract_patch(const RgbImage& slide, const PatchCoord& coord) { return extract(slide, coord); }
GrayImage extract_patch(const GrayImage& slide, const PatchCoord& coord) { return extract(slide, coord); }

void insert_patch(RgbImage& slide, const PatchCoord& coord, const RgbImage& patch) {
  check_inside(coord, slide.width, slide.height, "insert_patch");
  if (patch.width != coord.size || patch.height != coord.size)
    throw std::invalid_argument("insert_patch: patch size does not match coord");
  for (std::size_t j = 0; j < coord.size; ++j)
    std::copy_n(patch.pixels.begin() + static_cast<std::ptrdiff_t>(j * coord.size), coord.size,
                slide.pixels.begin() + static_cast<std::ptrdiff_t>((coord.y + j) * slide.width + coord.x));
}

GrayImage stitch(const std::vector<std::pair<PatchCoord, GrayImage>>& masks, std::size_t width,
                 std::size_t height) {
  GrayImage out(width, height);
  std::vector<std::uint8_t> covered(width * height, 0);
  for (const auto& [coord, mask] : masks) {
    check_inside(coord, width, height, "stitch");
    if (mask.width != coord.size || mask.height != coord.size)
      throw std::invalid_argument("stitch: mask size does not match patch size");
    for (std::size_t j = 0; j < coord.size; ++j) {
      for (std::size_t i = 0; i < coord.size; ++i) {
        const std::size_t idx = (coord.y + j) * width + coord.x + i;
        if (covered[idx])
          throw std::invalid_argument("stitch: patch (" + std::to_string(coord.row) + "," +
                                      std::to_string(coord.col) + ") overlaps an earlier patch");
        covered[idx] = 1;
        out.pixels[idx] = mask.at(i, j);
      }
    }
  }
  return out;
}

double coverage(const GrayImage& map, const PatchCoord& coord) {
  check_inside(coord, map.width, map.height, "coverage");
  std::size_t count = 0;
  for (std::size_t j = 0; j < coord.size; ++j)
    for (std::size_t i = 0; i < coord.size; ++i) count += map.at(coord.x + i, coord.y + j) ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(coord.size * coord.size);
}

std::vector<LabeledPatch> compute_patch_labels(const GrayImage& mask, const GrayImage& colloid,
                                               std::size_t patch_size, double follicle_threshold,
                                               double colloid_threshold) {
  if (mask.width != colloid.width || mask.height != colloid.height)
    throw std::invalid_argument("compute_patch_labels: mask and colloid map differ in size");
  std::vector<LabeledPatch> labels;
  for (const auto& coord : tile_grid(mask.width, mask.height, patch_size)) {
    std::size_t follicle = 0, colloid_only = 0;
    for (std::size_t j = 0; j < patch_size; ++j) {
      for (std::size_t i = 0; i < patch_size; ++i) {
        const bool f = mask.at(coord.x + i, coord.y + j) != 0;
        follicle += f;
        colloid_only += !f && colloid.at(coord.x + i, coord.y + j) != 0;
      }
    }
    const double area = static_cast<double>(patch_size * patch_size);
    PatchLabel label = PatchLabel::NonInfo;
    if (static_cast<double>(follicle) / area >= follicle_threshold)
      label = PatchLabel::Follicular;
    else if (static_cast<double>(colloid_only) / area >= colloid_threshold)
      label = PatchLabel::Colloid;
    labels.push_back({coord, label});
  }
  return labels;
}

namespace {

using Od = std::array<double, 3>;

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * cos_t + dy * sin_t;
    const double v = -dx * sin_t + dy * cos_t;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

void validate(const SynthParams& p) {
  if (p.patch_size == 0 || p.width < p.patch_size || p.height < p.patch_size)
    throw std::invalid_argument("synth_slide: slide " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                                " cannot hold a single " + std::to_string(p.patch_size) + "px patch");
  const auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!in_unit(p.follicular_fraction_target) || !in_unit(p.follicle_threshold) || !in_unit(p.colloid_threshold))
    throw std::invalid_argument("synth_slide: fractions and thresholds must lie in (0, 1]");
  if (p.label_margin < 1.0) throw std::invalid_argument("synth_slide: label_margin must be >= 1");
  if (p.noise_level < 0.0 || p.stain_jitter < 0.0 || p.stain_jitter >= 1.0)
    throw std::invalid_argument("synth_slide: noise_level must be >= 0 and stain_jitter in [0, 1)");
}

// Paints the ellipses into `mask`, recording newly set pixel indices.
void paint(const std::vector<Ellipse>& shapes, GrayImage& mask, std::vector<std::size_t>* added) {
  for (const auto& e : shapes) {
    const double r = std::max(e.a, e.b);
    const long x0 = std::max(0L, static_cast<long>(std::floor(e.cx - r)));
    const long x1 = std::min(static_cast<long>(mask.width) - 1, static_cast<long>(std::ceil(e.cx + r)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(e.cy - r)));
    const long y1 = std::min(static_cast<long>(mask.height) - 1, static_cast<long>(std::ceil(e.cy + r)));
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        if (!e.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
        auto& px = mask.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        if (!px) {
          px = 1;
          if (added) added->push_back(static_cast<std::size_t>(y) * mask.width + static_cast<std::size_t>(x));
        }
      }
    }
  }
}

Ellipse random_ellipse(std::mt19937_64& rng, double cx, double cy, double a_lo, double a_hi) {
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double a = uniform(rng, a_lo, a_hi);
  const double b = a * uniform(rng, 0.55, 1.0);
  return {cx, cy, a, b, std::cos(theta), std::sin(theta)};
}

// Fraction-of-patch follicle coverage per grid cell.
std::vector<double> grid_coverage(const GrayImage& mask, const std::vector<PatchCoord>& grid) {
  std::vector<double> cov;
  cov.reserve(grid.size());
  for (const auto& c : grid) cov.push_back(coverage(mask, c));
  return cov;
}

}  // namespace

LabeledSlide synth_slide(std::uint64_t seed, const SynthParams& p) {
  validate(p);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL);
  const auto grid = tile_grid(p.width, p.height, p.patch_size);
  const auto max_follicular = static_cast<std::size_t>(std::floor(p.follicular_fraction_target * static_cast<double>(grid.size())));
  if (p.n_follicle_clusters > max_follicular)
    throw std::invalid_argument("synth_slide: " + std::to_string(p.n_follicle_clusters) +
                                " follicle clusters cannot fit under follicular_fraction_target " +
                                std::to_string(p.follicular_fraction_target) + " of " +
                                std::to_string(grid.size()) + " patches");

  const double ps = static_cast<double>(p.patch_size);
  const double w = static_cast<double>(p.width), h = static_cast<double>(p.height);

  // Per-slide staining: intensity and slight hue variation of each stain.
  const auto jitter = [&](double base) { return base * (1.0 + p.stain_jitter * uniform(rng, -1.0, 1.0)); };
  const Od background_od{jitter(0.025), jitter(0.035), jitter(0.02)};
  const double colloid_scale = jitter(1.0);
  const Od colloid_od{0.12 * colloid_scale, jitter(0.34) * colloid_scale, 0.18 * colloid_scale};
  const double follicle_scale = jitter(1.0);
  const Od cytoplasm_od{jitter(0.32) * follicle_scale, 0.52 * follicle_scale, jitter(0.24) * follicle_scale};
  const Od nucleus_od{0.70 * follicle_scale, 0.95 * follicle_scale, 0.45 * follicle_scale};

  LabeledSlide slide;
  slide.mask = GrayImage(p.width, p.height);
  slide.colloid = GrayImage(p.width, p.height);

  for (std::size_t i = 0; i < p.n_colloid_blobs; ++i) {
    const double cx = uniform(rng, 0.0, w), cy = uniform(rng, 0.0, h);
    const double r0 = uniform(rng, 0.35, 0.7) * ps;
    std::vector<Ellipse> lobes;
    const std::size_t n_lobes = 4 + uniform_index(rng, 3);
    for (std::size_t k = 0; k < n_lobes; ++k) {
      const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double dist = uniform(rng, 0.0, 0.6 * r0);
      lobes.push_back(random_ellipse(rng, cx + dist * std::cos(ang), cy + dist * std::sin(ang), 0.5 * r0, r0));
    }
    paint(lobes, slide.colloid, nullptr);
  }

  std::vector<Ellipse> cells;
  const double cluster_radius = 0.28 * ps;
  for (std::size_t i = 0; i < p.n_follicle_clusters; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
      const double cx = uniform(rng, cluster_radius, w - cluster_radius);
      const double cy = uniform(rng, cluster_radius, h - cluster_radius);
      std::vector<Ellipse> cluster;
      const std::size_t n_cells = 5 + uniform_index(rng, 4);
      for (std::size_t k = 0; k < n_cells; ++k) {
        const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double dist = cluster_radius * std::sqrt(uniform01(rng));
        cluster.push_back(random_ellipse(rng, cx + dist * std::cos(ang), cy + dist * std::sin(ang), 0.08 * ps,
                                         0.14 * ps));
      }
      std::vector<std::size_t> added;
      paint(cluster, slide.mask, &added);
      const auto cov = grid_coverage(slide.mask, grid);
      std::size_t follicular = 0;
      bool sliver = false;
      for (double c : cov) {
        follicular += c >= p.follicle_threshold;
        sliver = sliver || (c > 0.0 && c < p.label_margin * p.follicle_threshold);
      }
      if (follicular <= max_follicular && !sliver) {
        placed = true;
        cells.insert(cells.end(), cluster.begin(), cluster.end());
      } else {
        for (auto idx : added) slide.mask.pixels[idx] = 0;
      }
    }
    if (!placed)
      throw std::invalid_argument("synth_slide: could not place follicle cluster " + std::to_string(i) +
                                  " within follicular_fraction_target");
  }

  // Colloid slivers below label_margin * T_c are trimmed from their patch.
  for (const auto& c : grid) {
    std::size_t colloid_only = 0;
    for (std::size_t y = c.y; y < c.y + c.size; ++y)
      for (std::size_t x = c.x; x < c.x + c.size; ++x) colloid_only += slide.colloid.at(x, y) && !slide.mask.at(x, y);
    const double cov = static_cast<double>(colloid_only) / (ps * ps);
    if (cov > 0.0 && cov < p.label_margin * p.colloid_threshold)
      for (std::size_t y = c.y; y < c.y + c.size; ++y)
        for (std::size_t x = c.x; x < c.x + c.size; ++x) slide.colloid.at(x, y) = 0;
  }

  // Nuclei: small dark discs inside each follicular cell.
  GrayImage nuclei(p.width, p.height);
  std::vector<Ellipse> nuclei_shapes;
  for (const auto& cell : cells) {
    const std::size_t n = 1 + uniform_index(rng, 3);
    for (std::size_t k = 0; k < n; ++k) {
      const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double dist = 0.45 * cell.b * std::sqrt(uniform01(rng));
      const double r = uniform(rng, 0.03, 0.05) * ps;
      nuclei_shapes.push_back({cell.cx + dist * std::cos(ang), cell.cy + dist * std::sin(ang), r, r, 1.0, 0.0});
    }
  }
  paint(nuclei_shapes, nuclei, nullptr);

  slide.image = RgbImage(p.width, p.height);
  // Low-frequency texture for colloid so it is not a flat fill.
  const double fx = uniform(rng, 0.05, 0.12), fy = uniform(rng, 0.05, 0.12), phase = uniform(rng, 0.0, 6.3);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      const std::size_t idx = y * p.width + x;
      Od od = background_od;
      if (slide.mask.pixels[idx]) {
        od = nuclei.pixels[idx] ? nucleus_od : cytoplasm_od;
      } else if (slide.colloid.pixels[idx]) {
        const double tex = 1.0 + 0.2 * std::sin(fx * static_cast<double>(x) + phase) * std::cos(fy * static_cast<double>(y));
        for (int c = 0; c < 3; ++c) od[c] = background_od[c] + colloid_od[c] * tex;
      }
      Rgb& px = slide.image.pixels[idx];
      for (int c = 0; c < 3; ++c) {
        const double v = 255.0 * std::pow(10.0, -od[c]) + p.noise_level * normal(rng);
        px[c] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }

  slide.patch_labels =
      compute_patch_labels(slide.mask, slide.colloid, p.patch_size, p.follicle_threshold, p.colloid_threshold);
  return slide;
}

void write_patch_labels(const std::filesystem::path& path, const std::vector<LabeledPatch>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "row,col,label\n";
  for (const auto& lp : labels) out << lp.coord.row << ',' << lp.coord.col << ',' << to_string(lp.label) << '\n';
}

std::vector<LabeledPatch> read_patch_labels(const std::filesystem::path& path, std::size_t patch_size) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<LabeledPatch> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line == "row,col,label")) continue;
    std::istringstream fields(line);
    std::string row, col, label;
    if (!std::getline(fields, row, ',') || !std::getline(fields, col, ',') || !std::getline(fields, label))
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected row,col,label");
    try {
      labels.push_back({PatchCoord::at(std::stoul(row), std::stoul(col), patch_size), parse_patch_label(label)});
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return labels;
}

}  // namespace follipipe
