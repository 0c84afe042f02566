#include "follipipe/image.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace follipipe {
namespace {

struct PnmHeader {
  std::size_t width = 0, height = 0;
};

std::size_t read_header_number(std::istream& in, const std::filesystem::path& path) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  long long v = -1;
  if (!(in >> v) || v <= 0) throw std::runtime_error(path.string() + ": malformed PNM header");
  return static_cast<std::size_t>(v);
}

PnmHeader read_header(std::istream& in, const char* magic, const std::filesystem::path& path) {
  char m[2] = {};
  in.read(m, 2);
  if (!in || m[0] != magic[0] || m[1] != magic[1])
    throw std::runtime_error(path.string() + ": expected " + std::string(magic, 2) + " image");
  PnmHeader h;
  h.width = read_header_number(in, path);
  h.height = read_header_number(in, path);
  if (read_header_number(in, path) != 255)
    throw std::runtime_error(path.string() + ": only maxval 255 is supported");
  in.get();  // single whitespace before raster
  return h;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

RgbImage read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_header(in, "P6", path);
  RgbImage img(h.width, h.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * 3));
  if (!in) throw std::runtime_error(path.string() + ": truncated raster");
  return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  auto out = open_out(path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size() * 3));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_header(in, "P5", path);
  GrayImage img(h.width, h.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated raster");
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  auto out = open_out(path);
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

GrayImage read_mask(const std::filesystem::path& path) {
  GrayImage m = read_pgm(path);
  for (auto& v : m.pixels) v = v ? 1 : 0;
  return m;
}

void write_mask(const std::filesystem::path& path, const GrayImage& mask) {
  GrayImage scaled = mask;
  for (auto& v : scaled.pixels) v = v ? 255 : 0;
  write_pgm(path, scaled);
}

}  // namespace follipipe
