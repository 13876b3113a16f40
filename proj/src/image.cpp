#include "evpupil/image.hpp"

#include <fstream>
#include <string>

#include "evpupil/errors.hpp"

namespace evpupil {

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

namespace {

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw ParseError(1, "malformed PGM header");
  return value;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {};
  if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '5') throw ParseError(1, "not a P5 PGM file");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw ParseError(1, "unsupported PGM geometry or maxval");
  in.get();  // single whitespace before the raster
  GrayImage img(w, h);
  if (!in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()))) {
    throw ParseError(1, "truncated PGM raster");
  }
  return img;
}

}  // namespace evpupil
