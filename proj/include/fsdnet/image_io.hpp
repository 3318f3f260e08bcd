#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsdnet/box.hpp"
#include "fsdnet/tensor.hpp"

namespace fsd {

namespace detail {

inline int ppm_next_int(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value))
    throw std::runtime_error("ppm: malformed header in " + path);
  return value;
}

}  // namespace detail

// Binary P6, maxval 255; returns 1 x 3 x H x W in [0,1].
inline Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ppm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6')
    throw std::runtime_error("ppm: not a P6 file: " + path);
  const int w = detail::ppm_next_int(in, path);
  const int h = detail::ppm_next_int(in, path);
  const int maxval = detail::ppm_next_int(in, path);
  if (w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("ppm: unsupported header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error("ppm: truncated pixel data in " + path);
  Tensor img(Shape{1, 3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img.at(0, c, y, x) = raw[(y * w + x) * 3 + c] / 255.0;
  return img;
}

inline std::vector<unsigned char> ppm_bytes(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3)
    throw std::invalid_argument("ppm: image must be 1x3xHxW, got " + s.str());
  std::ostringstream header;
  header << "P6\n" << s.w << " " << s.h << "\n255\n";
  const std::string hs = header.str();
  std::vector<unsigned char> out(hs.begin(), hs.end());
  out.reserve(out.size() + static_cast<size_t>(s.h) * s.w * 3);
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(0, c, y, x), 0.0, 1.0);
        out.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  return out;
}

inline void write_ppm(const Tensor& image, const std::string& path) {
  const std::vector<unsigned char> bytes = ppm_bytes(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ppm: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

// 2px rectangle outline, used by the annotated detection dump.
inline void draw_box_outline(Tensor& image, const BBox& box, double r,
                             double g, double b) {
  const Shape s = image.shape();
  const auto px = [&](double v, int64_t limit) {
    return std::clamp<int64_t>(static_cast<int64_t>(v * limit), 0, limit - 1);
  };
  const int64_t x1 = px(box.cx - box.w / 2, s.w), x2 = px(box.cx + box.w / 2, s.w);
  const int64_t y1 = px(box.cy - box.h / 2, s.h), y2 = px(box.cy + box.h / 2, s.h);
  const double rgb[3] = {r, g, b};
  auto paint = [&](int64_t y, int64_t x) {
    for (int64_t c = 0; c < 3; ++c) image.at(0, c, y, x) = rgb[c];
  };
  for (int64_t t = 0; t < 2; ++t) {
    for (int64_t x = x1; x <= x2; ++x) {
      paint(std::min(y1 + t, s.h - 1), x);
      paint(std::max<int64_t>(y2 - t, 0), x);
    }
    for (int64_t y = y1; y <= y2; ++y) {
      paint(y, std::min(x1 + t, s.w - 1));
      paint(y, std::max<int64_t>(x2 - t, 0));
    }
  }
}

}  // namespace fsd
