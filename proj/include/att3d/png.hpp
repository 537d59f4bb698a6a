#pragma once

// Minimal 8-bit RGB PNG encoder on top of zlib.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "att3d/errors.hpp"
#include "att3d/image.hpp"

namespace att3d {

namespace detail {

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xff));
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline unsigned char to_byte(double v) {
  if (!std::isfinite(v)) v = 0;
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<unsigned char> encode_png(const Image& img) {
  if (img.width == 0 || img.height == 0) throw InputError("cannot encode an empty image");
  std::vector<unsigned char> raw;
  raw.reserve(img.height * (img.width * 3 + 1));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (std::size_t x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) raw.push_back(to_byte(img.at(x, y, c)));
    }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw FormatError("zlib compression failed");
  }
  z.resize(zlen);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolor
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", z);
  detail::put_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::string& path, const Image& img) {
  const std::vector<unsigned char> bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing " + path);
}

/// Images laid out left to right with no gaps.
inline Image horizontal_strip(const std::vector<Image>& frames) {
  if (frames.empty()) throw InputError("strip needs at least one frame");
  Image out(frames[0].width * frames.size(), frames[0].height);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    require_same_shape(frames[k], frames[0], "horizontal_strip");
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < frames[k].width; ++x) {
        for (int c = 0; c < 3; ++c) out.at(k * frames[0].width + x, y, c) = frames[k].at(x, y, c);
      }
    }
  }
  return out;
}

}  // namespace att3d
