#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pvgf/error.hpp"
#include "pvgf/tensor.hpp"
#include "pvgf/util.hpp"

namespace pvgf {

// Images are Tensors of shape [H, W, 3] with values in [0, 1].

inline Tensor make_image(int h, int w, double fill = 0.0) { return Tensor::filled({h, w, 3}, fill); }

inline double& px(Tensor& img, int y, int x, int c) {
  return img[(static_cast<long long>(y) * img.dim(1) + x) * 3 + c];
}

inline double px(const Tensor& img, int y, int x, int c) {
  return img[(static_cast<long long>(y) * img.dim(1) + x) * 3 + c];
}

inline void check_image(const Tensor& img, const char* op) {
  if (!img.defined() || img.ndim() != 3 || img.dim(2) != 3)
    throw ShapeError(std::string(op) + ": expected an [H,W,3] image, got " +
                     (img.defined() ? shape_str(img.shape()) : std::string("<empty>")));
}

inline Tensor clamp01(Tensor img) {
  for (long long i = 0; i < img.numel(); ++i) img[i] = std::min(1.0, std::max(0.0, img[i]));
  return img;
}

// ---------------------------------------------------------------------------
// PNG (8-bit RGB, no interlace)

namespace detail {

inline void png_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& payload) {
  png_be32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
  png_be32(out, static_cast<std::uint32_t>(crc));
}

inline int png_paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline void png_write(const std::string& path, const Tensor& img) {
  check_image(img, "png_write");
  const int h = img.dim(0), w = img.dim(1);

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(h) * (static_cast<std::size_t>(w) * 3 + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(1.0, std::max(0.0, px(img, y, x, c)));
        raw.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
  }

  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (::compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw DataError("png_write: deflate failed for " + path);
  compressed.resize(bound);

  std::vector<std::uint8_t> out;
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.insert(out.end(), sig, sig + 8);
  std::vector<std::uint8_t> ihdr;
  detail::png_be32(ihdr, static_cast<std::uint32_t>(w));
  detail::png_be32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", {});
  write_file_bytes(path, out);
}

inline Tensor png_read(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || !std::equal(sig, sig + 8, bytes.begin()))
    throw DataError("png_read: not a PNG file: " + path);

  std::uint32_t w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  auto be32 = [&bytes](std::size_t p) {
    return (static_cast<std::uint32_t>(bytes[p]) << 24) | (static_cast<std::uint32_t>(bytes[p + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[p + 2]) << 8) | static_cast<std::uint32_t>(bytes[p + 3]);
  };
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = be32(pos);
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    if (pos + 12 + len > bytes.size()) throw DataError("png_read: truncated chunk in " + path);
    const std::uint8_t* payload = bytes.data() + pos + 8;
    if (type == "IHDR") {
      w = be32(pos + 8);
      h = be32(pos + 12);
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0) throw DataError("png_read: interlaced PNG not supported: " + path);
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (w == 0 || h == 0) throw DataError("png_read: missing IHDR in " + path);
  if (bit_depth != 8 || (color_type != 2 && color_type != 6))
    throw DataError("png_read: only 8-bit RGB/RGBA supported: " + path);
  const int channels = color_type == 2 ? 3 : 4;

  const std::size_t stride = static_cast<std::size_t>(w) * channels;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (::uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw DataError("png_read: inflate failed for " + path);

  // undo per-scanline filters
  std::vector<std::uint8_t> pix(static_cast<std::size_t>(h) * stride);
  for (std::uint32_t y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1;
    std::uint8_t* dst = pix.data() + static_cast<std::size_t>(y) * stride;
    const std::uint8_t* up = y > 0 ? pix.data() + static_cast<std::size_t>(y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(channels) ? dst[i - channels] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(channels)) ? up[i - channels] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::png_paeth(a, b, c); break;
        default: throw DataError("png_read: unknown filter type in " + path);
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }

  Tensor img = make_image(static_cast<int>(h), static_cast<int>(w));
  for (std::uint32_t y = 0; y < h; ++y)
    for (std::uint32_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        px(img, static_cast<int>(y), static_cast<int>(x), c) =
            pix[static_cast<std::size_t>(y) * stride + static_cast<std::size_t>(x) * channels + c] / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// resampling

inline Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
  check_image(img, "resize_bilinear");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: non-positive output size");
  const int h = img.dim(0), w = img.dim(1);
  Tensor out = make_image(out_h, out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = px(img, y0, x0, c) * (1 - wx) + px(img, y0, x1, c) * wx;
        const double bot = px(img, y1, x0, c) * (1 - wx) + px(img, y1, x1, c) * wx;
        px(out, y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace pvgf
