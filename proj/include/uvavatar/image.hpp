#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uvavatar/error.hpp"
#include "uvavatar/math.hpp"
#include "uvavatar/tensor_file.hpp"

namespace uvavatar {

/// Interleaved float64 image, row-major, values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 3, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// mask * image + (1 - mask) * background.
inline Image composite_over(const Image& image, const Image& mask, const Vec3& background) {
  if (image.width != mask.width || image.height != mask.height || mask.channels != 1 || image.channels != 3)
    throw ConfigError("composite_over: image/mask shape mismatch");
  Image out(image.width, image.height, 3);
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    const double m = mask.data[p];
    for (int c = 0; c < 3; ++c)
      out.data[p * 3 + static_cast<std::size_t>(c)] = m * image.data[p * 3 + static_cast<std::size_t>(c)] + (1.0 - m) * background[c];
  }
  return out;
}

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// 8-bit quantized pixels (what a PNG of this image stores).
inline std::vector<std::uint8_t> quantize(const Image& img) {
  std::vector<std::uint8_t> out(img.data.size());
  std::transform(img.data.begin(), img.data.end(), out.begin(), to_u8);
  return out;
}

namespace detail {

struct PngWriteBuffer {
  std::vector<std::uint8_t> bytes;
};

inline void png_write_to_buffer(png_structp png, png_bytep data, png_size_t length) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->bytes.insert(buf->bytes.end(), data, data + length);
}
inline void png_flush_noop(png_structp) {}

struct PngReadBuffer {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

inline void png_read_from_buffer(png_structp png, png_bytep out, png_size_t length) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (length > buf->bytes.size() - buf->pos) png_error(png, "png data truncated");
  std::memcpy(out, buf->bytes.data() + buf->pos, length);
  buf->pos += length;
}

inline void png_error_throw(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
inline void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace detail

/// 8-bit PNG (gray or RGB, by channel count).
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("encode_png: need 1 or 3 channels");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_throw,
                                            detail::png_warning_ignore);
  if (!png) throw IoError("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  detail::PngWriteBuffer buffer;
  const auto pixels = quantize(img);
  try {
    png_set_write_fn(png, &buffer, detail::png_write_to_buffer, detail::png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels);
    for (int y = 0; y < img.height; ++y)
      png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * stride));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return std::move(buffer.bytes);
}

/// Decodes any 8/16-bit PNG to RGB (channels = 3) or, with want_gray, to a
/// single channel. Values scaled to [0,1].
inline Image decode_png(std::span<const std::uint8_t> bytes, bool want_gray = false) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_throw,
                                           detail::png_warning_ignore);
  if (!png) throw IoError("png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  detail::PngReadBuffer buffer{bytes, 0};
  Image img;
  try {
    png_set_read_fn(png, &buffer, detail::png_read_from_buffer);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    const auto color = png_get_color_type(png, info);
    const bool gray = !(color & PNG_COLOR_MASK_COLOR) && color != PNG_COLOR_TYPE_PALETTE;
    if (want_gray && !gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (!want_gray && gray) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = png_get_channels(png, info);
    std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
    img = Image(w, h, ch);
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w * ch; ++x)
        img.data[static_cast<std::size_t>(y) * static_cast<std::size_t>(w * ch) + static_cast<std::size_t>(x)] =
            row[static_cast<std::size_t>(x)] / 255.0;
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_png(img)); }
inline Image read_png(const std::filesystem::path& path, bool want_gray = false) {
  return decode_png(read_file_bytes(path), want_gray);
}

/// Portable float map, little-endian (scale -1), rows bottom to top.
inline void write_pfm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("write_pfm: need 1 or 3 channels");
  const std::string header = std::string(img.channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n-1.0\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (int y = img.height - 1; y >= 0; --y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) detail::put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(img.at(x, y, c))));
  write_file_bytes(path, bytes);
}

inline Image read_pfm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  const std::string kind = token();
  if (kind != "PF" && kind != "Pf") throw IoError("pfm: bad header in " + path.string());
  const int w = std::stoi(token()), h = std::stoi(token());
  const double scale = std::stod(token());
  ++pos;
  if (scale >= 0) throw IoError("pfm: big-endian files are not supported");
  Image img(w, h, kind == "PF" ? 3 : 1);
  detail::ByteReader in(std::span<const std::uint8_t>(bytes).subspan(pos));
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = std::bit_cast<float>(in.u32());
  return img;
}

/// Peak signal-to-noise ratio (dB, peak 1) over pixels with mask > 0.5
/// (all pixels when mask is empty).
inline double masked_psnr(const Image& pred, const Image& target, const Image* mask = nullptr) {
  if (!pred.same_shape(target)) throw ConfigError("psnr: shape mismatch");
  double se = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
    if (mask && mask->data[p] <= 0.5) continue;
    for (int c = 0; c < pred.channels; ++c) {
      const std::size_t i = p * static_cast<std::size_t>(pred.channels) + static_cast<std::size_t>(c);
      const double d = pred.data[i] - target.data[i];
      se += d * d;
      ++count;
    }
  }
  if (count == 0) throw ConfigError("psnr: empty mask");
  const double mse = se / static_cast<double>(count);
  return mse <= 0.0 ? 200.0 : -10.0 * std::log10(mse);
}

}  // namespace uvavatar
