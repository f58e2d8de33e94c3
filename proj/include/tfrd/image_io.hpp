#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tfrd/file_io.hpp"
#include "tfrd/tensor.hpp"

namespace tfrd {

/// Interleaved 8-bit image as stored in a binary PGM (1 channel) or PPM (3).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

class PnmHeader {
 public:
  explicit PnmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t number(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw IoError(std::string("malformed PNM header: expected ") + field);
    }
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1u << 24)) throw IoError(std::string("malformed PNM header: ") + field + " too large");
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw IoError("malformed PNM header: missing separator before pixel data");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

}  // namespace detail

/// Decodes binary P5 (greyscale) or P6 (RGB). Samples are rescaled to
/// 0..255 when maxval is below 255; 16-bit files are rejected.
inline Image decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw IoError("not a binary PGM/PPM file (expected magic P5 or P6)");
  }
  Image img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  detail::PnmHeader header(bytes);
  img.width = header.number("width");
  img.height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (img.width == 0 || img.height == 0) throw IoError("PNM image has zero extent");
  if (maxval == 0) throw IoError("PNM maxval must be positive");
  if (maxval > 255) throw IoError("16-bit PNM (maxval " + std::to_string(maxval) + ") is not supported");
  const std::size_t offset = header.raster_offset();
  const std::size_t count = img.width * img.height * img.channels;
  if (bytes.size() < offset + count) {
    throw IoError("PNM payload too short: need " + std::to_string(count) + " bytes, have " +
                  std::to_string(bytes.size() > offset ? bytes.size() - offset : 0));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(offset + count));
  if (maxval != 255) {
    for (auto& p : img.pixels) {
      if (p > maxval) throw IoError("PNM sample exceeds maxval");
      p = static_cast<std::uint8_t>(std::lround(255.0 * p / static_cast<double>(maxval)));
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("PNM supports 1 or 3 channels");
  if (img.pixels.size() != img.width * img.height * img.channels) throw IoError("image buffer size mismatch");
  std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image read_pnm(const std::string& path) { return decode_pnm(read_file(path)); }
inline void write_pnm(const std::string& path, const Image& img) { write_file(path, encode_pnm(img)); }

inline std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Planar c x h x w values in [0, 1] -> interleaved 8-bit image.
template <typename T>
Image image_from_planar(std::span<const T> planar, std::size_t channels, std::size_t height, std::size_t width) {
  if (planar.size() != channels * height * width) throw ShapeError("image_from_planar: size mismatch");
  Image img{width, height, channels, std::vector<std::uint8_t>(planar.size())};
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < height * width; ++i) {
      img.pixels[i * channels + c] = quantize_unit(static_cast<double>(planar[c * height * width + i]));
    }
  return img;
}

/// Interleaved 8-bit image -> planar values in [0, 1].
template <typename T>
std::vector<T> planar_from_image(const Image& img) {
  const std::size_t n = img.width * img.height;
  std::vector<T> out(n * img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = static_cast<T>(img.pixels[i * img.channels + c] / 255.0);
  return out;
}

/// Ground-truth read: greyscale binarized at 128.
template <typename T>
std::vector<T> mask_from_image(const Image& img) {
  if (img.channels != 1) throw IoError("ground truth must be a greyscale PGM");
  std::vector<T> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixels[i] >= 128 ? T(1) : T(0);
  return out;
}

}  // namespace tfrd
