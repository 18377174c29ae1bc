// SPDX-License-Identifier: Apache-2.0
#include "sketch/image.hpp"

#include <boost/beast/core/detail/base64.hpp>

#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sketch/error.hpp"

namespace sketch {

GrayImage::GrayImage(std::size_t w, std::size_t h, std::uint8_t fill)
    : width(w), height(h), pixels(w * h, fill) {
  if (w == 0 || h == 0) throw DimensionError("image dimensions must be positive");
}

GrayImage::GrayImage(std::size_t w, std::size_t h, std::vector<std::uint8_t> px)
    : width(w), height(h), pixels(std::move(px)) {
  if (w == 0 || h == 0) throw DimensionError("image dimensions must be positive");
  if (pixels.size() != w * h)
    throw DimensionError("image has " + std::to_string(pixels.size()) + " pixels, expected " +
                         std::to_string(w) + "x" + std::to_string(h));
}

std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

namespace {

class PgmReader {
 public:
  explicit PgmReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0, digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) throw FormatError(std::string("PGM ") + what + " is too large");
    }
    if (digits == 0) throw FormatError(std::string("PGM header is missing ") + what);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw FormatError("not a binary PGM (P5) image");
  PgmReader r(bytes);
  r.pos_ = 2;
  const auto w = r.number("width");
  const auto h = r.number("height");
  const auto maxval = r.number("maxval");
  if (maxval != 255) throw FormatError("only 8-bit PGM (maxval 255) is supported");
  if (w == 0 || h == 0) throw FormatError("PGM dimensions must be positive");
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_]))
    throw FormatError("PGM header is not terminated");
  ++r.pos_;
  if (bytes.size() - r.pos_ < w * h)
    throw FormatError("PGM pixel data is truncated: expected " + std::to_string(w * h) +
                      " bytes, found " + std::to_string(bytes.size() - r.pos_));
  std::vector<std::uint8_t> px(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos_),
                               bytes.begin() + static_cast<std::ptrdiff_t>(r.pos_ + w * h));
  return GrayImage(w, h, std::move(px));
}

GrayImage decode_pgm(const std::string& bytes) {
  return decode_pgm(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw IoError("cannot open image " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  const auto bytes = encode_pgm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

GrayImage resize_nearest(const GrayImage& image, std::size_t width, std::size_t height) {
  if (image.width == width && image.height == height) return image;
  GrayImage out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = y * image.height / height;
    for (std::size_t x = 0; x < width; ++x) out.at(x, y) = image.at(x * image.width / width, sy);
  }
  return out;
}

namespace b64 = boost::beast::detail::base64;

std::string base64_encode(std::string_view bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    const bool pad_ok = c == '=' && i + 2 >= text.size();
    if (!(std::isalnum(c) || c == '+' || c == '/' || pad_ok))
      throw FormatError("invalid base64 character at offset " + std::to_string(i));
  }
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  out.resize(written);
  return out;
}

}  // namespace sketch
