#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "medk2n/data/types.hpp"

namespace medk2n::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// All writers go through write-to-temp-then-rename so a failed command
// never leaves a partial artifact behind.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

// ---- PGM (binary P5, 8- or 16-bit big-endian) ----

inline std::string encode_pgm16(const data::Image2D& img) {
  std::string s = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n65535\n";
  s.reserve(s.size() + img.px.size() * 2);
  for (float v : img.px) {
    float c = std::min(1.f, std::max(0.f, v));
    unsigned u = static_cast<unsigned>(c * 65535.f + 0.5f);
    s += static_cast<char>((u >> 8) & 0xff);
    s += static_cast<char>(u & 0xff);
  }
  return s;
}

inline void save_pgm16(const std::filesystem::path& path, const data::Image2D& img) {
  atomic_write(path, encode_pgm16(img));
}

inline data::Image2D decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw IoError("not a binary PGM (P5) file");
  int w = std::stoi(token());
  int h = std::stoi(token());
  int maxv = std::stoi(token());
  ++pos;  // single whitespace after maxval
  data::Image2D img(h, w);
  std::size_t n = static_cast<std::size_t>(h) * w;
  if (maxv < 256) {
    if (bytes.size() - pos < n) throw IoError("truncated PGM data");
    for (std::size_t i = 0; i < n; ++i)
      img.px[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<float>(maxv);
  } else {
    if (bytes.size() - pos < 2 * n) throw IoError("truncated PGM data");
    for (std::size_t i = 0; i < n; ++i) {
      unsigned hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
      unsigned lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
      img.px[i] = ((hi << 8) | lo) / static_cast<float>(maxv);
    }
  }
  return img;
}

// ---- PNG (grayscale 8/16-bit) via libpng ----

inline data::Image2D load_png(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw IoError("cannot open: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w, h;
  int depth, color;
  png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  if (color & PNG_COLOR_MASK_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  data::Image2D img(static_cast<int>(h), static_cast<int>(w));
  std::vector<unsigned char> row(png_get_rowbytes(png, info));
  float maxv = depth == 16 ? 65535.f : 255.f;
  for (png_uint_32 r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 c = 0; c < w; ++c) {
      unsigned v = depth == 16 ? (row[2 * c] << 8) | row[2 * c + 1] : row[c];
      img.at(static_cast<int>(r), static_cast<int>(c)) = v / maxv;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline void save_png16(const std::filesystem::path& path, const data::Image2D& img) {
  auto tmp = path;
  tmp += ".tmp";
  std::FILE* fp = std::fopen(tmp.string().c_str(), "wb");
  if (!fp) throw IoError("cannot open for write: " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing " + tmp.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.w, img.h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * 2);
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w; ++c) {
      float v = std::min(1.f, std::max(0.f, img.at(r, c)));
      unsigned u = static_cast<unsigned>(v * 65535.f + 0.5f);
      row[2 * c] = static_cast<unsigned char>((u >> 8) & 0xff);
      row[2 * c + 1] = static_cast<unsigned char>(u & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  std::filesystem::rename(tmp, path);
}

// Dispatch on extension (.png / .pgm).
inline data::Image2D load_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  if (ext == ".pgm") return decode_pgm(read_file(path));
  if (ext == ".png") return load_png(path);
  throw IoError("unsupported image format: " + path.string());
}

}  // namespace medk2n::io
