#pragma once

// Netpbm images: binary PPM (P6) for frames, plain PGM (P2) for attention
// maps. Only maxval 255 is produced; readers accept P2/P3/P5/P6 with
// comments and maxval 255.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dfe {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;           // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;   // row-major, channels interleaved

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

std::string encode_ppm(const Image& rgb);
std::string encode_pgm_plain(const Image& gray);
Image decode_pnm(const std::string& bytes);

void write_ppm(const std::filesystem::path& path, const Image& rgb);
void write_pgm_plain(const std::filesystem::path& path, const Image& gray);
Image read_pnm(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dfe
