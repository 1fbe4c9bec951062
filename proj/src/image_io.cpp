#include "dfe/image_io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "dfe/errors.hpp"

namespace dfe {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string encode_ppm(const Image& rgb) {
  if (rgb.channels != 3) throw UsageError("encode_ppm: image must have 3 channels");
  std::string out = "P6\n" + std::to_string(rgb.width) + " " + std::to_string(rgb.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.pixels.data()), rgb.pixels.size());
  return out;
}

std::string encode_pgm_plain(const Image& gray) {
  if (gray.channels != 1) throw UsageError("encode_pgm_plain: image must have 1 channel");
  std::string out = "P2\n" + std::to_string(gray.width) + " " + std::to_string(gray.height) + "\n255\n";
  for (std::size_t y = 0; y < gray.height; ++y) {
    for (std::size_t x = 0; x < gray.width; ++x) {
      if (x) out += ' ';
      out += std::to_string(gray.at(y, x));
    }
    out += '\n';
  }
  return out;
}

namespace {

class PnmLexer {
 public:
  explicit PnmLexer(const std::string& s) : s_(s) {}

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      throw IoError("PNM: expected a number at byte " + std::to_string(pos_));
    }
    std::size_t v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(s_[pos_++] - '0');
      if (v > (1u << 24)) throw IoError("PNM: number too large");
    }
    return v;
  }
  // Binary payload starts after exactly one whitespace byte following maxval.
  std::size_t payload_start() {
    if (pos_ >= s_.size() || !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      throw IoError("PNM: missing whitespace before raster");
    }
    return pos_ + 1;
  }
  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else if (s_[pos_] == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }
  const std::string& s_;
  std::size_t pos_ = 2;
};

}  // namespace

Image decode_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw IoError("PNM: bad magic");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw IoError(std::string("PNM: unsupported type P") + kind);
  }
  PnmLexer lex(bytes);
  Image img;
  img.width = lex.number();
  img.height = lex.number();
  const std::size_t maxval = lex.number();
  if (img.width == 0 || img.height == 0) throw IoError("PNM: zero image extent");
  if (maxval != 255) throw IoError("PNM: only maxval 255 is supported");
  img.channels = (kind == '3' || kind == '6') ? 3 : 1;
  const std::size_t n = img.width * img.height * img.channels;
  img.pixels.resize(n);
  if (kind == '5' || kind == '6') {
    const std::size_t start = lex.payload_start();
    if (bytes.size() - start < n) throw IoError("PNM: raster truncated");
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<std::uint8_t>(bytes[start + i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t v = lex.number();
      if (v > maxval) throw IoError("PNM: sample exceeds maxval");
      img.pixels[i] = static_cast<std::uint8_t>(v);
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& rgb) { write_file(path, encode_ppm(rgb)); }

void write_pgm_plain(const std::filesystem::path& path, const Image& gray) {
  write_file(path, encode_pgm_plain(gray));
}

Image read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }

}  // namespace dfe
