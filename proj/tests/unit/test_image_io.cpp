#include <filesystem>

#include "doctest.h"
#include "dfe/errors.hpp"
#include "dfe/image_io.hpp"

using namespace dfe;

TEST_SUITE("image_io") {
  TEST_CASE("PPM and plain PGM round trip bit-exactly") {
    Image rgb{3, 2, 3, {}};
    for (std::size_t i = 0; i < 18; ++i) rgb.pixels.push_back(static_cast<std::uint8_t>(i * 14));
    const std::string ppm = encode_ppm(rgb);
    CHECK(ppm.substr(0, 11) == "P6\n3 2\n255\n");
    CHECK(ppm.size() == 11 + 18);
    CHECK(decode_pnm(ppm) == rgb);

    Image gray{2, 2, 1, {0, 128, 255, 7}};
    const std::string pgm = encode_pgm_plain(gray);
    CHECK(pgm.substr(0, 2) == "P2");
    CHECK(decode_pnm(pgm) == gray);
  }

  TEST_CASE("reader accepts comments and the P3/P5 variants") {
    const Image a = decode_pnm("P3\n# comment\n1 1\n255\n10 20 30\n");
    CHECK(a.channels == 3);
    CHECK(a.pixels == std::vector<std::uint8_t>{10, 20, 30});
    const Image b = decode_pnm(std::string("P5 2 1 255\n") + char(1) + char(200));
    CHECK(b.pixels == std::vector<std::uint8_t>{1, 200});
  }

  TEST_CASE("malformed images are rejected") {
    CHECK_THROWS_AS(decode_pnm("P7\n1 1\n255\n"), IoError);
    CHECK_THROWS_AS(decode_pnm("P2\n1 1\n65535\n3\n"), IoError);
    CHECK_THROWS_AS(decode_pnm("P2\n2 1\n255\n3\n"), IoError);
    CHECK_THROWS_AS(decode_pnm("P6\n2 2\n255\nabc"), IoError);
    CHECK_THROWS_AS(decode_pnm("P2\n1 1\n255\n300\n"), IoError);
    CHECK_THROWS_AS(encode_ppm(Image{1, 1, 1, {0}}), UsageError);
  }

  TEST_CASE("file helpers") {
    const auto p = std::filesystem::temp_directory_path() / "dfe_io_test.pgm";
    Image gray{1, 1, 1, {42}};
    write_pgm_plain(p, gray);
    CHECK(read_pnm(p) == gray);
    std::filesystem::remove(p);
    CHECK_THROWS_AS(read_file("/nonexistent/file"), IoError);
  }
}
