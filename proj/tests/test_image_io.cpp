#include <doctest.h>

#include "manic/error.hpp"
#include "manic/image_io.hpp"

using namespace manic;

TEST_SUITE("image_io") {
  TEST_CASE("base64 of the standard test vectors") {
    auto enc = [](const std::string& s) { return base64_encode(std::vector<unsigned char>(s.begin(), s.end())); };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foo") == "Zm9v");
    CHECK(enc("foobar") == "Zm9vYmFy");
  }

  TEST_CASE("png round trip quantizes to 8 bits") {
    for (std::size_t channels : {1u, 3u}) {
      Observation x(FrameShape{5, 3, channels});
      for (Eigen::Index i = 0; i < x.pixels.size(); ++i) x.pixels[i] = static_cast<double>(i) / static_cast<double>(x.pixels.size());
      auto bytes = encode_png(x);
      REQUIRE(bytes.size() > 8);
      CHECK(bytes[1] == 'P');
      CHECK(bytes[2] == 'N');
      CHECK(bytes[3] == 'G');
      auto back = decode_png(bytes);
      CHECK(back.shape == x.shape);
      CHECK((back.pixels - x.pixels).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
    }
  }

  TEST_CASE("unsupported channel counts and bad bytes are rejected") {
    CHECK_THROWS_AS(encode_png(Observation(FrameShape{2, 2, 2})), Error);
    CHECK_THROWS_AS(decode_png({1, 2, 3, 4}), Error);
  }
}
