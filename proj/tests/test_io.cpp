#include "doctest.h"

#include "sadcoeff/errors.hpp"
#include "sadcoeff/io.hpp"
#include "sadcoeff/rng.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace sadcoeff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "sadcoeff_unit";
    fs::create_directories(d);
    return d / name;
}

}  // namespace

TEST_CASE("COEF round trip is bit exact") {
    CoefMatrix m;
    m.rows = 3;
    m.dim = 4;
    m.data = {0.0f, -0.0f, std::numeric_limits<float>::denorm_min(), -std::numeric_limits<float>::denorm_min(),
              std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest(), std::numeric_limits<float>::min(),
              1.0f, -1.5f, 1e-40f, 3.0e38f, 0.1f};
    const CoefMatrix back = decode_coef(encode_coef(m));
    REQUIRE(back.data.size() == m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i)
        CHECK(std::bit_cast<std::uint32_t>(back.data[i]) == std::bit_cast<std::uint32_t>(m.data[i]));

    const fs::path p = scratch("rt.coef");
    write_coef(p, m);
    const CoefMatrix file = read_coef(p);
    CHECK(file.rows == 3);
    CHECK(file.dim == 4);
    for (std::size_t i = 0; i < m.data.size(); ++i)
        CHECK(std::bit_cast<std::uint32_t>(file.data[i]) == std::bit_cast<std::uint32_t>(m.data[i]));
}

TEST_CASE("COEF header layout") {
    const CoefMatrix m = CoefMatrix::from_values(2, 1, std::vector<double>{1.0, 2.0});
    const auto bytes = encode_coef(m);
    REQUIRE(bytes.size() == 16 + 8);
    CHECK(bytes[0] == 'S');
    CHECK(bytes[3] == 'C');
    CHECK(bytes[4] == 1);   // version, little endian
    CHECK(bytes[8] == 2);   // rows
    CHECK(bytes[12] == 1);  // dim
}

TEST_CASE("COEF rejects malformed input") {
    auto bytes = encode_coef(CoefMatrix::from_values(1, 2, std::vector<double>{1.0, 2.0}));
    CHECK_THROWS_AS(decode_coef(std::span(bytes).first(10)), FormatError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_coef(bad_magic), FormatError);
    auto short_payload = bytes;
    short_payload.pop_back();
    CHECK_THROWS_AS(decode_coef(short_payload), FormatError);
}

TEST_CASE("CoefMatrix matrix conversions") {
    Eigen::MatrixXd a(2, 3);
    a << 1, 2, 3, 4, 5, 6;
    const CoefMatrix m = CoefMatrix::from_matrix(a);
    CHECK(m.at(1, 0) == 4.0f);
    CHECK(m.to_matrix() == a);
    CHECK(m.row(1) == std::vector<double>{4, 5, 6});
}

TEST_CASE("PPM round trip") {
    Image img(3, 2, {10, 20, 30});
    img.set(2, 1, {255, 0, 7});
    const fs::path p = scratch("img.ppm");
    write_ppm(p, img);
    const Image back = read_ppm(p);
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(back.rgb == img.rgb);
    CHECK(back.get(2, 1) == std::array<std::uint8_t, 3>{255, 0, 7});
}

TEST_CASE("config parsing") {
    const RunConfig c = parse_config("# comment\nseed = 9\nexpnet_widths = 4, 8, 16, 32\nlambda_gan = 0\n");
    CHECK(c.seed == 9);
    CHECK(c.expnet_widths == std::array<int, 4>{4, 8, 16, 32});
    CHECK(c.lambda_gan == 0.0);
    CHECK(c.lambda_eye == 200.0);

    CHECK_THROWS_AS(parse_config("nonsense = 1\n"), FormatError);
    CHECK_THROWS_AS(parse_config("seed\n"), FormatError);
    CHECK_THROWS_AS(parse_config("expnet_widths = 1,2,3\n"), FormatError);

    const RunConfig d;
    const RunConfig again = parse_config(d.to_text());
    CHECK(again.to_text() == d.to_text());
}

TEST_CASE("config validation") {
    RunConfig c;
    CHECK_NOTHROW(validate_config(c));
    c.clips_per_style = 0;
    CHECK_THROWS(validate_config(c));
    c = RunConfig{};
    c.num_styles = 47;
    CHECK_THROWS(validate_config(c));
}

TEST_CASE("checksums distinguish content") {
    const fs::path a = scratch("a.txt"), b = scratch("b.txt");
    write_text_file(a, "hello");
    write_text_file(b, "hellp");
    CHECK(file_checksum(a) == file_checksum(a));
    CHECK(file_checksum(a) != file_checksum(b));
    CHECK(read_text_file(a) == "hello");
}
