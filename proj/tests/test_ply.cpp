#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>

#include "splat/error.hpp"
#include "splat/ply.hpp"
#include "support.hpp"

using namespace splat;

namespace {

const std::vector<std::string> kBaseProps = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                                             "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                                             "rot_0",   "rot_1",   "rot_2",   "rot_3"};

Errc parse_error(ByteView bytes, const PlyReadOptions& options = {}) {
    try {
        parse_ply(bytes, options);
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("parse unexpectedly succeeded");
    return Errc::ParseFailed;
}

Bytes text(const std::string& s) { return Bytes(s.begin(), s.end()); }

oracle::PlyRow row_of(const SplatRecord& r) {
    static const char* const axes[] = {"x", "y", "z"};
    oracle::PlyRow row;
    for (int k = 0; k < 3; ++k) {
        row.values[axes[k]] = r.position[k];
        row.values["f_dc_" + std::to_string(k)] = r.f_dc[k];
        row.values["scale_" + std::to_string(k)] = r.raw_log_scale[k];
    }
    for (int k = 0; k < 4; ++k) row.values["rot_" + std::to_string(k)] = r.raw_rotation[k];
    row.values["opacity"] = r.raw_opacity;
    for (std::size_t k = 0; k < r.f_rest.size(); ++k) row.values["f_rest_" + std::to_string(k)] = r.f_rest[k];
    return row;
}

}  // namespace

TEST_SUITE("ply") {

TEST_CASE("minimal ascii file with one identity splat") {
    const std::string src =
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n"
        "property float opacity\n"
        "property float scale_0\nproperty float scale_1\nproperty float scale_2\n"
        "property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n"
        "end_header\n0 0 0 0 0 0 0 0 0 0 1 0 0 0\n";
    const SplatScene scene = parse_ply(text(src));
    REQUIRE(scene.size() == 1);
    CHECK(scene.version == 0);
    CHECK(scene.sh_degree == 0);
    const ActivatedSplat a = activate(scene.splats[0]);
    CHECK(a.position.isZero());
    CHECK(a.opacity == doctest::Approx(0.5f));
    CHECK(a.scale.isApprox(Vec3f::Ones()));
    CHECK(a.rotation.coeffs().isApprox(Eigen::Quaternionf::Identity().coeffs()));
}

TEST_CASE("zero vertices is an empty scene") {
    const std::string header = canonical_ply_header(0, 0);
    CHECK(header.find("element vertex 0\n") != std::string::npos);
    const SplatScene scene = parse_ply(text(header));
    CHECK(scene.empty());

    const Bytes empty = serialize_ply(SplatScene{});
    CHECK(std::string(empty.begin(), empty.end()) == header);
}

TEST_CASE("one-splat body is four bytes per property") {
    SplatScene scene;
    scene.splats.push_back(SplatRecord{});
    const Bytes bytes = serialize_ply(scene);
    const std::string header = canonical_ply_header(1, 0);
    CHECK(bytes.size() - header.size() == 4 * kBaseProps.size());
}

TEST_CASE("serialized body matches an independent float encoder") {
    std::mt19937_64 rng(21);
    const SplatScene scene = testing::random_scene(rng, 50, 2);
    const Bytes bytes = serialize_ply(scene);
    const std::string header = canonical_ply_header(50, 2);
    REQUIRE(std::equal(header.begin(), header.end(), bytes.begin()));
    Bytes body;
    for (const auto& r : scene.splats) {
        for (int k = 0; k < 3; ++k) oracle::put_f32(body, r.position[k]);
        for (int k = 0; k < 3; ++k) oracle::put_f32(body, r.f_dc[k]);
        for (float f : r.f_rest) oracle::put_f32(body, f);
        oracle::put_f32(body, r.raw_opacity);
        for (int k = 0; k < 3; ++k) oracle::put_f32(body, r.raw_log_scale[k]);
        for (int k = 0; k < 4; ++k) oracle::put_f32(body, r.raw_rotation[k]);
    }
    CHECK(Bytes(bytes.begin() + static_cast<std::ptrdiff_t>(header.size()), bytes.end()) == body);
}

TEST_CASE("round trip is bit-identical") {
    std::mt19937_64 rng(1);
    for (int degree = 0; degree <= 3; ++degree) {
        const std::size_t n = degree == 0 ? 10000 : 1000;
        const SplatScene scene = testing::random_scene(rng, n, degree);
        const SplatScene back = parse_ply(serialize_ply(scene));
        CHECK(testing::scenes_bit_equal(scene, back));
        CHECK(back.bounds.contains(scene.bounds));
    }
}

TEST_CASE("oracle-written files parse regardless of property order and extras") {
    std::mt19937_64 rng(4);
    for (int degree = 0; degree <= 3; ++degree) {
        const SplatScene scene = testing::random_scene(rng, 64, degree);
        std::vector<std::string> props = kBaseProps;
        for (std::size_t k = 0; k < sh_rest_count(degree); ++k) props.push_back("f_rest_" + std::to_string(k));
        props.insert(props.end(), {"nx", "ny", "nz"});
        std::shuffle(props.begin(), props.end(), rng);
        std::vector<oracle::PlyRow> rows;
        for (const auto& r : scene.splats) rows.push_back(row_of(r));

        for (bool ascii : {false, true}) {
            const Bytes file = oracle::write_ply(props, rows, ascii);
            const PlyDocument doc = read_ply(file);
            CHECK(doc.ignored_properties == 3);
            CHECK(doc.header.format == (ascii ? PlyFormat::Ascii : PlyFormat::BinaryLittleEndian));
            CHECK(doc.scene.sh_degree == degree);
            CHECK(testing::scenes_bit_equal(doc.scene, scene));
        }
    }
}

TEST_CASE("typed errors for bad input") {
    CHECK(parse_error(text("plx\nformat ascii 1.0\nend_header\n")) == Errc::BadMagic);
    CHECK(parse_error(text("")) == Errc::BadMagic);
    CHECK(parse_error(text("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")) ==
          Errc::UnsupportedFormat);

    std::vector<std::string> props = kBaseProps;
    std::erase(props, "opacity");
    CHECK(parse_error(oracle::write_ply(props, {oracle::PlyRow{}}, false)) == Errc::MissingProperty);

    std::vector<std::string> gap = kBaseProps;
    for (int k = 0; k < 9; ++k) {
        if (k != 4) gap.push_back("f_rest_" + std::to_string(k));
    }
    CHECK(parse_error(oracle::write_ply(gap, {oracle::PlyRow{}}, false)) == Errc::MissingProperty);

    std::vector<std::string> partial = kBaseProps;
    for (int k = 0; k < 5; ++k) partial.push_back("f_rest_" + std::to_string(k));
    CHECK(parse_error(oracle::write_ply(partial, {oracle::PlyRow{}}, false)) == Errc::MissingProperty);

    SplatScene two;
    two.splats.resize(2);
    Bytes cut = serialize_ply(two);
    cut.pop_back();
    CHECK(parse_error(cut) == Errc::TruncatedBody);

    const std::string ascii_head = std::string("ply\nformat ascii 1.0\nelement vertex 2\n") +
                                   [] {
                                       std::string s;
                                       for (const auto& p : kBaseProps) s += "property float " + p + "\n";
                                       return s;
                                   }() +
                                   "end_header\n";
    CHECK(parse_error(text(ascii_head + "0 0 0 0 0 0 0 0 0 0 1 0 0 0\n")) == Errc::TruncatedBody);
}

TEST_CASE("vertex ceiling rejects huge headers before allocating") {
    std::string header = canonical_ply_header(std::size_t{1} << 30, 0);
    CHECK(parse_error(text(header)) == Errc::TooManyVertices);
    header = canonical_ply_header(20, 0);
    CHECK(parse_error(text(header), PlyReadOptions{.max_vertices = 10}) == Errc::TooManyVertices);
    // within the ceiling but with no body: rejected by size, not by allocation
    CHECK(parse_error(text(canonical_ply_header(10'000'000, 3))) == Errc::TruncatedBody);
}

TEST_CASE("other elements are skipped") {
    const std::string src =
        "ply\nformat ascii 1.0\ncomment camera block first\nelement camera 1\nproperty float fov\n"
        "element vertex 1\n" +
        [] {
            std::string s;
            for (const auto& p : kBaseProps) s += "property float " + p + "\n";
            return s;
        }() +
        "end_header\n45\n1 2 3 0 0 0 0 0 0 0 1 0 0 0\n";
    const SplatScene scene = parse_ply(text(src));
    REQUIRE(scene.size() == 1);
    CHECK(scene.splats[0].position == Vec3f(1, 2, 3));
}

TEST_CASE("fuzzed inputs parse or fail with a typed error") {
    std::mt19937_64 rng(99);
    const Bytes valid = serialize_ply(testing::random_scene(rng, 20, 1));
    std::uniform_int_distribution<std::size_t> pos(0, valid.size() - 1);
    std::uniform_int_distribution<int> byte(0, 255);
    int parsed = 0, typed = 0;
    for (int i = 0; i < 3000; ++i) {
        Bytes b = valid;
        const int edits = 1 + i % 4;
        for (int e = 0; e < edits; ++e) b[pos(rng)] = static_cast<std::uint8_t>(byte(rng));
        if (i % 5 == 0) b.resize(pos(rng));
        try {
            parse_ply(b);
            ++parsed;
        } catch (const Error&) {
            ++typed;
        }
    }
    CHECK(parsed + typed == 3000);
    CHECK(typed > 0);
}

}
