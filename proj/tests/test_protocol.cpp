#include <doctest.h>

#include <random>
#include <string>

#include "splat/error.hpp"
#include "splat/ply.hpp"
#include "splat/protocol.hpp"
#include "support.hpp"

using namespace splat;

namespace {

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> b(0, 255);
    Bytes out(n);
    for (auto& x : out) x = static_cast<std::uint8_t>(b(rng));
    return out;
}

template <typename F>
Error expect_error(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e;
    }
    FAIL("expected an error");
    return Error(Errc::ParseFailed, "");
}

/// Independent frame encoder straight from the byte layout.
Bytes oracle_frame(std::uint8_t type, std::uint8_t flags, std::uint64_t version, const Bytes& payload) {
    Bytes out = {'G', 'S', 'P', 'T', 0x01, type, flags, 0x00};
    oracle::put_u64(out, version);
    oracle::put_u32(out, static_cast<std::uint32_t>(payload.size()));
    oracle::put_u32(out, oracle::crc32(payload.data(), payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

/// Mutates one random field of one random record.
SplatScene perturb(std::mt19937_64& rng, SplatScene s, std::uint64_t version) {
    std::uniform_int_distribution<std::size_t> pick(0, s.size() ? s.size() - 1 : 0);
    std::uniform_int_distribution<int> what(0, 3);
    std::normal_distribution<float> n(0, 1);
    const int edits = 1 + what(rng) * 3;
    for (int e = 0; e < edits && !s.splats.empty(); ++e) {
        SplatRecord& r = s.splats[pick(rng)];
        switch (what(rng)) {
            case 0: r.position.x() += n(rng); break;
            case 1: r.raw_opacity = n(rng); break;
            case 2: r.raw_rotation[2] += 0.25f; break;
            default:
                if (!r.f_rest.empty()) r.f_rest.back() = n(rng);
                r.f_dc.y() -= 1;
        }
    }
    std::uniform_int_distribution<int> resize(-3, 3);
    const int d = resize(rng);
    if (d < 0 && s.size() >= std::size_t(-d)) s.splats.resize(s.size() + d);
    for (int i = 0; i < d; ++i) s.splats.push_back(testing::random_record(rng, s.sh_degree));
    s.version = version;
    return s;
}

}  // namespace

TEST_SUITE("protocol") {

TEST_CASE("SnapshotEnd at version 2 has the documented bytes") {
    ProtocolFrame f;
    f.type = FrameType::SnapshotEnd;
    f.scene_version = 2;
    const Bytes want = {0x47, 0x53, 0x50, 0x54, 0x01, 0x03, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00,
                        0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00};
    CHECK(encode_frame(f) == want);
    CHECK(decode_frame(want) == f);
}

TEST_CASE("crc32 matches a bitwise implementation") {
    const std::string check = "123456789";
    CHECK(crc32(ByteView(reinterpret_cast<const std::uint8_t*>(check.data()), check.size())) == 0xCBF43926u);
    CHECK(crc32({}) == 0u);
    std::mt19937_64 rng(1);
    for (std::size_t n : {1, 3, 64, 1000, 65537}) {
        const Bytes b = random_bytes(rng, n);
        CHECK(crc32(b) == oracle::crc32(b.data(), b.size()));
    }
}

TEST_CASE("encoded frames match the byte layout") {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        ProtocolFrame f;
        f.type = (i % 2) ? FrameType::SnapshotChunk : FrameType::PoiSet;
        f.flags = static_cast<std::uint8_t>(i);
        f.scene_version = rng();
        f.payload = random_bytes(rng, static_cast<std::size_t>(i * 13));
        CHECK(encode_frame(f) == oracle_frame(static_cast<std::uint8_t>(f.type), f.flags, f.scene_version, f.payload));
    }
}

TEST_CASE("1 KiB delta frame round trips") {
    std::mt19937_64 rng(3);
    DeltaSet d;
    d.base_version = 4;
    d.target_version = 5;
    for (std::uint32_t i = 0; i < 9; ++i) d.updated.emplace_back(i * 3, testing::random_record(rng, 0));
    for (int i = 0; i < 9; ++i) d.appended.push_back(testing::random_record(rng, 0));
    ProtocolFrame f;
    f.type = FrameType::Delta;
    f.scene_version = 5;
    f.payload = encode_delta(d);
    CHECK(f.payload.size() == kDeltaHeaderSize + 9 * 4 + 18 * 56);
    CHECK(f.payload.size() == encoded_delta_size(d));
    CHECK(f.payload.size() >= 1000);
    const ProtocolFrame back = decode_frame(encode_frame(f));
    CHECK(back == f);
    const DeltaSet dd = decode_delta(back.payload);
    CHECK(dd.base_version == 4);
    CHECK(dd.updated.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(dd.updated[i].first == d.updated[i].first);
        CHECK(testing::records_bit_equal(dd.updated[i].second, d.updated[i].second));
        CHECK(testing::records_bit_equal(dd.appended[i], d.appended[i]));
    }
}

TEST_CASE("every single payload bit flip is a CrcMismatch") {
    std::mt19937_64 rng(4);
    ProtocolFrame f;
    f.type = FrameType::SnapshotChunk;
    f.payload = random_bytes(rng, 16);
    const Bytes wire = encode_frame(f);
    for (std::size_t byte = kFrameHeaderSize; byte < wire.size(); ++byte) {
        for (int bit = 0; bit < 8; ++bit) {
            Bytes b = wire;
            b[byte] ^= static_cast<std::uint8_t>(1u << bit);
            CHECK(expect_error([&] { decode_frame(b); }).code() == Errc::CrcMismatch);
        }
    }
    // and in the stored checksum
    for (int bit = 0; bit < 32; ++bit) {
        Bytes b = wire;
        b[20 + bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        CHECK(expect_error([&] { decode_frame(b); }).code() == Errc::CrcMismatch);
    }
}

TEST_CASE("header checks are typed") {
    ProtocolFrame f;
    f.type = FrameType::Ack;
    f.payload = Bytes(10, 7);
    const Bytes wire = encode_frame(f);
    auto code = [&](Bytes b, std::size_t max = kDefaultMaxPayload) { return expect_error([&] { decode_frame(b, max); }).code(); };
    Bytes bad = wire;
    bad[0] = 'X';
    CHECK(code(bad) == Errc::BadMagic);
    bad = wire;
    bad[4] = 0x02;
    CHECK(code(bad) == Errc::BadVersion);
    bad = wire;
    bad[5] = 0x42;
    CHECK(code(bad) == Errc::UnknownFrameType);
    bad = wire;
    bad[7] = 1;
    CHECK(code(bad) == Errc::MalformedFrame);
    CHECK(code(Bytes(wire.begin(), wire.begin() + 23)) == Errc::Truncated);
    CHECK(code(Bytes(wire.begin(), wire.end() - 1)) == Errc::Truncated);
    CHECK(code(wire, 9) == Errc::OversizePayload);
    Bytes trailing = wire;
    trailing.push_back(0);
    CHECK(code(trailing) == Errc::MalformedFrame);
}

TEST_CASE("frame logs report the failing ordinal") {
    Bytes log;
    for (std::uint64_t v = 1; v <= 4; ++v) append_frame(log, make_ack(v));
    CHECK(decode_frame_log(log).size() == 4);
    log[kFrameHeaderSize * 2 + 5] = 0x55;  // type byte of frame 2
    const Error e = expect_error([&] { decode_frame_log(log); });
    CHECK(e.code() == Errc::UnknownFrameType);
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
}

TEST_CASE("diff examples") {
    std::mt19937_64 rng(5);
    const SplatScene a = testing::random_scene(rng, 50, 1, 1);
    SplatScene b = a;
    b.version = 2;
    const DeltaSet same = diff_scenes(a, b, 0.0f);
    CHECK(same.empty());
    CHECK(same.base_version == 1);
    CHECK(same.target_version == 2);

    b.splats[17].position.x() += 1.0f;
    const DeltaSet one = diff_scenes(a, b, 1e-6f);
    REQUIRE(one.updated.size() == 1);
    CHECK(one.updated[0].first == 17);
    CHECK(one.appended.empty());
    CHECK_FALSE(one.truncate_to);

    // below epsilon is not an update
    SplatScene c = a;
    c.version = 3;
    c.splats[3].raw_opacity += 1e-4f;
    CHECK(diff_scenes(a, c, 1e-3f).empty());

    SplatScene shorter = a;
    shorter.version = 3;
    shorter.splats.resize(20);
    CHECK(diff_scenes(a, shorter).truncate_to == 20u);

    CHECK(expect_error([&] { diff_scenes(b, a); }).code() == Errc::VersionOrder);
    CHECK(expect_error([&] { diff_scenes(a, a); }).code() == Errc::VersionOrder);
}

TEST_CASE("apply examples") {
    std::mt19937_64 rng(6);
    const SplatScene a = testing::random_scene(rng, 30, 0, 7);
    DeltaSet empty;
    empty.base_version = 7;
    empty.target_version = 8;
    const SplatScene same = apply_delta_set(a, empty);
    CHECK(same.version == 8);
    CHECK(testing::scenes_bit_equal(same, a));

    DeltaSet wipe = empty;
    wipe.truncate_to = 0;
    const SplatScene gone = apply_delta_set(a, wipe);
    CHECK(gone.empty());
    CHECK(gone.version == 8);
    CHECK(a.size() == 30);

    DeltaSet wrong = empty;
    wrong.base_version = 6;
    CHECK(expect_error([&] { apply_delta_set(a, wrong); }).code() == Errc::VersionMismatch);
    DeltaSet oob = empty;
    oob.updated.emplace_back(30, SplatRecord{});
    CHECK(expect_error([&] { apply_delta_set(a, oob); }).code() == Errc::IndexOutOfRange);
}

TEST_CASE("apply after diff reproduces the new scene") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int degree = trial % 4;
        SplatScene old_scene = testing::random_scene(rng, 1 + trial % 40, degree, 10);
        SplatScene new_scene = perturb(rng, old_scene, 11 + trial % 3);
        const DeltaSet d = diff_scenes(old_scene, new_scene, 0.0f);
        const SplatScene back = apply_delta_set(old_scene, decode_delta(encode_delta(d)));
        CHECK(back.version == new_scene.version);
        CHECK(testing::scenes_bit_equal(back, new_scene));
        for (std::size_t i = 1; i < d.updated.size(); ++i) CHECK(d.updated[i - 1].first < d.updated[i].first);
    }
    // degree change
    const SplatScene deg0 = testing::random_scene(rng, 10, 0, 1);
    const SplatScene deg2 = testing::random_scene(rng, 12, 2, 2);
    const DeltaSet d = diff_scenes(deg0, deg2);
    CHECK(testing::scenes_bit_equal(apply_delta_set(deg0, d), deg2));
}

TEST_CASE("epsilon diffs stay within epsilon") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> jitter(-1e-3f, 1e-3f);
    const SplatScene old_scene = testing::random_scene(rng, 200, 1, 1);
    SplatScene new_scene = old_scene;
    new_scene.version = 2;
    for (auto& r : new_scene.splats) r.position.x() += jitter(rng);
    new_scene.splats[5].position.y() += 1;
    const DeltaSet d = diff_scenes(old_scene, new_scene, 2e-3f);
    CHECK(d.updated.size() == 1);
    const SplatScene got = apply_delta_set(old_scene, d);
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK((got.splats[i].position - new_scene.splats[i].position).cwiseAbs().maxCoeff() <= 2e-3f);
    }
}

TEST_CASE("chunking examples") {
    const Bytes one = {42};
    auto frames = chunk_snapshot(one, kDefaultChunkSize, 1, 0, 0);
    REQUIRE(frames.size() == 3);
    CHECK(frames[1].type == FrameType::SnapshotChunk);
    CHECK(reassemble(frames) == one);

    std::mt19937_64 rng(9);
    const Bytes big = random_bytes(rng, 1000000);
    frames = chunk_snapshot(big, 65536, 3, 0, 0);
    CHECK(frames.size() == 16 + 2);
    const SnapshotBegin begin = decode_snapshot_begin(frames.front().payload);
    CHECK(begin.total_chunks == 16);
    CHECK(begin.total_bytes == 1000000);
    CHECK(reassemble(frames) == big);
    for (const auto& f : frames) CHECK(f.scene_version == 3);
}

TEST_CASE("chunking round trips for assorted sizes") {
    std::mt19937_64 rng(10);
    for (std::size_t chunk : {1, 7, 4096, 262144}) {
        for (std::size_t len : {0, 1, 6, 7, 8, 5000, 300000}) {
            if (chunk == 1 && len > 5000) continue;
            const Bytes data = random_bytes(rng, len);
            const auto frames = chunk_snapshot(data, chunk, 1, 0, 0);
            CHECK(frames.size() == 2 + (len + chunk - 1) / chunk);
            CHECK(reassemble(frames) == data);
        }
    }
}

TEST_CASE("missing and extra chunks are detected") {
    std::mt19937_64 rng(11);
    const Bytes data = random_bytes(rng, 50);
    auto frames = chunk_snapshot(data, 10, 1, 0, 0);
    REQUIRE(frames.size() == 7);
    auto dropped = frames;
    dropped.erase(dropped.begin() + 1 + 3);  // chunk 3 of 5
    const Error gap = expect_error([&] { reassemble(dropped); });
    CHECK(gap.code() == Errc::ChunkGap);
    CHECK(std::string(gap.what()).find("missing chunk 3") != std::string::npos);

    auto swapped = frames;
    std::swap(swapped[2], swapped[3]);
    CHECK(expect_error([&] { reassemble(swapped); }).code() == Errc::ChunkGap);

    auto lied = frames;
    SnapshotBegin b = decode_snapshot_begin(lied[0].payload);
    b.total_bytes = 49;
    lied[0].payload = encode_snapshot_begin(b);
    CHECK(expect_error([&] { reassemble(lied); }).code() == Errc::LengthMismatch);

    auto tail = frames;
    tail.pop_back();
    CHECK(expect_error([&] { reassemble(tail); }).code() == Errc::ChunkGap);
}

TEST_CASE("replica swaps scenes only on complete snapshots") {
    std::mt19937_64 rng(12);
    const SplatScene v1 = testing::random_scene(rng, 300, 1, 1);
    const Bytes ply1 = serialize_ply(v1);
    SceneReplica replica;
    const auto frames = chunk_snapshot(ply1, 1000, 1, 1, v1.size());
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
        CHECK(replica.apply(frames[i]) == SceneReplica::Event::None);
        CHECK(replica.scene().empty());
    }
    CHECK(replica.snapshot_in_progress());
    CHECK(replica.apply(frames.back()) == SceneReplica::Event::SceneReplaced);
    CHECK(replica.version() == 1);
    CHECK(testing::scenes_bit_equal(replica.scene(), v1));
    CHECK(replica.last_snapshot() == ply1);

    // a half-delivered second snapshot leaves v1 visible
    SplatScene v2 = perturb(rng, v1, 2);
    const auto frames2 = chunk_snapshot(serialize_ply(v2), 1000, 2, 1, v2.size());
    for (std::size_t i = 0; i < frames2.size() / 2; ++i) replica.apply(frames2[i]);
    CHECK(replica.version() == 1);
    CHECK(testing::scenes_bit_equal(replica.scene(), v1));

    // a delta from v1 still applies and abandons nothing visible
    ProtocolFrame delta;
    delta.type = FrameType::Delta;
    delta.scene_version = 2;
    delta.payload = encode_delta(diff_scenes(v1, v2));
    CHECK(replica.apply(delta) == SceneReplica::Event::SceneReplaced);
    CHECK(replica.version() == 2);
    CHECK(testing::scenes_bit_equal(replica.scene(), v2));

    PoiSet pois;
    Poi p;
    p.id = "a";
    p.hazard = HazardClass::Kind::Debris;
    pois = upsert_poi(pois, p);
    CHECK(replica.apply(make_poi_frame(pois, 2)) == SceneReplica::Event::PoisReplaced);
    CHECK(replica.pois() == pois);
    CHECK(replica.apply(make_ack(2)) == SceneReplica::Event::Acked);
    CHECK(replica.apply(make_error_frame(7, "boom")) == SceneReplica::Event::ServerError);
    CHECK(replica.last_error()->message == "boom");
    CHECK(expect_error([&] { replica.apply(make_subscribe(0)); }).code() == Errc::UnexpectedFrame);
}

TEST_CASE("subscribe and error payloads") {
    const ProtocolFrame s = make_subscribe(0x0102030405060708ull);
    CHECK(s.payload.size() == 8);
    CHECK(s.payload[0] == 0x08);
    CHECK(decode_subscribe(s) == 0x0102030405060708ull);
    CHECK(expect_error([&] { decode_subscribe(make_ack(1)); }).code() == Errc::UnexpectedFrame);

    const ErrorPayload e = decode_error_payload(make_error_frame(513, "bad thing").payload);
    CHECK(e.code == 513);
    CHECK(e.message == "bad thing");
    CHECK(make_error_frame(513, "x").payload[0] == 0x01);
}

TEST_CASE("mutated frames either fail typed or differ only in unprotected header bytes") {
    std::mt19937_64 rng(13);
    std::vector<Bytes> valid;
    valid.push_back(encode_frame(make_ack(5)));
    valid.push_back(encode_frame(make_subscribe(9)));
    ProtocolFrame chunk;
    chunk.type = FrameType::SnapshotChunk;
    chunk.payload = random_bytes(rng, 100);
    valid.push_back(encode_frame(chunk));
    int typed = 0, decoded = 0;
    for (int i = 0; i < 5000; ++i) {
        const Bytes& src = valid[static_cast<std::size_t>(i) % valid.size()];
        Bytes b = src;
        std::uniform_int_distribution<std::size_t> pos(0, b.size() - 1);
        const std::size_t at = pos(rng);
        b[at] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        try {
            decode_frame(b);
            ++decoded;
            const bool unprotected = at == 5 || at == 6 || (at >= 8 && at < 16);
            CHECK(unprotected);
        } catch (const Error&) {
            ++typed;
        }
    }
    CHECK(typed + decoded == 5000);
    CHECK(typed > decoded);
}

}
