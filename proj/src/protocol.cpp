#include "splat/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <boost/crc.hpp>

#include "splat/error.hpp"
#include "splat/ply.hpp"

namespace splat {

std::string_view frame_type_name(FrameType type) noexcept {
    switch (type) {
        case FrameType::SnapshotBegin: return "SnapshotBegin";
        case FrameType::SnapshotChunk: return "SnapshotChunk";
        case FrameType::SnapshotEnd: return "SnapshotEnd";
        case FrameType::Delta: return "Delta";
        case FrameType::PoiSet: return "PoiSet";
        case FrameType::Subscribe: return "Subscribe";
        case FrameType::Ack: return "Ack";
        case FrameType::Error: return "Error";
    }
    return "Unknown";
}

bool is_known_frame_type(std::uint8_t value) noexcept {
    switch (static_cast<FrameType>(value)) {
        case FrameType::SnapshotBegin:
        case FrameType::SnapshotChunk:
        case FrameType::SnapshotEnd:
        case FrameType::Delta:
        case FrameType::PoiSet:
        case FrameType::Subscribe:
        case FrameType::Ack:
        case FrameType::Error: return true;
    }
    return false;
}

std::uint32_t crc32(ByteView data) noexcept {
    boost::crc_32_type crc;
    crc.process_bytes(data.data(), data.size());
    return crc.checksum();
}

void append_frame(Bytes& out, const ProtocolFrame& frame) {
    const std::size_t at = out.size();
    out.resize(at + frame.wire_size());
    std::uint8_t* p = out.data() + at;
    std::memcpy(p, "GSPT", 4);
    p[4] = kProtocolVersion;
    p[5] = static_cast<std::uint8_t>(frame.type);
    p[6] = frame.flags;
    p[7] = 0;
    store_le<std::uint64_t>(p + 8, frame.scene_version);
    store_le<std::uint32_t>(p + 16, static_cast<std::uint32_t>(frame.payload.size()));
    store_le<std::uint32_t>(p + 20, crc32(frame.payload));
    if (!frame.payload.empty()) std::memcpy(p + kFrameHeaderSize, frame.payload.data(), frame.payload.size());
}

Bytes encode_frame(const ProtocolFrame& frame) {
    Bytes out;
    out.reserve(frame.wire_size());
    append_frame(out, frame);
    return out;
}

ProtocolFrame decode_frame_prefix(ByteView bytes, std::size_t& consumed, std::size_t max_payload) {
    if (bytes.size() < kFrameHeaderSize) {
        throw Error(Errc::Truncated, std::to_string(bytes.size()) + " bytes is shorter than a frame header");
    }
    const std::uint8_t* p = bytes.data();
    if (std::memcmp(p, "GSPT", 4) != 0) throw Error(Errc::BadMagic, "frame magic is not GSPT");
    if (p[4] != kProtocolVersion) throw Error(Errc::BadVersion, "protocol version " + std::to_string(p[4]));
    if (!is_known_frame_type(p[5])) throw Error(Errc::UnknownFrameType, "frame type " + std::to_string(p[5]));
    if (p[7] != 0) throw Error(Errc::MalformedFrame, "reserved header byte is not zero");
    const auto len = load_le<std::uint32_t>(p + 16);
    if (len > max_payload) {
        throw Error(Errc::OversizePayload, std::to_string(len) + " byte payload exceeds " + std::to_string(max_payload));
    }
    if (bytes.size() - kFrameHeaderSize < len) {
        throw Error(Errc::Truncated, "payload declares " + std::to_string(len) + " bytes, " +
                                         std::to_string(bytes.size() - kFrameHeaderSize) + " available");
    }
    const ByteView payload = bytes.subspan(kFrameHeaderSize, len);
    const auto expected = load_le<std::uint32_t>(p + 20);
    if (crc32(payload) != expected) throw Error(Errc::CrcMismatch, "payload CRC does not match header");

    ProtocolFrame frame;
    frame.type = static_cast<FrameType>(p[5]);
    frame.flags = p[6];
    frame.scene_version = load_le<std::uint64_t>(p + 8);
    frame.payload.assign(payload.begin(), payload.end());
    consumed = kFrameHeaderSize + len;
    return frame;
}

ProtocolFrame decode_frame(ByteView bytes, std::size_t max_payload) {
    std::size_t consumed = 0;
    ProtocolFrame frame = decode_frame_prefix(bytes, consumed, max_payload);
    if (consumed != bytes.size()) {
        throw Error(Errc::MalformedFrame, std::to_string(bytes.size() - consumed) + " trailing bytes after frame");
    }
    return frame;
}

std::vector<ProtocolFrame> decode_frame_log(ByteView bytes, std::size_t max_payload) {
    std::vector<ProtocolFrame> frames;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        std::size_t consumed = 0;
        try {
            frames.push_back(decode_frame_prefix(bytes.subspan(pos), consumed, max_payload));
        } catch (const Error& e) {
            throw Error(e.code(), "frame " + std::to_string(frames.size()) + " at byte " + std::to_string(pos) +
                                      ": " + e.what());
        }
        pos += consumed;
    }
    return frames;
}

// ---- payloads -------------------------------------------------------------

namespace {

void require_size(ByteView payload, std::size_t n, const char* what) {
    if (payload.size() != n) {
        throw Error(Errc::MalformedFrame, std::string(what) + " payload must be " + std::to_string(n) + " bytes, got " +
                                              std::to_string(payload.size()));
    }
}

}  // namespace

Bytes encode_snapshot_begin(const SnapshotBegin& begin) {
    Bytes out;
    out.reserve(21);
    append_le(out, begin.total_chunks);
    append_le(out, begin.total_bytes);
    append_le(out, begin.sh_degree);
    append_le(out, begin.splat_count);
    return out;
}

SnapshotBegin decode_snapshot_begin(ByteView payload) {
    require_size(payload, 21, "SnapshotBegin");
    SnapshotBegin b;
    b.total_chunks = load_le<std::uint32_t>(payload.data());
    b.total_bytes = load_le<std::uint64_t>(payload.data() + 4);
    b.sh_degree = payload[12];
    b.splat_count = load_le<std::uint64_t>(payload.data() + 13);
    return b;
}

std::uint32_t chunk_index_of(ByteView payload) {
    if (payload.size() < 4) throw Error(Errc::MalformedFrame, "SnapshotChunk payload lacks chunk_index");
    return load_le<std::uint32_t>(payload.data());
}

Bytes encode_error_payload(const ErrorPayload& error) {
    Bytes out;
    append_le(out, error.code);
    out.insert(out.end(), error.message.begin(), error.message.end());
    return out;
}

ErrorPayload decode_error_payload(ByteView payload) {
    if (payload.size() < 2) throw Error(Errc::MalformedFrame, "Error payload lacks code");
    ErrorPayload e;
    e.code = load_le<std::uint16_t>(payload.data());
    e.message.assign(reinterpret_cast<const char*>(payload.data()) + 2, payload.size() - 2);
    return e;
}

ProtocolFrame make_subscribe(std::uint64_t last_known_version) {
    ProtocolFrame f;
    f.type = FrameType::Subscribe;
    append_le(f.payload, last_known_version);
    return f;
}

std::uint64_t decode_subscribe(const ProtocolFrame& frame) {
    if (frame.type != FrameType::Subscribe) throw Error(Errc::UnexpectedFrame, "expected Subscribe");
    require_size(frame.payload, 8, "Subscribe");
    return load_le<std::uint64_t>(frame.payload.data());
}

ProtocolFrame make_ack(std::uint64_t scene_version) {
    ProtocolFrame f;
    f.type = FrameType::Ack;
    f.scene_version = scene_version;
    return f;
}

ProtocolFrame make_poi_frame(const PoiSet& set, std::uint64_t scene_version) {
    ProtocolFrame f;
    f.type = FrameType::PoiSet;
    f.scene_version = scene_version;
    const std::string doc = nlohmann::json(set).dump();
    f.payload.assign(doc.begin(), doc.end());
    return f;
}

ProtocolFrame make_error_frame(std::uint16_t code, const std::string& message, std::uint64_t scene_version) {
    ProtocolFrame f;
    f.type = FrameType::Error;
    f.scene_version = scene_version;
    f.payload = encode_error_payload({code, message});
    return f;
}

// ---- deltas ---------------------------------------------------------------

std::size_t encoded_delta_size(const DeltaSet& delta) noexcept {
    const std::size_t record = record_byte_size(delta.sh_degree);
    return kDeltaHeaderSize + delta.updated.size() * (4 + record) + delta.appended.size() * record;
}

Bytes encode_delta(const DeltaSet& delta) {
    if (delta.sh_degree < 0 || delta.sh_degree > kMaxShDegree) throw Error(Errc::InconsistentShDegree, "delta degree");
    const std::size_t record = record_byte_size(delta.sh_degree);
    Bytes out;
    out.reserve(encoded_delta_size(delta));
    append_le(out, delta.base_version);
    append_le(out, delta.target_version);
    append_le(out, static_cast<std::uint8_t>(delta.sh_degree));
    append_le(out, static_cast<std::uint8_t>(delta.truncate_to ? 1 : 0));
    append_le(out, delta.truncate_to.value_or(0));
    append_le(out, static_cast<std::uint32_t>(delta.updated.size()));
    append_le(out, static_cast<std::uint32_t>(delta.appended.size()));
    for (const auto& [index, r] : delta.updated) {
        append_le(out, index);
        const std::size_t at = out.size();
        out.resize(at + record);
        encode_record(r, delta.sh_degree, out.data() + at);
    }
    for (const auto& r : delta.appended) {
        const std::size_t at = out.size();
        out.resize(at + record);
        encode_record(r, delta.sh_degree, out.data() + at);
    }
    return out;
}

DeltaSet decode_delta(ByteView payload) {
    if (payload.size() < kDeltaHeaderSize) throw Error(Errc::MalformedFrame, "Delta payload shorter than its header");
    const std::uint8_t* p = payload.data();
    DeltaSet d;
    d.base_version = load_le<std::uint64_t>(p);
    d.target_version = load_le<std::uint64_t>(p + 8);
    d.sh_degree = p[16];
    if (d.sh_degree > kMaxShDegree) throw Error(Errc::MalformedFrame, "Delta sh_degree out of range");
    const std::uint8_t has_truncate = p[17];
    if (has_truncate > 1) throw Error(Errc::MalformedFrame, "Delta truncate flag must be 0 or 1");
    const auto truncate_to = load_le<std::uint32_t>(p + 18);
    if (has_truncate) d.truncate_to = truncate_to;
    const std::uint64_t updated = load_le<std::uint32_t>(p + 22);
    const std::uint64_t appended = load_le<std::uint32_t>(p + 26);
    const std::uint64_t record = record_byte_size(d.sh_degree);
    if (payload.size() != kDeltaHeaderSize + updated * (4 + record) + appended * record) {
        throw Error(Errc::MalformedFrame, "Delta payload length disagrees with its record counts");
    }
    p += kDeltaHeaderSize;
    d.updated.reserve(updated);
    for (std::uint64_t i = 0; i < updated; ++i) {
        const auto index = load_le<std::uint32_t>(p);
        d.updated.emplace_back(index, decode_record(p + 4, d.sh_degree));
        p += 4 + record;
    }
    d.appended.reserve(appended);
    for (std::uint64_t i = 0; i < appended; ++i) {
        d.appended.push_back(decode_record(p, d.sh_degree));
        p += record;
    }
    return d;
}

namespace {

bool differs(float a, float b, float epsilon) { return !(std::abs(a - b) <= epsilon); }

bool record_differs(const SplatRecord& a, const SplatRecord& b, float epsilon) {
    for (int i = 0; i < 3; ++i) {
        if (differs(a.position[i], b.position[i], epsilon) || differs(a.f_dc[i], b.f_dc[i], epsilon) ||
            differs(a.raw_log_scale[i], b.raw_log_scale[i], epsilon)) {
            return true;
        }
    }
    for (int i = 0; i < 4; ++i) {
        if (differs(a.raw_rotation[i], b.raw_rotation[i], epsilon)) return true;
    }
    if (differs(a.raw_opacity, b.raw_opacity, epsilon)) return true;
    if (a.f_rest.size() != b.f_rest.size()) return true;
    for (std::size_t i = 0; i < a.f_rest.size(); ++i) {
        if (differs(a.f_rest[i], b.f_rest[i], epsilon)) return true;
    }
    return false;
}

}  // namespace

DeltaSet diff_scenes(const SplatScene& old_scene, const SplatScene& new_scene, float epsilon) {
    if (!(old_scene.version < new_scene.version)) {
        throw Error(Errc::VersionOrder, "old version " + std::to_string(old_scene.version) + " is not before new " +
                                            std::to_string(new_scene.version));
    }
    DeltaSet d;
    d.base_version = old_scene.version;
    d.target_version = new_scene.version;
    d.sh_degree = new_scene.sh_degree;
    if (old_scene.sh_degree != new_scene.sh_degree) {
        // Records of a different width cannot be patched in place.
        d.truncate_to = 0;
        d.appended = new_scene.splats;
        return d;
    }
    const std::size_t common = std::min(old_scene.size(), new_scene.size());
    for (std::size_t i = 0; i < common; ++i) {
        if (record_differs(old_scene.splats[i], new_scene.splats[i], epsilon)) {
            d.updated.emplace_back(static_cast<std::uint32_t>(i), new_scene.splats[i]);
        }
    }
    if (new_scene.size() < old_scene.size()) d.truncate_to = static_cast<std::uint32_t>(new_scene.size());
    d.appended.assign(new_scene.splats.begin() + static_cast<std::ptrdiff_t>(common), new_scene.splats.end());
    return d;
}

SplatScene apply_delta_set(const SplatScene& scene, const DeltaSet& delta) {
    if (delta.base_version != scene.version) {
        throw Error(Errc::VersionMismatch, "delta base " + std::to_string(delta.base_version) + " does not match scene " +
                                               std::to_string(scene.version));
    }
    if (!(delta.base_version < delta.target_version)) throw Error(Errc::VersionOrder, "delta does not advance version");

    const bool degree_change = delta.sh_degree != scene.sh_degree;
    if (degree_change && (!delta.updated.empty() || delta.truncate_to.value_or(1) != 0)) {
        throw Error(Errc::InconsistentShDegree, "degree change requires truncate_to = 0 and no updates");
    }
    const std::size_t rest = sh_rest_count(delta.sh_degree);

    SplatScene next;
    next.version = delta.target_version;
    next.sh_degree = delta.sh_degree;
    next.splats = scene.splats;
    std::int64_t previous = -1;
    for (const auto& [index, record] : delta.updated) {
        if (static_cast<std::int64_t>(index) <= previous) {
            throw Error(Errc::IndexOutOfRange, "updated indices must be strictly increasing");
        }
        if (index >= next.splats.size()) {
            throw Error(Errc::IndexOutOfRange, "updated index " + std::to_string(index) + " >= base size " +
                                                   std::to_string(next.splats.size()));
        }
        if (record.f_rest.size() != rest) throw Error(Errc::InconsistentShDegree, "updated record width");
        previous = index;
        next.splats[index] = record;
    }
    if (delta.truncate_to) {
        if (*delta.truncate_to > next.splats.size()) {
            throw Error(Errc::IndexOutOfRange, "truncate_to exceeds base size");
        }
        next.splats.resize(*delta.truncate_to);
    }
    for (const auto& record : delta.appended) {
        if (record.f_rest.size() != rest) throw Error(Errc::InconsistentShDegree, "appended record width");
        next.splats.push_back(record);
    }
    refresh_bounds(next);
    return next;
}

// ---- snapshots ------------------------------------------------------------

std::vector<ProtocolFrame> chunk_snapshot(ByteView ply_bytes, std::size_t chunk_size, std::uint64_t scene_version,
                                          int sh_degree, std::uint64_t splat_count) {
    if (chunk_size == 0) throw Error(Errc::BadRange, "chunk_size must be at least 1");
    const std::size_t chunks = (ply_bytes.size() + chunk_size - 1) / chunk_size;
    std::vector<ProtocolFrame> frames;
    frames.reserve(chunks + 2);

    ProtocolFrame begin;
    begin.type = FrameType::SnapshotBegin;
    begin.scene_version = scene_version;
    begin.payload = encode_snapshot_begin({static_cast<std::uint32_t>(chunks), ply_bytes.size(),
                                           static_cast<std::uint8_t>(sh_degree), splat_count});
    frames.push_back(std::move(begin));

    for (std::size_t i = 0; i < chunks; ++i) {
        ProtocolFrame chunk;
        chunk.type = FrameType::SnapshotChunk;
        chunk.scene_version = scene_version;
        const ByteView slice = ply_bytes.subspan(i * chunk_size, std::min(chunk_size, ply_bytes.size() - i * chunk_size));
        chunk.payload.reserve(4 + slice.size());
        append_le(chunk.payload, static_cast<std::uint32_t>(i));
        chunk.payload.insert(chunk.payload.end(), slice.begin(), slice.end());
        frames.push_back(std::move(chunk));
    }

    ProtocolFrame end;
    end.type = FrameType::SnapshotEnd;
    end.scene_version = scene_version;
    frames.push_back(std::move(end));
    return frames;
}

void SnapshotAssembler::reset() noexcept {
    active_ = false;
    next_chunk_ = 0;
    data_.clear();
    data_.shrink_to_fit();
}

std::optional<Bytes> SnapshotAssembler::feed(const ProtocolFrame& frame) {
    switch (frame.type) {
        case FrameType::SnapshotBegin: {
            const SnapshotBegin begin = decode_snapshot_begin(frame.payload);
            reset();
            active_ = true;
            version_ = frame.scene_version;
            begin_ = begin;
            // Reserve no more than the bytes chunks could actually carry.
            data_.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(begin.total_bytes, std::uint64_t{1} << 26)));
            return std::nullopt;
        }
        case FrameType::SnapshotChunk: {
            if (!active_) throw Error(Errc::UnexpectedFrame, "SnapshotChunk outside a snapshot");
            if (frame.scene_version != version_) throw Error(Errc::UnexpectedFrame, "chunk from another snapshot");
            const std::uint32_t index = chunk_index_of(frame.payload);
            if (index != next_chunk_) {
                throw Error(Errc::ChunkGap, "missing chunk " + std::to_string(next_chunk_) + " (received chunk " +
                                                std::to_string(index) + ")");
            }
            if (data_.size() + frame.payload.size() - 4 > begin_.total_bytes) {
                throw Error(Errc::LengthMismatch, "chunks exceed declared total_bytes");
            }
            data_.insert(data_.end(), frame.payload.begin() + 4, frame.payload.end());
            ++next_chunk_;
            return std::nullopt;
        }
        case FrameType::SnapshotEnd: {
            if (!active_) throw Error(Errc::UnexpectedFrame, "SnapshotEnd outside a snapshot");
            if (frame.scene_version != version_) throw Error(Errc::UnexpectedFrame, "end of another snapshot");
            if (next_chunk_ != begin_.total_chunks) {
                throw Error(Errc::ChunkGap, "missing chunk " + std::to_string(next_chunk_) + " of " +
                                                std::to_string(begin_.total_chunks));
            }
            if (data_.size() != begin_.total_bytes) {
                throw Error(Errc::LengthMismatch, "reassembled " + std::to_string(data_.size()) + " bytes, expected " +
                                                      std::to_string(begin_.total_bytes));
            }
            Bytes out = std::move(data_);
            reset();
            return out;
        }
        default: throw Error(Errc::UnexpectedFrame, std::string(frame_type_name(frame.type)) + " is not a snapshot frame");
    }
}

Bytes reassemble(std::span<const ProtocolFrame> frames) {
    if (frames.empty() || frames.front().type != FrameType::SnapshotBegin) {
        throw Error(Errc::UnexpectedFrame, "snapshot must start with SnapshotBegin");
    }
    SnapshotAssembler assembler;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (i > 0 && frames[i].type == FrameType::SnapshotBegin) {
            throw Error(Errc::UnexpectedFrame, "second SnapshotBegin inside one snapshot");
        }
        if (auto done = assembler.feed(frames[i])) {
            if (i + 1 != frames.size()) throw Error(Errc::UnexpectedFrame, "frames after SnapshotEnd");
            return std::move(*done);
        }
    }
    throw Error(Errc::ChunkGap, "snapshot ends without SnapshotEnd after chunk " +
                                    std::to_string(assembler.chunks_received()));
}

SceneReplica::Event SceneReplica::apply(const ProtocolFrame& frame) {
    switch (frame.type) {
        case FrameType::SnapshotBegin:
        case FrameType::SnapshotChunk:
        case FrameType::SnapshotEnd: {
            auto done = assembler_.feed(frame);
            if (!done) return Event::None;
            SplatScene next = parse_ply(*done);
            next.version = frame.scene_version;
            scene_ = std::move(next);
            last_snapshot_ = std::move(*done);
            return Event::SceneReplaced;
        }
        case FrameType::Delta: {
            SplatScene next = apply_delta_set(scene_, decode_delta(frame.payload));
            scene_ = std::move(next);
            return Event::SceneReplaced;
        }
        case FrameType::PoiSet: {
            try {
                pois_ = nlohmann::json::parse(as_chars(frame.payload)).get<PoiSet>();
            } catch (const nlohmann::json::exception& e) {
                throw Error(Errc::MalformedFrame, std::string("PoiSet payload: ") + e.what());
            }
            return Event::PoisReplaced;
        }
        case FrameType::Ack: return Event::Acked;
        case FrameType::Error: last_error_ = decode_error_payload(frame.payload); return Event::ServerError;
        case FrameType::Subscribe: break;
    }
    throw Error(Errc::UnexpectedFrame, std::string(frame_type_name(frame.type)) + " is not a server frame");
}

}  // namespace splat
