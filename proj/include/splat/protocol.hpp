#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splat/bytes.hpp"
#include "splat/model.hpp"
#include "splat/poi.hpp"

namespace splat {

// Frame layout, all integers little-endian:
//   0  magic "GSPT"        8  scene_version u64
//   4  version 0x01       16  payload_len u32
//   5  frame_type         20  payload_crc32 u32 (IEEE, payload only)
//   6  flags              24  payload
//   7  reserved 0x00
inline constexpr std::size_t kFrameHeaderSize = 24;
inline constexpr std::uint8_t kProtocolVersion = 0x01;
inline constexpr std::size_t kDefaultMaxPayload = std::size_t{4} << 20;
inline constexpr std::size_t kDefaultChunkSize = 262144;

enum class FrameType : std::uint8_t {
    SnapshotBegin = 0x01,
    SnapshotChunk = 0x02,
    SnapshotEnd = 0x03,
    Delta = 0x04,
    PoiSet = 0x05,
    Subscribe = 0x10,
    Ack = 0x11,
    Error = 0x7F,
};

std::string_view frame_type_name(FrameType type) noexcept;
bool is_known_frame_type(std::uint8_t value) noexcept;

struct ProtocolFrame {
    FrameType type = FrameType::Ack;
    std::uint8_t flags = 0;
    std::uint64_t scene_version = 0;
    Bytes payload;

    std::size_t wire_size() const noexcept { return kFrameHeaderSize + payload.size(); }
    bool operator==(const ProtocolFrame&) const = default;
};

std::uint32_t crc32(ByteView data) noexcept;

Bytes encode_frame(const ProtocolFrame& frame);
void append_frame(Bytes& out, const ProtocolFrame& frame);

/// Decodes the frame at the start of `bytes`, checking magic, version,
/// reserved byte, frame type, length and CRC. `consumed` receives the wire
/// size. Throws Truncated, BadMagic, BadVersion, MalformedFrame,
/// UnknownFrameType, OversizePayload or CrcMismatch.
ProtocolFrame decode_frame_prefix(ByteView bytes, std::size_t& consumed, std::size_t max_payload = kDefaultMaxPayload);

/// Decodes exactly one frame; trailing bytes are a MalformedFrame.
ProtocolFrame decode_frame(ByteView bytes, std::size_t max_payload = kDefaultMaxPayload);

/// Decodes a concatenated frame log. Errors carry the 0-based frame ordinal.
std::vector<ProtocolFrame> decode_frame_log(ByteView bytes, std::size_t max_payload = kDefaultMaxPayload);

// ---- payloads -------------------------------------------------------------

struct SnapshotBegin {
    std::uint32_t total_chunks = 0;
    std::uint64_t total_bytes = 0;
    std::uint8_t sh_degree = 0;
    std::uint64_t splat_count = 0;

    bool operator==(const SnapshotBegin&) const = default;
};

Bytes encode_snapshot_begin(const SnapshotBegin& begin);
SnapshotBegin decode_snapshot_begin(ByteView payload);

/// Chunk payload is chunk_index u32 followed by the slice bytes.
std::uint32_t chunk_index_of(ByteView payload);

struct ErrorPayload {
    std::uint16_t code = 0;
    std::string message;
};

Bytes encode_error_payload(const ErrorPayload& error);
ErrorPayload decode_error_payload(ByteView payload);

ProtocolFrame make_subscribe(std::uint64_t last_known_version);
std::uint64_t decode_subscribe(const ProtocolFrame& frame);
ProtocolFrame make_ack(std::uint64_t scene_version);
ProtocolFrame make_poi_frame(const PoiSet& set, std::uint64_t scene_version);
ProtocolFrame make_error_frame(std::uint16_t code, const std::string& message, std::uint64_t scene_version = 0);

// ---- deltas ---------------------------------------------------------------

/// Index-aligned difference between two scene versions. Application order:
/// updates (indices into the base), then truncation, then appends.
struct DeltaSet {
    std::uint64_t base_version = 0;
    std::uint64_t target_version = 0;
    int sh_degree = 0;
    std::vector<std::pair<std::uint32_t, SplatRecord>> updated;
    std::vector<SplatRecord> appended;
    std::optional<std::uint32_t> truncate_to;

    bool empty() const noexcept { return updated.empty() && appended.empty() && !truncate_to; }
    bool operator==(const DeltaSet&) const = default;
};

// Delta payload: base u64, target u64, sh_degree u8, has_truncate u8,
// truncate_to u32, updated_count u32, appended_count u32, then
// updated_count x (index u32, record) and appended_count x record, where a
// record is its canonical PLY body row.
inline constexpr std::size_t kDeltaHeaderSize = 30;

std::size_t encoded_delta_size(const DeltaSet& delta) noexcept;
Bytes encode_delta(const DeltaSet& delta);
DeltaSet decode_delta(ByteView payload);

/// Throws VersionOrder unless old.version < new.version. A record counts as
/// updated when any raw scalar differs by more than `epsilon`.
DeltaSet diff_scenes(const SplatScene& old_scene, const SplatScene& new_scene, float epsilon = 0.0f);

/// Builds the target scene aside; `scene` is never modified. Throws
/// VersionMismatch, VersionOrder, IndexOutOfRange or InconsistentShDegree.
SplatScene apply_delta_set(const SplatScene& scene, const DeltaSet& delta);

// ---- snapshots ------------------------------------------------------------

/// Begin + ceil(len / chunk_size) chunks + End, all stamped with `scene_version`.
std::vector<ProtocolFrame> chunk_snapshot(ByteView ply_bytes, std::size_t chunk_size, std::uint64_t scene_version,
                                          int sh_degree, std::uint64_t splat_count);

/// Incremental reassembly of one snapshot. A new Begin abandons any partial
/// snapshot.
class SnapshotAssembler {
public:
    /// Returns the completed PLY bytes on a valid SnapshotEnd. Throws ChunkGap,
    /// LengthMismatch or UnexpectedFrame.
    std::optional<Bytes> feed(const ProtocolFrame& frame);

    bool in_progress() const noexcept { return active_; }
    std::uint64_t scene_version() const noexcept { return version_; }
    const SnapshotBegin& begin() const noexcept { return begin_; }
    std::uint32_t chunks_received() const noexcept { return next_chunk_; }
    void reset() noexcept;

private:
    bool active_ = false;
    std::uint64_t version_ = 0;
    SnapshotBegin begin_;
    std::uint32_t next_chunk_ = 0;
    Bytes data_;
};

/// Reassembles one complete Begin..End sequence.
Bytes reassemble(std::span<const ProtocolFrame> frames);

/// Client-side mirror of the server state fed by stream frames. The visible
/// scene only changes on a completed snapshot or an applied delta.
class SceneReplica {
public:
    enum class Event { None, SceneReplaced, PoisReplaced, Acked, ServerError };

    Event apply(const ProtocolFrame& frame);

    const SplatScene& scene() const noexcept { return scene_; }
    std::uint64_t version() const noexcept { return scene_.version; }
    const PoiSet& pois() const noexcept { return pois_; }
    bool snapshot_in_progress() const noexcept { return assembler_.in_progress(); }
    const std::optional<ErrorPayload>& last_error() const noexcept { return last_error_; }
    /// PLY bytes of the last completed snapshot.
    const Bytes& last_snapshot() const noexcept { return last_snapshot_; }

private:
    SplatScene scene_;
    PoiSet pois_;
    SnapshotAssembler assembler_;
    Bytes last_snapshot_;
    std::optional<ErrorPayload> last_error_;
};

}  // namespace splat
