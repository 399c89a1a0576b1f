#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace splat {

/// Every typed failure the library can report. The enumerator name is the
/// stable, user-visible identifier (see `errc_name`).
enum class Errc {
    // splat-model
    NonFiniteInput,
    ZeroQuaternion,
    EmptyScene,
    // ply-io
    BadMagic,
    UnsupportedFormat,
    MalformedHeader,
    MissingProperty,
    TruncatedBody,
    TooManyVertices,
    InconsistentShDegree,
    // wim-transform
    DegenerateGrip,
    // poi-layers
    InvalidPoi,
    // depth-sort / ref-render
    SingularView,
    BadRange,
    BehindCamera,
    InvalidCamera,
    // stream-protocol
    BadVersion,
    UnknownFrameType,
    MalformedFrame,
    CrcMismatch,
    Truncated,
    OversizePayload,
    VersionOrder,
    VersionMismatch,
    IndexOutOfRange,
    ChunkGap,
    LengthMismatch,
    UnexpectedFrame,
    // scene-server
    ParseFailed,
    TooManyClients,
    // bench
    EmptySamples,
};

constexpr std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::NonFiniteInput: return "NonFiniteInput";
        case Errc::ZeroQuaternion: return "ZeroQuaternion";
        case Errc::EmptyScene: return "EmptyScene";
        case Errc::BadMagic: return "BadMagic";
        case Errc::UnsupportedFormat: return "UnsupportedFormat";
        case Errc::MalformedHeader: return "MalformedHeader";
        case Errc::MissingProperty: return "MissingProperty";
        case Errc::TruncatedBody: return "TruncatedBody";
        case Errc::TooManyVertices: return "TooManyVertices";
        case Errc::InconsistentShDegree: return "InconsistentShDegree";
        case Errc::DegenerateGrip: return "DegenerateGrip";
        case Errc::InvalidPoi: return "InvalidPoi";
        case Errc::SingularView: return "SingularView";
        case Errc::BadRange: return "BadRange";
        case Errc::BehindCamera: return "BehindCamera";
        case Errc::InvalidCamera: return "InvalidCamera";
        case Errc::BadVersion: return "BadVersion";
        case Errc::UnknownFrameType: return "UnknownFrameType";
        case Errc::MalformedFrame: return "MalformedFrame";
        case Errc::CrcMismatch: return "CrcMismatch";
        case Errc::Truncated: return "Truncated";
        case Errc::OversizePayload: return "OversizePayload";
        case Errc::VersionOrder: return "VersionOrder";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::IndexOutOfRange: return "IndexOutOfRange";
        case Errc::ChunkGap: return "ChunkGap";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::UnexpectedFrame: return "UnexpectedFrame";
        case Errc::ParseFailed: return "ParseFailed";
        case Errc::TooManyClients: return "TooManyClients";
        case Errc::EmptySamples: return "EmptySamples";
    }
    return "Unknown";
}

/// The single exception type thrown by the library. `what()` is
/// "<ErrcName>: <detail>".
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + (detail.empty() ? "" : ": " + detail)),
          code_(code) {}

    explicit Error(Errc code) : Error(code, std::string{}) {}

    Errc code() const noexcept { return code_; }
    std::string_view name() const noexcept { return errc_name(code_); }

private:
    Errc code_;
};

}  // namespace splat
