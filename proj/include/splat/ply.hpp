#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "splat/bytes.hpp"
#include "splat/model.hpp"

namespace splat {

enum class PlyFormat { BinaryLittleEndian, Ascii };

enum class PlyScalar { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::size_t ply_scalar_size(PlyScalar type) noexcept;
std::string_view ply_scalar_name(PlyScalar type) noexcept;

struct PlyProperty {
    std::string name;
    PlyScalar type = PlyScalar::Float32;
};

struct PlyHeader {
    PlyFormat format = PlyFormat::BinaryLittleEndian;
    std::size_t vertex_count = 0;
    /// Properties of the vertex element, in file order.
    std::vector<PlyProperty> properties;
    /// Byte offset of the first body byte.
    std::size_t body_offset = 0;
};

struct PlyReadOptions {
    /// Headers declaring more vertices than this are rejected before allocating.
    std::size_t max_vertices = std::size_t{1} << 24;
};

struct PlyDocument {
    PlyHeader header;
    SplatScene scene;
    /// Vertex properties that were not part of the splat layout (e.g. nx, ny, nz).
    std::size_t ignored_properties = 0;
};

/// Parses a Gaussian-splat PLY (binary little-endian or ASCII). The returned
/// scene has version 0 and tight position bounds.
PlyDocument read_ply(ByteView bytes, const PlyReadOptions& options = {});

SplatScene parse_ply(ByteView bytes, const PlyReadOptions& options = {});

/// Emits binary little-endian PLY with the canonical property order
/// x,y,z,f_dc_0..2,f_rest_*,opacity,scale_0..2,rot_0..3 (all float32).
/// Throws InconsistentShDegree if a record's f_rest length disagrees with
/// the scene degree.
Bytes serialize_ply(const SplatScene& scene);

/// Canonical ASCII header for `vertex_count` records of `sh_degree`.
std::string canonical_ply_header(std::size_t vertex_count, int sh_degree);

/// Canonical little-endian float32 encoding of one record (the PLY body row),
/// `record_float_count(degree) * 4` bytes.
void encode_record(const SplatRecord& record, int sh_degree, std::uint8_t* out);
SplatRecord decode_record(const std::uint8_t* in, int sh_degree);

inline std::size_t record_byte_size(int sh_degree) noexcept { return 4 * record_float_count(sh_degree); }

}  // namespace splat
