#include "splat/ply.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "splat/error.hpp"

namespace splat {

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    Bytes data(size);
    if (size > 0 && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
        throw std::runtime_error("cannot read " + path.string());
    }
    return data;
}

void write_file(const std::filesystem::path& path, ByteView bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::size_t ply_scalar_size(PlyScalar type) noexcept {
    switch (type) {
        case PlyScalar::Int8:
        case PlyScalar::UInt8: return 1;
        case PlyScalar::Int16:
        case PlyScalar::UInt16: return 2;
        case PlyScalar::Int32:
        case PlyScalar::UInt32:
        case PlyScalar::Float32: return 4;
        case PlyScalar::Float64: return 8;
    }
    return 0;
}

std::string_view ply_scalar_name(PlyScalar type) noexcept {
    switch (type) {
        case PlyScalar::Int8: return "char";
        case PlyScalar::UInt8: return "uchar";
        case PlyScalar::Int16: return "short";
        case PlyScalar::UInt16: return "ushort";
        case PlyScalar::Int32: return "int";
        case PlyScalar::UInt32: return "uint";
        case PlyScalar::Float32: return "float";
        case PlyScalar::Float64: return "double";
    }
    return "?";
}

namespace {

std::optional<PlyScalar> scalar_from_name(std::string_view name) {
    if (name == "char" || name == "int8") return PlyScalar::Int8;
    if (name == "uchar" || name == "uint8") return PlyScalar::UInt8;
    if (name == "short" || name == "int16") return PlyScalar::Int16;
    if (name == "ushort" || name == "uint16") return PlyScalar::UInt16;
    if (name == "int" || name == "int32") return PlyScalar::Int32;
    if (name == "uint" || name == "uint32") return PlyScalar::UInt32;
    if (name == "float" || name == "float32") return PlyScalar::Float32;
    if (name == "double" || name == "float64") return PlyScalar::Float64;
    return std::nullopt;
}

std::vector<std::string_view> split_words(std::string_view line) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) words.push_back(line.substr(start, i - start));
    }
    return words;
}

struct ElementDecl {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
    bool has_list = false;
};

struct ParsedHeader {
    PlyHeader header;
    std::vector<ElementDecl> elements;
    std::size_t vertex_element = 0;
};

constexpr std::size_t kMaxHeaderBytes = 1 << 20;

ParsedHeader parse_header(ByteView bytes, const PlyReadOptions& options) {
    const std::string_view text = as_chars(bytes);
    if (text.size() < 4 || text.substr(0, 3) != "ply" || (text[3] != '\n' && text[3] != '\r')) {
        throw Error(Errc::BadMagic, "input does not start with the 'ply' magic line");
    }

    ParsedHeader parsed;
    std::optional<PlyFormat> format;
    bool ended = false;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size() && pos < kMaxHeaderBytes) {
        const std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) break;
        std::string_view line = text.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = eol + 1;
        if (first) {
            first = false;
            continue;
        }
        const auto words = split_words(line);
        if (words.empty()) continue;
        const std::string_view keyword = words[0];
        if (keyword == "comment" || keyword == "obj_info") continue;
        if (keyword == "end_header") {
            ended = true;
            break;
        }
        if (keyword == "format") {
            if (words.size() != 3) throw Error(Errc::MalformedHeader, "bad format line");
            if (words[2] != "1.0") throw Error(Errc::UnsupportedFormat, "PLY version " + std::string(words[2]));
            if (words[1] == "binary_little_endian") {
                format = PlyFormat::BinaryLittleEndian;
            } else if (words[1] == "ascii") {
                format = PlyFormat::Ascii;
            } else {
                throw Error(Errc::UnsupportedFormat, std::string(words[1]));
            }
        } else if (keyword == "element") {
            if (words.size() != 3) throw Error(Errc::MalformedHeader, "bad element line");
            ElementDecl element;
            element.name = std::string(words[1]);
            const auto count_text = words[2];
            unsigned long long count = 0;
            const auto [ptr, ec] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
            if (ec != std::errc{} || ptr != count_text.data() + count_text.size()) {
                throw Error(Errc::MalformedHeader, "bad element count '" + std::string(count_text) + "'");
            }
            element.count = static_cast<std::size_t>(count);
            parsed.elements.push_back(std::move(element));
        } else if (keyword == "property") {
            if (parsed.elements.empty()) throw Error(Errc::MalformedHeader, "property before any element");
            auto& element = parsed.elements.back();
            if (words.size() >= 2 && words[1] == "list") {
                element.has_list = true;
                continue;
            }
            if (words.size() != 3) throw Error(Errc::MalformedHeader, "bad property line");
            const auto type = scalar_from_name(words[1]);
            if (!type) throw Error(Errc::MalformedHeader, "unknown property type '" + std::string(words[1]) + "'");
            for (const auto& existing : element.properties) {
                if (existing.name == words[2]) {
                    throw Error(Errc::MalformedHeader, "duplicate property '" + std::string(words[2]) + "'");
                }
            }
            element.properties.push_back({std::string(words[2]), *type});
        } else {
            throw Error(Errc::MalformedHeader, "unknown header keyword '" + std::string(keyword) + "'");
        }
    }
    if (!ended) throw Error(Errc::MalformedHeader, "missing end_header");
    if (!format) throw Error(Errc::MalformedHeader, "missing format line");

    const auto it = std::find_if(parsed.elements.begin(), parsed.elements.end(),
                                 [](const ElementDecl& e) { return e.name == "vertex"; });
    if (it == parsed.elements.end()) throw Error(Errc::MalformedHeader, "no vertex element");
    if (it->has_list) throw Error(Errc::UnsupportedFormat, "list properties in vertex element");
    parsed.vertex_element = static_cast<std::size_t>(it - parsed.elements.begin());
    for (std::size_t i = 0; i < parsed.vertex_element; ++i) {
        if (parsed.elements[i].count > 0 && parsed.elements[i].has_list) {
            throw Error(Errc::UnsupportedFormat, "list element before vertex element");
        }
    }
    if (it->count > options.max_vertices) {
        throw Error(Errc::TooManyVertices, std::to_string(it->count) + " vertices exceeds limit of " +
                                               std::to_string(options.max_vertices));
    }

    parsed.header.format = *format;
    parsed.header.vertex_count = it->count;
    parsed.header.properties = it->properties;
    parsed.header.body_offset = pos;
    return parsed;
}

// Where each vertex property lands in a SplatRecord.
enum class Slot : std::uint8_t { Ignored, Position, Dc, Rest, Opacity, Scale, Rotation };

struct Binding {
    Slot slot = Slot::Ignored;
    int index = 0;
    PlyScalar type = PlyScalar::Float32;
    std::size_t offset = 0;
};

std::optional<int> indexed_suffix(std::string_view name, std::string_view prefix) {
    if (name.size() <= prefix.size() || name.substr(0, prefix.size()) != prefix) return std::nullopt;
    const auto digits = name.substr(prefix.size());
    int value = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || value < 0) return std::nullopt;
    return value;
}

struct Layout {
    std::vector<Binding> bindings;
    std::size_t stride = 0;
    int sh_degree = 0;
    std::size_t ignored = 0;
};

Layout bind_properties(const std::vector<PlyProperty>& properties) {
    Layout layout;
    bool position[3] = {}, dc[3] = {}, scale[3] = {}, rotation[4] = {}, opacity = false;
    std::vector<int> rest_indices;
    for (const auto& prop : properties) {
        Binding b;
        b.type = prop.type;
        b.offset = layout.stride;
        layout.stride += ply_scalar_size(prop.type);
        const std::string_view name = prop.name;
        if (name == "x" || name == "y" || name == "z") {
            b.slot = Slot::Position;
            b.index = name[0] - 'x';
            position[b.index] = true;
        } else if (name == "opacity") {
            b.slot = Slot::Opacity;
            opacity = true;
        } else if (auto i = indexed_suffix(name, "f_dc_"); i && *i < 3) {
            b.slot = Slot::Dc;
            b.index = *i;
            dc[*i] = true;
        } else if (auto i = indexed_suffix(name, "f_rest_"); i && *i < static_cast<int>(sh_rest_count(kMaxShDegree))) {
            b.slot = Slot::Rest;
            b.index = *i;
            rest_indices.push_back(*i);
        } else if (auto i = indexed_suffix(name, "scale_"); i && *i < 3) {
            b.slot = Slot::Scale;
            b.index = *i;
            scale[*i] = true;
        } else if (auto i = indexed_suffix(name, "rot_"); i && *i < 4) {
            b.slot = Slot::Rotation;
            b.index = *i;
            rotation[*i] = true;
        } else {
            ++layout.ignored;
        }
        layout.bindings.push_back(b);
    }

    auto require = [](bool present, std::string_view name) {
        if (!present) throw Error(Errc::MissingProperty, std::string(name));
    };
    require(position[0], "x");
    require(position[1], "y");
    require(position[2], "z");
    for (int i = 0; i < 3; ++i) require(dc[i], "f_dc_" + std::to_string(i));
    require(opacity, "opacity");
    for (int i = 0; i < 3; ++i) require(scale[i], "scale_" + std::to_string(i));
    for (int i = 0; i < 4; ++i) require(rotation[i], "rot_" + std::to_string(i));

    std::sort(rest_indices.begin(), rest_indices.end());
    for (std::size_t i = 0; i < rest_indices.size(); ++i) {
        if (rest_indices[i] != static_cast<int>(i)) throw Error(Errc::MissingProperty, "f_rest_" + std::to_string(i));
    }
    layout.sh_degree = sh_degree_for_rest_count(rest_indices.size());
    if (layout.sh_degree < 0) {
        // A contiguous prefix that stops short of a degree boundary.
        std::size_t next = 0;
        for (int d = 0; d <= kMaxShDegree; ++d) {
            if (sh_rest_count(d) > rest_indices.size()) {
                next = sh_rest_count(d);
                break;
            }
        }
        throw Error(Errc::MissingProperty, "f_rest_" + std::to_string(rest_indices.size()) + " (degree needs " +
                                               std::to_string(next) + " rest coefficients)");
    }
    return layout;
}

float load_scalar(const std::uint8_t* p, PlyScalar type) noexcept {
    switch (type) {
        case PlyScalar::Int8: return static_cast<float>(load_le<std::int8_t>(p));
        case PlyScalar::UInt8: return static_cast<float>(load_le<std::uint8_t>(p));
        case PlyScalar::Int16: return static_cast<float>(load_le<std::int16_t>(p));
        case PlyScalar::UInt16: return static_cast<float>(load_le<std::uint16_t>(p));
        case PlyScalar::Int32: return static_cast<float>(load_le<std::int32_t>(p));
        case PlyScalar::UInt32: return static_cast<float>(load_le<std::uint32_t>(p));
        case PlyScalar::Float32: return load_le<float>(p);
        case PlyScalar::Float64: return static_cast<float>(load_le<double>(p));
    }
    return 0.0f;
}

void assign(SplatRecord& r, const Binding& b, float value) {
    switch (b.slot) {
        case Slot::Ignored: break;
        case Slot::Position: r.position[b.index] = value; break;
        case Slot::Dc: r.f_dc[b.index] = value; break;
        case Slot::Rest: r.f_rest[static_cast<std::size_t>(b.index)] = value; break;
        case Slot::Opacity: r.raw_opacity = value; break;
        case Slot::Scale: r.raw_log_scale[b.index] = value; break;
        case Slot::Rotation: r.raw_rotation[b.index] = value; break;
    }
}

bool is_canonical(const Layout& layout) {
    const std::size_t n = record_float_count(layout.sh_degree);
    if (layout.bindings.size() != n || layout.stride != 4 * n) return false;
    const auto rest = static_cast<int>(sh_rest_count(layout.sh_degree));
    std::size_t i = 0;
    auto expect = [&](Slot slot, int count) {
        for (int k = 0; k < count; ++k, ++i) {
            const auto& b = layout.bindings[i];
            if (b.slot != slot || b.index != k || b.type != PlyScalar::Float32) return false;
        }
        return true;
    };
    return expect(Slot::Position, 3) && expect(Slot::Dc, 3) && expect(Slot::Rest, rest) &&
           expect(Slot::Opacity, 1) && expect(Slot::Scale, 3) && expect(Slot::Rotation, 4);
}

std::size_t skip_ascii_lines(std::string_view text, std::size_t pos, std::size_t lines) {
    for (std::size_t i = 0; i < lines; ++i) {
        const std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) throw Error(Errc::TruncatedBody, "ascii element data ends early");
        pos = eol + 1;
    }
    return pos;
}

void read_ascii_body(std::string_view text, std::size_t pos, const Layout& layout, SplatScene& scene,
                     std::size_t count) {
    const char* cur = text.data() + pos;
    const char* const end = text.data() + text.size();
    auto next_token = [&](std::size_t row) -> float {
        while (cur < end && (*cur == ' ' || *cur == '\t' || *cur == '\n' || *cur == '\r')) ++cur;
        if (cur == end) throw Error(Errc::TruncatedBody, "ascii body ends at vertex " + std::to_string(row));
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(cur, end, value);
        if (ec == std::errc::result_out_of_range) {
            // from_chars leaves value untouched on overflow; fall back to strtod semantics.
            value = std::strtod(std::string(cur, static_cast<std::size_t>(ptr - cur)).c_str(), nullptr);
        } else if (ec != std::errc{}) {
            throw Error(Errc::MalformedHeader, "bad ascii number at vertex " + std::to_string(row));
        }
        cur = ptr;
        return static_cast<float>(value);
    };
    for (std::size_t row = 0; row < count; ++row) {
        auto& r = scene.splats[row];
        for (const auto& b : layout.bindings) assign(r, b, next_token(row));
    }
}

}  // namespace

PlyDocument read_ply(ByteView bytes, const PlyReadOptions& options) {
    ParsedHeader parsed = parse_header(bytes, options);
    const Layout layout = bind_properties(parsed.header.properties);

    PlyDocument doc;
    doc.header = parsed.header;
    doc.ignored_properties = layout.ignored;
    SplatScene& scene = doc.scene;
    scene.sh_degree = layout.sh_degree;
    const std::size_t count = parsed.header.vertex_count;
    const std::size_t rest = sh_rest_count(layout.sh_degree);

    std::size_t pos = parsed.header.body_offset;
    if (parsed.header.format == PlyFormat::BinaryLittleEndian) {
        for (std::size_t e = 0; e < parsed.vertex_element; ++e) {
            std::size_t stride = 0;
            for (const auto& p : parsed.elements[e].properties) stride += ply_scalar_size(p.type);
            const std::size_t available = bytes.size() - pos;
            if (stride != 0 && available / stride < parsed.elements[e].count) throw Error(Errc::TruncatedBody, "element '" + parsed.elements[e].name + "'");
            pos += parsed.elements[e].count * stride;
        }
        const std::size_t available = bytes.size() - pos;
        if (layout.stride != 0 && available / layout.stride < count) {
            throw Error(Errc::TruncatedBody, "header promises " + std::to_string(count) + " vertices (" +
                                                 std::to_string(count * layout.stride) + " bytes), body has " +
                                                 std::to_string(available) + " bytes");
        }
        scene.splats.resize(count);
        const std::uint8_t* body = bytes.data() + pos;
        if (is_canonical(layout)) {
            for (std::size_t i = 0; i < count; ++i) {
                scene.splats[i] = decode_record(body + i * layout.stride, layout.sh_degree);
            }
        } else {
            for (std::size_t i = 0; i < count; ++i) {
                auto& r = scene.splats[i];
                r.f_rest.assign(rest, 0.0f);
                const std::uint8_t* row = body + i * layout.stride;
                for (const auto& b : layout.bindings) {
                    if (b.slot != Slot::Ignored) assign(r, b, load_scalar(row + b.offset, b.type));
                }
            }
        }
    } else {
        const std::string_view text = as_chars(bytes);
        for (std::size_t e = 0; e < parsed.vertex_element; ++e) {
            pos = skip_ascii_lines(text, pos, parsed.elements[e].count);
        }
        // Each ascii value takes at least one digit plus a separator; reject absurd counts before allocating.
        const std::size_t tokens = count * layout.bindings.size();
        if (tokens > 0 && text.size() - pos < 2 * tokens - 1) {
            throw Error(Errc::TruncatedBody, "ascii body too short for " + std::to_string(count) + " vertices");
        }
        scene.splats.resize(count);
        for (auto& r : scene.splats) r.f_rest.assign(rest, 0.0f);
        read_ascii_body(text, pos, layout, scene, count);
    }
    refresh_bounds(scene);
    return doc;
}

SplatScene parse_ply(ByteView bytes, const PlyReadOptions& options) { return read_ply(bytes, options).scene; }

std::string canonical_ply_header(std::size_t vertex_count, int sh_degree) {
    std::ostringstream h;
    h << "ply\nformat binary_little_endian 1.0\nelement vertex " << vertex_count << '\n';
    for (const char* axis : {"x", "y", "z"}) h << "property float " << axis << '\n';
    for (int i = 0; i < 3; ++i) h << "property float f_dc_" << i << '\n';
    for (std::size_t i = 0; i < sh_rest_count(sh_degree); ++i) h << "property float f_rest_" << i << '\n';
    h << "property float opacity\n";
    for (int i = 0; i < 3; ++i) h << "property float scale_" << i << '\n';
    for (int i = 0; i < 4; ++i) h << "property float rot_" << i << '\n';
    h << "end_header\n";
    return h.str();
}

void encode_record(const SplatRecord& r, int sh_degree, std::uint8_t* out) {
    const std::size_t rest = sh_rest_count(sh_degree);
    if (r.f_rest.size() != rest) {
        throw Error(Errc::InconsistentShDegree, "record has " + std::to_string(r.f_rest.size()) +
                                                    " rest coefficients, degree " + std::to_string(sh_degree) +
                                                    " needs " + std::to_string(rest));
    }
    auto put = [&out](float v) {
        store_le(out, v);
        out += 4;
    };
    for (int i = 0; i < 3; ++i) put(r.position[i]);
    for (int i = 0; i < 3; ++i) put(r.f_dc[i]);
    for (float v : r.f_rest) put(v);
    put(r.raw_opacity);
    for (int i = 0; i < 3; ++i) put(r.raw_log_scale[i]);
    for (int i = 0; i < 4; ++i) put(r.raw_rotation[i]);
}

SplatRecord decode_record(const std::uint8_t* in, int sh_degree) {
    SplatRecord r;
    auto get = [&in]() {
        const float v = load_le<float>(in);
        in += 4;
        return v;
    };
    for (int i = 0; i < 3; ++i) r.position[i] = get();
    for (int i = 0; i < 3; ++i) r.f_dc[i] = get();
    r.f_rest.resize(sh_rest_count(sh_degree));
    for (float& v : r.f_rest) v = get();
    r.raw_opacity = get();
    for (int i = 0; i < 3; ++i) r.raw_log_scale[i] = get();
    for (int i = 0; i < 4; ++i) r.raw_rotation[i] = get();
    return r;
}

Bytes serialize_ply(const SplatScene& scene) {
    const std::string header = canonical_ply_header(scene.splats.size(), scene.sh_degree);
    const std::size_t stride = record_byte_size(scene.sh_degree);
    Bytes out(header.size() + stride * scene.splats.size());
    std::memcpy(out.data(), header.data(), header.size());
    std::uint8_t* body = out.data() + header.size();
    for (const auto& r : scene.splats) {
        encode_record(r, scene.sh_degree, body);
        body += stride;
    }
    return out;
}

}  // namespace splat
