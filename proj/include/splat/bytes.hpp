#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string_view>
#include <type_traits>
#include <vector>

namespace splat {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) noexcept {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string_view as_chars(ByteView b) noexcept {
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

template <typename T>
    requires std::is_trivially_copyable_v<T>
T load_le(const std::uint8_t* p) noexcept {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

template <typename T>
    requires std::is_trivially_copyable_v<T>
void store_le(std::uint8_t* p, T value) noexcept {
    std::memcpy(p, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
    }
}

template <typename T>
void append_le(Bytes& out, T value) {
    const std::size_t at = out.size();
    out.resize(at + sizeof(T));
    store_le(out.data() + at, value);
}

/// Reads a whole file; throws std::runtime_error on I/O failure.
Bytes read_file(const std::filesystem::path& path);

/// Writes bytes to `path` (truncating); throws std::runtime_error on failure.
void write_file(const std::filesystem::path& path, ByteView bytes);

}  // namespace splat
