#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "oracles/oracles.hpp"
#include "splat/model.hpp"

namespace testing {

inline splat::SplatRecord random_record(std::mt19937_64& rng, int degree) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    splat::SplatRecord r;
    r.position = splat::Vec3f(3 * n(rng), 3 * n(rng), 3 * n(rng));
    r.raw_rotation = splat::Vec4f(n(rng), n(rng), n(rng), n(rng));
    if (r.raw_rotation.norm() < 1e-3f) r.raw_rotation = splat::Vec4f(1, 0, 0, 0);
    r.raw_log_scale = splat::Vec3f(n(rng) - 2, n(rng) - 2, n(rng) - 2);
    r.raw_opacity = 2 * n(rng);
    r.f_dc = splat::Vec3f(n(rng), n(rng), n(rng));
    r.f_rest.resize(splat::sh_rest_count(degree));
    for (float& f : r.f_rest) f = 0.2f * n(rng);
    return r;
}

inline splat::SplatScene random_scene(std::mt19937_64& rng, std::size_t count, int degree, std::uint64_t version = 0) {
    splat::SplatScene s;
    s.sh_degree = degree;
    s.version = version;
    for (std::size_t i = 0; i < count; ++i) s.splats.push_back(random_record(rng, degree));
    if (count > 0) splat::refresh_bounds(s);
    return s;
}

/// Bitwise equality of every raw field.
inline bool records_bit_equal(const splat::SplatRecord& a, const splat::SplatRecord& b) {
    for (int k = 0; k < 3; ++k) {
        if (!oracle::same_bits(a.position[k], b.position[k]) || !oracle::same_bits(a.raw_log_scale[k], b.raw_log_scale[k]) ||
            !oracle::same_bits(a.f_dc[k], b.f_dc[k]))
            return false;
    }
    for (int k = 0; k < 4; ++k) {
        if (!oracle::same_bits(a.raw_rotation[k], b.raw_rotation[k])) return false;
    }
    if (!oracle::same_bits(a.raw_opacity, b.raw_opacity) || a.f_rest.size() != b.f_rest.size()) return false;
    for (std::size_t k = 0; k < a.f_rest.size(); ++k) {
        if (!oracle::same_bits(a.f_rest[k], b.f_rest[k])) return false;
    }
    return true;
}

inline bool scenes_bit_equal(const splat::SplatScene& a, const splat::SplatScene& b) {
    if (a.size() != b.size() || a.sh_degree != b.sh_degree) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!records_bit_equal(a.splats[i], b.splats[i])) return false;
    }
    return true;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("splatlink_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
