#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace splat {

using Vec2f = Eigen::Vector2f;
using Vec3f = Eigen::Vector3f;
using Vec4f = Eigen::Vector4f;
using Vec2d = Eigen::Vector2d;
using Vec3d = Eigen::Vector3d;
using Mat3d = Eigen::Matrix3d;
using Mat4f = Eigen::Matrix4f;
using Mat4d = Eigen::Matrix4d;
using Box3f = Eigen::AlignedBox3f;

inline constexpr int kMaxShDegree = 3;

/// Degree-0 spherical-harmonic basis constant, 1 / (2 sqrt(pi)).
inline constexpr double kShC0 = 0.28209479177387814;

/// Number of f_rest coefficients (all three channels) for an SH degree.
constexpr std::size_t sh_rest_count(int degree) noexcept {
    return 3u * static_cast<std::size_t>((degree + 1) * (degree + 1) - 1);
}

/// Scalars per record in storage order (x,y,z, f_dc x3, f_rest, opacity, scale x3, rot x4).
constexpr std::size_t record_float_count(int degree) noexcept { return 14u + sh_rest_count(degree); }

/// Inverse of `sh_rest_count`; -1 when `count` matches no degree in 0..3.
int sh_degree_for_rest_count(std::size_t count) noexcept;

/// One Gaussian in storage form. `raw_rotation` is (w, x, y, z) as exported
/// in rot_0..rot_3. `f_rest` is channel-major: coefficient k (1-based) of
/// channel c sits at `c * ((degree+1)^2 - 1) + k - 1`.
struct SplatRecord {
    Vec3f position = Vec3f::Zero();
    Vec4f raw_rotation{1.0f, 0.0f, 0.0f, 0.0f};
    Vec3f raw_log_scale = Vec3f::Zero();
    float raw_opacity = 0.0f;
    Vec3f f_dc = Vec3f::Zero();
    std::vector<float> f_rest;

    bool operator==(const SplatRecord&) const = default;
};

/// Render-ready parameters derived from a SplatRecord.
struct ActivatedSplat {
    Vec3f position;
    Eigen::Quaternionf rotation;
    Vec3f scale;
    float opacity;
    Vec3f base_color;
};

struct SplatScene {
    std::vector<SplatRecord> splats;
    std::uint64_t version = 0;
    int sh_degree = 0;
    /// Tight box of splat positions; empty for an empty scene.
    Box3f bounds;

    bool empty() const noexcept { return splats.empty(); }
    std::size_t size() const noexcept { return splats.size(); }
};

float sigmoid(float x) noexcept;
float logit(float p) noexcept;

/// Maps storage parameters to render-ready values. Throws NonFiniteInput for
/// NaN/Inf fields and ZeroQuaternion when the rotation norm is below 1e-12.
ActivatedSplat activate(const SplatRecord& record);

/// Inverse of `activate` for the parameters it round-trips exactly enough to
/// re-activate (position, rotation, scale, opacity, unclamped base color).
SplatRecord deactivate(const ActivatedSplat& splat);

/// Tight axis-aligned box of a set of positions (empty box for no input).
Box3f position_bounds(std::span<const SplatRecord> splats);

/// Interaction proxy box: point bounds grown per splat by
/// `inflation * max(activated scale)`. Throws EmptyScene.
Box3f compute_bounds(std::span<const SplatRecord> splats, float inflation = 3.0f);
Box3f compute_bounds(const SplatScene& scene, float inflation = 3.0f);

/// Recomputes `scene.bounds` from positions.
void refresh_bounds(SplatScene& scene);

/// True when both scenes hold the same splat records in the same order.
bool same_records(const SplatScene& a, const SplatScene& b) noexcept;

}  // namespace splat
