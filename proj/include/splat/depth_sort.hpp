#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splat/model.hpp"

namespace splat {

/// View-space depths (camera looks down +z) with a near-plane cull mask.
struct DepthBuffer {
    std::vector<float> depth;
    std::vector<std::uint8_t> culled;  ///< 1 = behind the near plane or non-finite
    std::size_t culled_count = 0;
};

/// depth_i = (view * [p_i, 1]).z. Throws SingularView for a non-invertible view.
DepthBuffer view_depths(std::span<const Vec3f> positions, const Mat4d& view, float near);
DepthBuffer view_depths(const SplatScene& scene, const Mat4d& view, float near);

/// Front-to-back order over the non-culled splats.
struct SortPermutation {
    std::vector<std::uint32_t> order;
    int key_bits = 16;
};

struct SortOptions {
    int key_bits = 16;  ///< 16 or 32
    /// Histogram/scatter shards; the permutation does not depend on this.
    unsigned threads = 1;
};

/// floor((clamp(d, near, far) - near) / (far - near) * (2^bits - 1)); NaN maps to the far key.
std::uint32_t quantize_depth(float depth, float near, float far, int key_bits) noexcept;

/// Stable counting/radix sort over quantized depth keys. `culled` may be empty
/// (nothing culled) or one flag per depth. Throws BadRange unless far > near
/// (the near > 0 requirement is the caller's camera contract).
SortPermutation sort_by_depth(std::span<const float> depths, std::span<const std::uint8_t> culled, float near,
                              float far, const SortOptions& options = {});

/// The same order reversed, for back-to-front consumers.
std::vector<std::uint32_t> back_to_front(const SortPermutation& perm);

}  // namespace splat
