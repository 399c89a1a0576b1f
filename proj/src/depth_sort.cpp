#include "splat/depth_sort.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "splat/error.hpp"

namespace splat {

DepthBuffer view_depths(std::span<const Vec3f> positions, const Mat4d& view, float near) {
    if (!view.allFinite() || std::abs(view.determinant()) < 1e-12) {
        throw Error(Errc::SingularView, "view matrix is not invertible");
    }
    DepthBuffer out;
    out.depth.resize(positions.size());
    out.culled.assign(positions.size(), 0);
    const Eigen::RowVector4d row = view.row(2);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Vec3f& p = positions[i];
        const double z = row[0] * p.x() + row[1] * p.y() + row[2] * p.z() + row[3];
        const auto d = static_cast<float>(z);
        out.depth[i] = d;
        if (!(d >= near) || !std::isfinite(d)) {
            out.culled[i] = 1;
            ++out.culled_count;
        }
    }
    return out;
}

DepthBuffer view_depths(const SplatScene& scene, const Mat4d& view, float near) {
    std::vector<Vec3f> positions;
    positions.reserve(scene.splats.size());
    for (const auto& s : scene.splats) positions.push_back(s.position);
    return view_depths(positions, view, near);
}

std::uint32_t quantize_depth(float depth, float near, float far, int key_bits) noexcept {
    const double max_key = key_bits >= 32 ? 4294967295.0 : static_cast<double>((std::uint64_t{1} << key_bits) - 1);
    if (std::isnan(depth)) return static_cast<std::uint32_t>(max_key);
    const double d = std::clamp(static_cast<double>(depth), static_cast<double>(near), static_cast<double>(far));
    const double t = (d - near) / (static_cast<double>(far) - near);
    return static_cast<std::uint32_t>(std::min(std::floor(t * max_key), max_key));
}

namespace {

constexpr std::size_t kRadix = 1u << 16;

// One stable counting-sort pass on 16-bit digits, sharded over contiguous
// input ranges. Offsets are laid out bucket-major then shard-major, so the
// output is identical for any shard count.
void counting_pass(const std::vector<std::uint32_t>& keys_in, const std::vector<std::uint32_t>& idx_in,
                   std::vector<std::uint32_t>& keys_out, std::vector<std::uint32_t>& idx_out, int shift,
                   unsigned shards) {
    const std::size_t n = keys_in.size();
    shards = std::max(1u, std::min<unsigned>(shards, static_cast<unsigned>(std::max<std::size_t>(1, n / 4096))));
    std::vector<std::vector<std::uint32_t>> hist(shards, std::vector<std::uint32_t>(kRadix, 0));
    auto range = [&](unsigned s) {
        return std::pair<std::size_t, std::size_t>{n * s / shards, n * (s + 1) / shards};
    };
    auto run = [&](auto&& body) {
        if (shards == 1) {
            body(0u);
            return;
        }
        std::vector<std::jthread> pool;
        pool.reserve(shards);
        for (unsigned s = 0; s < shards; ++s) pool.emplace_back(body, s);
    };

    run([&](unsigned s) {
        auto& h = hist[s];
        const auto [lo, hi] = range(s);
        for (std::size_t i = lo; i < hi; ++i) ++h[(keys_in[i] >> shift) & 0xFFFF];
    });

    std::uint32_t running = 0;
    for (std::size_t b = 0; b < kRadix; ++b) {
        for (unsigned s = 0; s < shards; ++s) {
            const std::uint32_t c = hist[s][b];
            hist[s][b] = running;
            running += c;
        }
    }

    keys_out.resize(n);
    idx_out.resize(n);
    run([&](unsigned s) {
        auto& offsets = hist[s];
        const auto [lo, hi] = range(s);
        for (std::size_t i = lo; i < hi; ++i) {
            const std::uint32_t at = offsets[(keys_in[i] >> shift) & 0xFFFF]++;
            keys_out[at] = keys_in[i];
            idx_out[at] = idx_in[i];
        }
    });
}

}  // namespace

SortPermutation sort_by_depth(std::span<const float> depths, std::span<const std::uint8_t> culled, float near,
                              float far, const SortOptions& options) {
    if (!(far > near)) {
        throw Error(Errc::BadRange, "far (" + std::to_string(far) + ") must exceed near (" + std::to_string(near) + ")");
    }
    if (options.key_bits != 16 && options.key_bits != 32) {
        throw Error(Errc::BadRange, "key_bits must be 16 or 32");
    }
    if (!culled.empty() && culled.size() != depths.size()) {
        throw Error(Errc::BadRange, "cull mask length differs from depth count");
    }

    std::vector<std::uint32_t> keys;
    std::vector<std::uint32_t> idx;
    keys.reserve(depths.size());
    idx.reserve(depths.size());
    for (std::size_t i = 0; i < depths.size(); ++i) {
        if (!culled.empty() && culled[i]) continue;
        keys.push_back(quantize_depth(depths[i], near, far, options.key_bits));
        idx.push_back(static_cast<std::uint32_t>(i));
    }

    SortPermutation perm;
    perm.key_bits = options.key_bits;
    std::vector<std::uint32_t> keys_tmp;
    counting_pass(keys, idx, keys_tmp, perm.order, 0, options.threads);
    if (options.key_bits == 32) {
        counting_pass(keys_tmp, perm.order, keys, idx, 16, options.threads);
        perm.order = std::move(idx);
    }
    return perm;
}

std::vector<std::uint32_t> back_to_front(const SortPermutation& perm) {
    return {perm.order.rbegin(), perm.order.rend()};
}

}  // namespace splat
