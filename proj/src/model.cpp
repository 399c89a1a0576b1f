#include "splat/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "splat/error.hpp"

namespace splat {

int sh_degree_for_rest_count(std::size_t count) noexcept {
    for (int degree = 0; degree <= kMaxShDegree; ++degree) {
        if (sh_rest_count(degree) == count) return degree;
    }
    return -1;
}

float sigmoid(float x) noexcept { return 1.0f / (1.0f + std::exp(-x)); }

float logit(float p) noexcept { return std::log(p / (1.0f - p)); }

namespace {

bool all_finite(const SplatRecord& r) {
    if (!r.position.allFinite() || !r.raw_rotation.allFinite() || !r.raw_log_scale.allFinite() ||
        !std::isfinite(r.raw_opacity) || !r.f_dc.allFinite()) {
        return false;
    }
    return std::all_of(r.f_rest.begin(), r.f_rest.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace

ActivatedSplat activate(const SplatRecord& record) {
    if (!all_finite(record)) throw Error(Errc::NonFiniteInput, "splat record contains NaN or Inf");

    const double norm = record.raw_rotation.cast<double>().norm();
    if (norm < 1e-12) throw Error(Errc::ZeroQuaternion, "rotation quaternion has zero norm");

    ActivatedSplat out;
    out.position = record.position;
    const Eigen::Vector4d q = record.raw_rotation.cast<double>() / norm;
    out.rotation = Eigen::Quaternionf(static_cast<float>(q[0]), static_cast<float>(q[1]),
                                      static_cast<float>(q[2]), static_cast<float>(q[3]));
    out.rotation.normalize();

    // exp() of a large finite log-scale overflows; keep the activated extent finite.
    out.scale = record.raw_log_scale.array().exp().min(std::numeric_limits<float>::max()).matrix();
    out.scale = out.scale.cwiseMax(std::numeric_limits<float>::min());

    // Strictly inside (0,1) even where float sigmoid saturates.
    out.opacity = std::clamp(sigmoid(record.raw_opacity), std::nextafter(0.0f, 1.0f),
                             std::nextafter(1.0f, 0.0f));

    out.base_color = (0.5f + static_cast<float>(kShC0) * record.f_dc.array()).cwiseMax(0.0f).cwiseMin(1.0f).matrix();
    return out;
}

SplatRecord deactivate(const ActivatedSplat& splat) {
    SplatRecord r;
    r.position = splat.position;
    r.raw_rotation = Vec4f(splat.rotation.w(), splat.rotation.x(), splat.rotation.y(), splat.rotation.z());
    r.raw_log_scale = splat.scale.array().log().matrix();
    r.raw_opacity = logit(splat.opacity);
    r.f_dc = ((splat.base_color.array() - 0.5f) / static_cast<float>(kShC0)).matrix();
    return r;
}

Box3f position_bounds(std::span<const SplatRecord> splats) {
    Box3f box;  // default-constructed AlignedBox is empty
    for (const auto& s : splats) box.extend(s.position);
    return box;
}

Box3f compute_bounds(std::span<const SplatRecord> splats, float inflation) {
    if (splats.empty()) throw Error(Errc::EmptyScene, "cannot bound an empty scene");
    Box3f box;
    for (const auto& s : splats) {
        const float pad = inflation == 0.0f ? 0.0f : inflation * s.raw_log_scale.array().exp().maxCoeff();
        const Vec3f lo = (s.position.array() - pad).matrix();
        const Vec3f hi = (s.position.array() + pad).matrix();
        box.extend(Box3f(lo, hi));
    }
    return box;
}

Box3f compute_bounds(const SplatScene& scene, float inflation) { return compute_bounds(scene.splats, inflation); }

void refresh_bounds(SplatScene& scene) { scene.bounds = position_bounds(scene.splats); }

bool same_records(const SplatScene& a, const SplatScene& b) noexcept { return a.splats == b.splats; }

}  // namespace splat
