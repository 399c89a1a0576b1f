#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "splat/error.hpp"

namespace splat {

/// Pose of the miniature map in user space: p_user = translation + rotation * (scale * p_map).
template <typename Scalar>
struct WimTransform {
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    using Quaternion = Eigen::Quaternion<Scalar>;

    Vector3 translation = Vector3::Zero();
    Quaternion rotation = Quaternion::Identity();
    Scalar scale = Scalar(1);

    static WimTransform identity() { return {}; }

    Vector3 apply(const Vector3& p) const { return translation + rotation * (scale * p); }

    bool operator==(const WimTransform& o) const {
        return translation == o.translation && rotation.coeffs() == o.rotation.coeffs() && scale == o.scale;
    }
};

/// Two pointer positions at the previous and current input sample.
template <typename Scalar>
struct GripPair {
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    Vector3 left_prev, right_prev, left_curr, right_curr;
};

/// Similarity about a pivot: p' = pivot + rotation * (scale * (p - pivot)) + translation.
template <typename Scalar>
struct TransformDelta {
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    using Quaternion = Eigen::Quaternion<Scalar>;

    Scalar scale = Scalar(1);
    Quaternion rotation = Quaternion::Identity();
    Vector3 translation = Vector3::Zero();
    Vector3 pivot = Vector3::Zero();

    Vector3 apply(const Vector3& p) const { return pivot + rotation * (scale * (p - pivot)) + translation; }
};

template <typename Scalar>
struct WimLimits {
    Scalar scale_min = Scalar(0.01);
    Scalar scale_max = Scalar(100);
    /// Minimum inter-pointer distance (meters) for a solvable grip.
    Scalar grip_epsilon = Scalar(1e-4);
    /// Pose restored by `reset`; identity when unset.
    std::optional<WimTransform<Scalar>> home;
};

/// Shortest-arc rotation taking direction `from` to direction `to` (neither
/// needs to be normalized). For antiparallel inputs the axis is the
/// smallest-index basis vector with |cos| < 0.9 to `from`, orthogonalized.
template <typename Scalar>
Eigen::Quaternion<Scalar> minimal_rotation(const Eigen::Matrix<Scalar, 3, 1>& from,
                                           const Eigen::Matrix<Scalar, 3, 1>& to) {
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    const Vector3 a = from.normalized();
    const Vector3 b = to.normalized();
    const Vector3 half = a + b;
    const Scalar half_norm = half.norm();
    if (half_norm < Scalar(1e-6)) {
        Vector3 axis = Vector3::Zero();
        for (int k = 0; k < 3; ++k) {
            if (std::abs(a[k]) < Scalar(0.9)) {
                const Vector3 basis = Vector3::Unit(k);
                axis = (basis - basis.dot(a) * a).normalized();
                break;
            }
        }
        return Eigen::Quaternion<Scalar>(Scalar(0), axis.x(), axis.y(), axis.z());
    }
    // Quaternion from a to the half-vector h: (a.h, a x h), unit since |a|=|h|=1.
    const Vector3 h = half / half_norm;
    const Vector3 v = a.cross(h);
    Eigen::Quaternion<Scalar> q(a.dot(h), v.x(), v.y(), v.z());
    q.normalize();
    return q;
}

/// Solves the similarity that carries the previous two-pointer grip onto the
/// current one: uniform scale from the distance ratio, minimal rotation of
/// the inter-pointer vector, translation of the midpoint. Throws
/// DegenerateGrip when either inter-pointer distance is within epsilon.
template <typename Scalar>
TransformDelta<Scalar> solve_grip(const GripPair<Scalar>& grip, Scalar epsilon = Scalar(1e-4)) {
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    const Vector3 prev = grip.right_prev - grip.left_prev;
    const Vector3 curr = grip.right_curr - grip.left_curr;
    const Scalar prev_len = prev.norm();
    const Scalar curr_len = curr.norm();
    if (!(prev_len > epsilon)) throw Error(Errc::DegenerateGrip, "pointers coincide in the previous sample");
    if (!(curr_len > epsilon)) throw Error(Errc::DegenerateGrip, "pointers coincide in the current sample");

    TransformDelta<Scalar> delta;
    delta.scale = curr_len / prev_len;
    delta.rotation = minimal_rotation<Scalar>(prev, curr);
    delta.pivot = (grip.left_prev + grip.right_prev) / Scalar(2);
    const Vector3 curr_mid = (grip.left_curr + grip.right_curr) / Scalar(2);
    // The pivot is the previous midpoint, so its image before translation is itself.
    delta.translation = curr_mid - delta.pivot;
    return delta;
}

/// A one-pointer drag expressed as a grip: the synthetic anchor keeps a fixed
/// offset from the pointer, so the solve is translation-only.
template <typename Scalar>
GripPair<Scalar> single_pointer_grip(const Eigen::Matrix<Scalar, 3, 1>& prev,
                                     const Eigen::Matrix<Scalar, 3, 1>& curr) {
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    const Vector3 offset = Vector3::UnitX();
    return {prev, prev + offset, curr, curr + offset};
}

/// Composes `delta` after `state` (delta acts in user space). The resulting
/// scale is clamped to the limits; the delta's scale is reduced to match so
/// that the pivot's image is unchanged by the clamp.
template <typename Scalar>
WimTransform<Scalar> apply_delta(const WimTransform<Scalar>& state, const TransformDelta<Scalar>& delta,
                                 const WimLimits<Scalar>& limits = {}) {
    const Scalar wanted = state.scale * delta.scale;
    const Scalar clamped = std::clamp(wanted, limits.scale_min, limits.scale_max);
    const Scalar effective = clamped / state.scale;

    WimTransform<Scalar> next;
    next.scale = clamped;
    next.rotation = (delta.rotation * state.rotation).normalized();
    next.translation = delta.pivot + delta.rotation * (effective * (state.translation - delta.pivot)) + delta.translation;
    return next;
}

template <typename Scalar>
WimTransform<Scalar> reset(const WimTransform<Scalar>& /*state*/, const WimLimits<Scalar>& limits = {}) {
    return limits.home.value_or(WimTransform<Scalar>::identity());
}

template <typename Scalar>
using RowMatrix4 = Eigen::Matrix<Scalar, 4, 4, Eigen::RowMajor>;

/// T(translation) * R(rotation) * S(scale).
template <typename Scalar>
RowMatrix4<Scalar> to_matrix(const WimTransform<Scalar>& state) {
    RowMatrix4<Scalar> m = RowMatrix4<Scalar>::Identity();
    m.template topLeftCorner<3, 3>() = state.rotation.toRotationMatrix() * state.scale;
    m.template topRightCorner<3, 1>() = state.translation;
    return m;
}

template <typename Scalar>
RowMatrix4<Scalar> to_matrix(const TransformDelta<Scalar>& delta) {
    RowMatrix4<Scalar> m = RowMatrix4<Scalar>::Identity();
    const Eigen::Matrix<Scalar, 3, 3> linear = delta.rotation.toRotationMatrix() * delta.scale;
    m.template topLeftCorner<3, 3>() = linear;
    m.template topRightCorner<3, 1>() = delta.pivot - linear * delta.pivot + delta.translation;
    return m;
}

using WimTransformf = WimTransform<float>;
using WimTransformd = WimTransform<double>;
using GripPaird = GripPair<double>;
using TransformDeltad = TransformDelta<double>;
using WimLimitsd = WimLimits<double>;

}  // namespace splat
