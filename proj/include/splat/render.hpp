#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "splat/bytes.hpp"
#include "splat/depth_sort.hpp"
#include "splat/error.hpp"
#include "splat/model.hpp"
#include "splat/poi.hpp"
#include "splat/wim.hpp"

namespace splat {

/// Rasterizer constants shared by every render path.
namespace raster {
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kTransmittanceMin = 1e-4;
inline constexpr double kDilation = 0.3;  ///< px^2 added to both diagonal terms
inline constexpr double kWindowSigmas = 3.0;
inline constexpr int kTileSize = 16;
}  // namespace raster

/// Pinhole camera. The view matrix maps world to camera space with +x right,
/// +y down and +z forward; pixel (u, v) = (fx x/z + cx, fy y/z + cy), and
/// the integer pixel index is the sample location.
template <typename Scalar>
struct CameraModel {
    using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

    Matrix4 view = Matrix4::Identity();
    Scalar fx = 100, fy = 100, cx = 50, cy = 50;
    int width = 100, height = 100;
    Scalar near = Scalar(0.01), far = Scalar(100);

    /// Throws InvalidCamera when the intrinsics or clip range are out of contract.
    void validate() const {
        if (!(fx > 0) || !(fy > 0) || width < 1 || height < 1 || !(near > 0) || !(far > near) ||
            !view.allFinite()) {
            throw Error(Errc::InvalidCamera, "camera needs fx,fy > 0, size >= 1 and far > near > 0");
        }
    }

    Vector3 position() const {
        const Eigen::Matrix<Scalar, 3, 3> r = view.template topLeftCorner<3, 3>();
        return -(r.transpose() * view.template topRightCorner<3, 1>());
    }

    static CameraModel look_at(const Vector3& eye, const Vector3& target, const Vector3& up, int width, int height,
                               Scalar fov_y_degrees, Scalar near = Scalar(0.01), Scalar far = Scalar(1000)) {
        const Vector3 forward = (target - eye).normalized();
        Vector3 right = forward.cross(up);
        if (right.norm() < Scalar(1e-9)) right = forward.cross(Vector3::UnitX());
        right.normalize();
        const Vector3 down = forward.cross(right);

        CameraModel cam;
        cam.view.setIdentity();
        cam.view.template block<1, 3>(0, 0) = right.transpose();
        cam.view.template block<1, 3>(1, 0) = down.transpose();
        cam.view.template block<1, 3>(2, 0) = forward.transpose();
        cam.view.template topRightCorner<3, 1>() = -(cam.view.template topLeftCorner<3, 3>() * eye);
        cam.width = width;
        cam.height = height;
        const Scalar half = std::tan(fov_y_degrees * Scalar(M_PI) / Scalar(360));
        cam.fy = (Scalar(height) / 2) / half;
        cam.fx = cam.fy;
        cam.cx = Scalar(width) / 2;
        cam.cy = Scalar(height) / 2;
        cam.near = near;
        cam.far = far;
        return cam;
    }
};

using Camera = CameraModel<double>;

template <typename Scalar>
struct Projected2D {
    Eigen::Matrix<Scalar, 2, 1> mean;
    Eigen::Matrix<Scalar, 2, 2> covariance;  ///< includes the isotropic dilation
    Scalar depth;
};

/// R diag(s)^2 R^T.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> covariance_3d(const Eigen::Quaternion<Scalar>& rotation,
                                          const Eigen::Matrix<Scalar, 3, 1>& scale) {
    const Eigen::Matrix<Scalar, 3, 3> m = rotation.toRotationMatrix() * scale.asDiagonal();
    return m * m.transpose();
}

/// Perspective Jacobian of (x, y, z) -> (fx x/z + cx, fy y/z + cy).
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 3> projection_jacobian(const Eigen::Matrix<Scalar, 3, 1>& p, Scalar fx, Scalar fy) {
    const Scalar inv_z = Scalar(1) / p.z();
    Eigen::Matrix<Scalar, 2, 3> j;
    j << fx * inv_z, 0, -fx * p.x() * inv_z * inv_z,  //
        0, fy * inv_z, -fy * p.y() * inv_z * inv_z;
    return j;
}

/// EWA splat projection: Sigma2D = J W Sigma3D W^T J^T + dilation * I.
/// Throws BehindCamera when the splat center is nearer than `cam.near`.
template <typename Scalar>
Projected2D<Scalar> project_splat(const ActivatedSplat& splat, const CameraModel<Scalar>& cam) {
    using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
    const Eigen::Matrix<Scalar, 3, 3> w = cam.view.template topLeftCorner<3, 3>();
    const Vector3 p = w * splat.position.template cast<Scalar>() + cam.view.template topRightCorner<3, 1>();
    if (!(p.z() >= cam.near)) throw Error(Errc::BehindCamera, "splat center is behind the near plane");

    const Eigen::Matrix<Scalar, 3, 3> sigma =
        covariance_3d<Scalar>(splat.rotation.template cast<Scalar>(), splat.scale.template cast<Scalar>());
    const Eigen::Matrix<Scalar, 2, 3> jw = projection_jacobian<Scalar>(p, cam.fx, cam.fy) * w;

    Projected2D<Scalar> out;
    out.mean = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
    out.covariance = jw * sigma * jw.transpose();
    out.covariance(0, 1) = out.covariance(1, 0) = (out.covariance(0, 1) + out.covariance(1, 0)) / 2;
    out.covariance.diagonal().array() += Scalar(raster::kDilation);
    out.depth = p.z();
    return out;
}

/// Evaluates view-dependent color up to `degree` for one channel-major
/// coefficient layout; `dir` is a unit vector in the splat's frame.
Vec3f eval_sh_color(const SplatRecord& record, int degree, const Vec3d& dir);

/// One splat ready for compositing.
struct ScreenSplat {
    Vec2d mean;
    Eigen::Matrix2d conic;  ///< inverse projected covariance
    double opacity = 0;
    Vec3f color = Vec3f::Zero();
    int x_min = 0, x_max = -1, y_min = 0, y_max = -1;  ///< inclusive pixel window, clipped
};

struct RenderImage {
    int width = 0;
    int height = 0;
    std::vector<Vec3f> color;
    std::vector<float> alpha;

    RenderImage() = default;
    RenderImage(int w, int h)
        : width(w), height(h), color(static_cast<std::size_t>(w) * h, Vec3f::Zero()), alpha(color.size(), 0.0f) {}

    std::size_t index(int x, int y) const noexcept { return static_cast<std::size_t>(y) * width + x; }
    bool operator==(const RenderImage&) const = default;
};

struct RenderOptions {
    unsigned threads = 1;
    /// Sort key width; 32 keeps ties (and thus input-order dependence) to exactly equal depths.
    int key_bits = 32;
    /// Also drop splats whose centers project well outside the image.
    bool frustum_cull = false;
    int poi_marker_px = 5;
};

struct PoiOverlay {
    std::vector<Poi> pois;
    LayerState layers;
};

/// Activates every record and maps it through the WIM pose (if any).
std::vector<ActivatedSplat> prepare_splats(const SplatScene& scene, const std::optional<WimTransformd>& wim);

/// Depth-transform stage: view depths with near-plane (and optional frustum) culling.
DepthBuffer frame_depths(std::span<const ActivatedSplat> splats, const Camera& cam, bool frustum_cull);

/// Projection stage: sorted splats to screen space, colors evaluated toward the camera.
std::vector<ScreenSplat> project_sorted(const SplatScene& scene, std::span<const ActivatedSplat> splats,
                                        std::span<const std::uint32_t> order, const Camera& cam,
                                        const std::optional<WimTransformd>& wim);

/// Composites one pixel over `candidates` (indices into `splats`, front to
/// back). When `trace` is given, the transmittance after each contributing
/// splat is appended.
void composite_pixel(std::span<const ScreenSplat> splats, std::span<const std::uint32_t> candidates, int x, int y,
                     Vec3f& color, float& alpha, std::vector<double>* trace = nullptr);

/// Compositing stage over tiles; bit-identical for any thread count.
RenderImage composite(std::span<const ScreenSplat> splats, int width, int height, unsigned threads = 1);

/// Per-pixel transmittance sequence for pixel (x, y) in a full render.
std::vector<double> transmittance_trace(const SplatScene& scene, const Camera& cam, int x, int y,
                                        const RenderOptions& options = {});

/// Full front-to-back render with optional WIM pose and POI markers.
RenderImage render(const SplatScene& scene, const Camera& cam, const std::optional<WimTransformd>& wim = {},
                   const PoiOverlay* overlay = nullptr, const RenderOptions& options = {});

/// Camera in front of the scene (looking down +z at the center of its
/// position bounds) that fits the whole cloud; origin-facing for empty scenes.
Camera frame_scene(const SplatScene& scene, int width, int height, double fov_y_degrees = 60);

Vec3f hazard_color(const HazardClass& c);

/// Binary PPM (P6, maxval 255).
Bytes encode_ppm(const RenderImage& image);

}  // namespace splat
