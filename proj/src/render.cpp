#include "splat/render.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>

namespace splat {

namespace {

constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                            0.5462742152960396};
constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                            -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};

}  // namespace

Vec3f eval_sh_color(const SplatRecord& record, int degree, const Vec3d& dir) {
    const std::size_t per_channel = static_cast<std::size_t>((degree + 1) * (degree + 1) - 1);
    Vec3f out;
    const double x = dir.x(), y = dir.y(), z = dir.z();
    const double xx = x * x, yy = y * y, zz = z * z;
    for (int c = 0; c < 3; ++c) {
        auto sh = [&](int k) -> double {
            return k == 0 ? record.f_dc[c] : record.f_rest[static_cast<std::size_t>(c) * per_channel + k - 1];
        };
        double v = kShC0 * sh(0);
        if (degree > 0) {
            v += -kShC1 * y * sh(1) + kShC1 * z * sh(2) - kShC1 * x * sh(3);
        }
        if (degree > 1) {
            v += kShC2[0] * x * y * sh(4) + kShC2[1] * y * z * sh(5) + kShC2[2] * (2 * zz - xx - yy) * sh(6) +
                 kShC2[3] * x * z * sh(7) + kShC2[4] * (xx - yy) * sh(8);
        }
        if (degree > 2) {
            v += kShC3[0] * y * (3 * xx - yy) * sh(9) + kShC3[1] * x * y * z * sh(10) +
                 kShC3[2] * y * (4 * zz - xx - yy) * sh(11) + kShC3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh(12) +
                 kShC3[4] * x * (4 * zz - xx - yy) * sh(13) + kShC3[5] * z * (xx - yy) * sh(14) +
                 kShC3[6] * x * (xx - 3 * yy) * sh(15);
        }
        out[c] = static_cast<float>(std::clamp(v + 0.5, 0.0, 1.0));
    }
    return out;
}

std::vector<ActivatedSplat> prepare_splats(const SplatScene& scene, const std::optional<WimTransformd>& wim) {
    std::vector<ActivatedSplat> out;
    out.reserve(scene.splats.size());
    for (const auto& record : scene.splats) {
        ActivatedSplat s = activate(record);
        if (wim) {
            s.position = wim->apply(s.position.cast<double>()).cast<float>();
            s.rotation = (wim->rotation * s.rotation.cast<double>()).cast<float>();
            s.scale = (s.scale.cast<double>() * wim->scale).cast<float>();
        }
        out.push_back(s);
    }
    return out;
}

DepthBuffer frame_depths(std::span<const ActivatedSplat> splats, const Camera& cam, bool frustum_cull) {
    std::vector<Vec3f> positions;
    positions.reserve(splats.size());
    for (const auto& s : splats) positions.push_back(s.position);
    DepthBuffer depths = view_depths(positions, cam.view, static_cast<float>(cam.near));
    if (frustum_cull) {
        const double margin_x = 0.5 * cam.width;
        const double margin_y = 0.5 * cam.height;
        for (std::size_t i = 0; i < positions.size(); ++i) {
            if (depths.culled[i]) continue;
            const Vec3d p = (cam.view * positions[i].cast<double>().homogeneous()).head<3>();
            const double u = cam.fx * p.x() / p.z() + cam.cx;
            const double v = cam.fy * p.y() / p.z() + cam.cy;
            if (u < -margin_x || u > cam.width + margin_x || v < -margin_y || v > cam.height + margin_y) {
                depths.culled[i] = 1;
                ++depths.culled_count;
            }
        }
    }
    return depths;
}

std::vector<ScreenSplat> project_sorted(const SplatScene& scene, std::span<const ActivatedSplat> splats,
                                        std::span<const std::uint32_t> order, const Camera& cam,
                                        const std::optional<WimTransformd>& wim) {
    const Vec3d eye = cam.position();
    const Eigen::Quaterniond to_scene = wim ? wim->rotation.conjugate() : Eigen::Quaterniond::Identity();
    std::vector<ScreenSplat> out;
    out.reserve(order.size());
    for (const std::uint32_t i : order) {
        const ActivatedSplat& s = splats[i];
        Projected2D<double> p;
        try {
            p = project_splat<double>(s, cam);
        } catch (const Error&) {
            continue;  // center rounded across the near plane
        }
        const Eigen::Matrix2d& cov = p.covariance;
        const double det = cov.determinant();
        if (!(det > 0.0) || !std::isfinite(det)) continue;

        ScreenSplat ss;
        ss.mean = p.mean;
        ss.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
        ss.opacity = s.opacity;
        const double rx = raster::kWindowSigmas * std::sqrt(cov(0, 0));
        const double ry = raster::kWindowSigmas * std::sqrt(cov(1, 1));
        const double x0 = std::max(0.0, std::ceil(p.mean.x() - rx));
        const double x1 = std::min(cam.width - 1.0, std::floor(p.mean.x() + rx));
        const double y0 = std::max(0.0, std::ceil(p.mean.y() - ry));
        const double y1 = std::min(cam.height - 1.0, std::floor(p.mean.y() + ry));
        if (!(x0 <= x1) || !(y0 <= y1)) continue;
        ss.x_min = static_cast<int>(x0);
        ss.x_max = static_cast<int>(x1);
        ss.y_min = static_cast<int>(y0);
        ss.y_max = static_cast<int>(y1);

        if (scene.sh_degree == 0) {
            ss.color = s.base_color;
        } else {
            const Vec3d dir = to_scene * (s.position.cast<double>() - eye);
            const double n = dir.norm();
            ss.color = eval_sh_color(scene.splats[i], scene.sh_degree, n > 0 ? Vec3d(dir / n) : Vec3d::UnitZ());
        }
        out.push_back(ss);
    }
    return out;
}

void composite_pixel(std::span<const ScreenSplat> splats, std::span<const std::uint32_t> candidates, int x, int y,
                     Vec3f& color, float& alpha, std::vector<double>* trace) {
    double transmittance = 1.0;
    double r = 0.0, g = 0.0, b = 0.0;
    for (const std::uint32_t i : candidates) {
        const ScreenSplat& s = splats[i];
        if (x < s.x_min || x > s.x_max || y < s.y_min || y > s.y_max) continue;
        const double dx = x - s.mean.x();
        const double dy = y - s.mean.y();
        const double power = -0.5 * (s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy);
        const double a = std::min(raster::kAlphaMax, s.opacity * std::exp(power));
        const double w = transmittance * a;
        r += w * s.color.x();
        g += w * s.color.y();
        b += w * s.color.z();
        transmittance *= 1.0 - a;
        if (trace) trace->push_back(transmittance);
        if (transmittance < raster::kTransmittanceMin) break;
    }
    color = Vec3f(static_cast<float>(r), static_cast<float>(g), static_cast<float>(b));
    alpha = static_cast<float>(1.0 - transmittance);
}

RenderImage composite(std::span<const ScreenSplat> splats, int width, int height, unsigned threads) {
    RenderImage image(width, height);
    const int tiles_x = (width + raster::kTileSize - 1) / raster::kTileSize;
    const int tiles_y = (height + raster::kTileSize - 1) / raster::kTileSize;
    std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const ScreenSplat& s = splats[i];
        for (int ty = s.y_min / raster::kTileSize; ty <= s.y_max / raster::kTileSize; ++ty) {
            for (int tx = s.x_min / raster::kTileSize; tx <= s.x_max / raster::kTileSize; ++tx) {
                bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
            }
        }
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < bins.size(); t = next++) {
            const int tx = static_cast<int>(t % tiles_x);
            const int ty = static_cast<int>(t / tiles_x);
            const int x_end = std::min(width, (tx + 1) * raster::kTileSize);
            const int y_end = std::min(height, (ty + 1) * raster::kTileSize);
            for (int y = ty * raster::kTileSize; y < y_end; ++y) {
                for (int x = tx * raster::kTileSize; x < x_end; ++x) {
                    const std::size_t at = image.index(x, y);
                    composite_pixel(splats, bins[t], x, y, image.color[at], image.alpha[at]);
                }
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    return image;
}

Vec3f hazard_color(const HazardClass& c) {
    switch (c.kind()) {
        case HazardClass::Kind::Fire: return {1.0f, 0.27f, 0.0f};
        case HazardClass::Kind::Smoke: return {0.6f, 0.6f, 0.6f};
        case HazardClass::Kind::Debris: return {0.55f, 0.35f, 0.17f};
        case HazardClass::Kind::Victim: return {1.0f, 0.0f, 1.0f};
        case HazardClass::Kind::AccessRoute: return {0.0f, 0.9f, 0.2f};
        case HazardClass::Kind::Other: break;
    }
    return {0.0f, 0.8f, 1.0f};
}

namespace {

void draw_markers(RenderImage& image, const PoiOverlay& overlay, const Camera& cam,
                  const std::optional<WimTransformd>& wim, int marker_px) {
    const int half = marker_px / 2;
    for (const Poi& poi : filter_pois(overlay.pois, overlay.layers)) {
        Vec3d world = poi.position.cast<double>();
        if (wim) world = wim->apply(world);
        const Vec3d p = (cam.view * world.homogeneous()).head<3>();
        if (!(p.z() >= cam.near)) continue;
        const long u = std::lround(cam.fx * p.x() / p.z() + cam.cx);
        const long v = std::lround(cam.fy * p.y() / p.z() + cam.cy);
        const Vec3f color = hazard_color(poi.hazard);
        for (long y = v - half; y <= v - half + marker_px - 1; ++y) {
            for (long x = u - half; x <= u - half + marker_px - 1; ++x) {
                if (x < 0 || y < 0 || x >= image.width || y >= image.height) continue;
                const std::size_t at = image.index(static_cast<int>(x), static_cast<int>(y));
                image.color[at] = color;
                image.alpha[at] = 1.0f;
            }
        }
    }
}

std::vector<ScreenSplat> screen_splats(const SplatScene& scene, const Camera& cam,
                                       const std::optional<WimTransformd>& wim, const RenderOptions& options) {
    cam.validate();
    const std::vector<ActivatedSplat> splats = prepare_splats(scene, wim);
    const DepthBuffer depths = frame_depths(splats, cam, options.frustum_cull);
    const SortPermutation perm =
        sort_by_depth(depths.depth, depths.culled, static_cast<float>(cam.near), static_cast<float>(cam.far),
                      {.key_bits = options.key_bits, .threads = options.threads});
    return project_sorted(scene, splats, perm.order, cam, wim);
}

}  // namespace

std::vector<double> transmittance_trace(const SplatScene& scene, const Camera& cam, int x, int y,
                                        const RenderOptions& options) {
    const std::vector<ScreenSplat> splats = screen_splats(scene, cam, std::nullopt, options);
    std::vector<std::uint32_t> all(splats.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
    std::vector<double> trace;
    Vec3f color;
    float alpha;
    composite_pixel(splats, all, x, y, color, alpha, &trace);
    return trace;
}

RenderImage render(const SplatScene& scene, const Camera& cam, const std::optional<WimTransformd>& wim,
                   const PoiOverlay* overlay, const RenderOptions& options) {
    const std::vector<ScreenSplat> splats = screen_splats(scene, cam, wim, options);
    RenderImage image = composite(splats, cam.width, cam.height, options.threads);
    if (overlay) draw_markers(image, *overlay, cam, wim, options.poi_marker_px);
    return image;
}

Camera frame_scene(const SplatScene& scene, int width, int height, double fov_y_degrees) {
    Vec3d center = Vec3d::Zero();
    double radius = 1.0;
    if (!scene.empty()) {
        const Box3f box = position_bounds(scene.splats);
        center = box.center().cast<double>();
        radius = std::max(0.5 * box.diagonal().cast<double>().norm(), 1e-3);
    }
    const double half = std::tan(fov_y_degrees * M_PI / 360.0);
    const double distance = radius / half + radius;
    const Vec3d eye = center - Vec3d(0, 0, distance);
    return Camera::look_at(eye, center, Vec3d(0, -1, 0), width, height, fov_y_degrees, std::max(1e-3, 0.01 * radius),
                           distance + 4 * radius);
}

Bytes encode_ppm(const RenderImage& image) {
    const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.reserve(header.size() + image.color.size() * 3);
    for (const Vec3f& c : image.color) {
        for (int k = 0; k < 3; ++k) {
            const float v = std::clamp(c[k], 0.0f, 1.0f);
            out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
        }
    }
    return out;
}

}  // namespace splat
