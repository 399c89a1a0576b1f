#include <doctest.h>

#include <algorithm>
#include <random>
#include <string>

#include "splat/render.hpp"
#include "support.hpp"

using namespace splat;

namespace {

const float kSqrtPi = static_cast<float>(std::sqrt(M_PI));

Camera axis_camera(int w = 100, int h = 100) {
    Camera cam;
    cam.width = w;
    cam.height = h;
    cam.cx = w / 2.0;
    cam.cy = h / 2.0;
    return cam;
}

ActivatedSplat iso(Vec3f pos, float s, float opacity = 0.8f) {
    return ActivatedSplat{pos, Eigen::Quaternionf::Identity(), Vec3f::Constant(s), opacity, Vec3f::Ones()};
}

SplatRecord colored(Vec3f pos, Vec3f rgb_sign, float log_scale, float raw_opacity) {
    SplatRecord r;
    r.position = pos;
    r.f_dc = rgb_sign * kSqrtPi;
    r.raw_log_scale = Vec3f::Constant(log_scale);
    r.raw_opacity = raw_opacity;
    return r;
}

SplatScene scene_of(std::vector<SplatRecord> splats) {
    SplatScene s;
    s.splats = std::move(splats);
    refresh_bounds(s);
    return s;
}

/// Random cloud in front of an axis camera.
SplatScene front_scene(std::mt19937_64& rng, std::size_t n, int degree = 0) {
    SplatScene s = testing::random_scene(rng, n, degree);
    std::uniform_real_distribution<float> xy(-1.5f, 1.5f), z(2.0f, 9.0f);
    for (auto& r : s.splats) r.position = Vec3f(xy(rng), xy(rng), z(rng));
    refresh_bounds(s);
    return s;
}

oracle::Pinhole pinhole_of(const Camera& cam) {
    oracle::Pinhole p{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) p.w[i][j] = cam.view(i, j);
        p.t[i] = cam.view(i, 3);
    }
    p.fx = cam.fx;
    p.fy = cam.fy;
    p.cx = cam.cx;
    p.cy = cam.cy;
    return p;
}

oracle::ScreenGaussian oracle_gaussian(const Camera& cam, const ActivatedSplat& s) {
    const oracle::V3 mean{s.position.x(), s.position.y(), s.position.z()};
    const auto cov = oracle::numeric_screen_covariance(
        pinhole_of(cam), mean, {s.rotation.w(), s.rotation.x(), s.rotation.y(), s.rotation.z()},
        {s.scale.x(), s.scale.y(), s.scale.z()}, 0.3);
    const auto m = oracle::project_point(pinhole_of(cam), mean);
    return {m[0], m[1], cov[0][0], cov[0][1], cov[1][1], s.opacity, {s.base_color.x(), s.base_color.y(), s.base_color.z()}};
}

}  // namespace

TEST_SUITE("render") {

TEST_CASE("on-axis splat projects to the principal point") {
    const Projected2D<double> p = project_splat<double>(iso(Vec3f(0, 0, 4), 0.1f), axis_camera());
    CHECK(p.mean.x() == doctest::Approx(50));
    CHECK(p.mean.y() == doctest::Approx(50));
    CHECK(p.depth == doctest::Approx(4));
}

TEST_CASE("scale 0.1 at depth 4 spreads 2.5 px") {
    const Camera cam = axis_camera();
    const ActivatedSplat s = iso(Vec3f(0, 0, 4), 0.1f);
    const Projected2D<double> p = project_splat<double>(s, cam);
    const auto o = oracle_gaussian(cam, s);
    CHECK(std::sqrt(p.covariance(0, 0) - 0.3) == doctest::Approx(2.5).epsilon(1e-6));
    CHECK(std::sqrt(o.sxx - 0.3) == doctest::Approx(2.5).epsilon(1e-6));
    CHECK(p.covariance(1, 1) == doctest::Approx(o.syy).epsilon(1e-6));
    CHECK(std::abs(p.covariance(0, 1)) < 1e-9);
}

TEST_CASE("rotating an isotropic splat leaves the footprint unchanged") {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> n(0, 1);
    const Camera cam = axis_camera();
    ActivatedSplat s = iso(Vec3f(0.3f, -0.2f, 3), 0.07f);
    const Eigen::Matrix2d base = project_splat<double>(s, cam).covariance;
    for (int i = 0; i < 100; ++i) {
        s.rotation = Eigen::Quaternionf(n(rng), n(rng), n(rng), n(rng)).normalized();
        CHECK((project_splat<double>(s, cam).covariance - base).cwiseAbs().maxCoeff() < 1e-5);
    }
}

TEST_CASE("splats behind the near plane are BehindCamera") {
    const Camera cam = axis_camera();
    try {
        project_splat<double>(iso(Vec3f(0, 0, -1), 0.1f), cam);
        FAIL("expected BehindCamera");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BehindCamera);
    }
    CHECK_THROWS_AS(project_splat<double>(iso(Vec3f(0, 0, 0.001f), 0.1f), cam), Error);
}

TEST_CASE("projected covariance matches a finite-difference Jacobian") {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> n(0, 1);
    std::uniform_real_distribution<float> ls(-4, -1);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Vec3d eye(n(rng) * 2, n(rng) * 2, -6 + n(rng));
        const Camera cam = Camera::look_at(eye, Vec3d(n(rng), n(rng), n(rng)) * 0.3, Vec3d(0, -1, 0), 160, 120, 50);
        ActivatedSplat s = iso(Vec3f(n(rng), n(rng), n(rng)) * 0.5f, 1.0f);
        s.rotation = Eigen::Quaternionf(n(rng), n(rng), n(rng), n(rng)).normalized();
        s.scale = Vec3f(std::exp(ls(rng)), std::exp(ls(rng)), std::exp(ls(rng)));
        const Projected2D<double> p = project_splat<double>(s, cam);
        const auto o = oracle_gaussian(cam, s);
        const double norm = std::max({1.0, std::abs(o.sxx), std::abs(o.syy)});
        worst = std::max({worst, std::abs(p.covariance(0, 0) - o.sxx) / norm, std::abs(p.covariance(0, 1) - o.sxy) / norm,
                          std::abs(p.covariance(1, 1) - o.syy) / norm});
        CHECK(std::abs(p.mean.x() - o.mx) < 1e-6);
        CHECK(std::abs(p.mean.y() - o.my) < 1e-6);
        CHECK(p.covariance.determinant() > 0);
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("empty scene renders black with zero alpha") {
    const RenderImage img = render(SplatScene{}, axis_camera(32, 24));
    CHECK(img.width == 32);
    CHECK(std::all_of(img.color.begin(), img.color.end(), [](const Vec3f& c) { return c.isZero(); }));
    CHECK(std::all_of(img.alpha.begin(), img.alpha.end(), [](float a) { return a == 0.0f; }));
}

TEST_CASE("a centered red splat peaks at the principal point and falls off radially") {
    const SplatScene scene = scene_of({colored(Vec3f(0, 0, 4), Vec3f(1, -1, -1), std::log(0.2f), 4.0f)});
    const RenderImage img = render(scene, axis_camera());
    const Vec3f center = img.color[img.index(50, 50)];
    CHECK(center.x() > 0.9f);
    CHECK(center.y() == 0.0f);
    CHECK(center.z() == 0.0f);
    for (int r = 1; r < 12; ++r) {
        CHECK(img.color[img.index(50 + r, 50)].x() < img.color[img.index(50 + r - 1, 50)].x());
        CHECK(img.color[img.index(50, 50 - r)].x() < img.color[img.index(50, 50 - r + 1)].x());
        CHECK(img.color[img.index(50 + r, 50)].x() == doctest::Approx(img.color[img.index(50 - r, 50)].x()));
    }
}

TEST_CASE("two overlapping splats match the closed-form compositing formula") {
    const SplatRecord red = colored(Vec3f(0, 0, 2), Vec3f(1, -1, -1), std::log(0.05f), 0.5f);
    const SplatRecord blue = colored(Vec3f(0.02f, -0.03f, 5), Vec3f(-1, -1, 1), std::log(0.2f), 1.0f);
    const Camera cam = axis_camera();
    // either input order; the renderer sorts
    for (const auto& scene : {scene_of({blue, red}), scene_of({red, blue})}) {
        const RenderImage img = render(scene, cam);
        const auto front = oracle_gaussian(cam, activate(red));
        const auto back = oracle_gaussian(cam, activate(blue));
        double worst = 0;
        for (int y = 45; y <= 55; ++y) {
            for (int x = 45; x <= 55; ++x) {
                const auto want = oracle::two_splat_pixel(front, back, x, y, 0.99);
                const std::size_t at = img.index(x, y);
                for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(img.color[at][c] - want[c]));
                worst = std::max(worst, std::abs(img.alpha[at] - want[3]));
            }
        }
        CHECK(worst <= 1e-6);
        const Vec3f c = img.color[img.index(50, 50)];
        CHECK(c.x() > c.z());
    }
}

TEST_CASE("permuting the splat list changes no pixel") {
    std::mt19937_64 rng(3);
    SplatScene scene = front_scene(rng, 400, 1);
    const Camera cam = Camera::look_at(Vec3d(0.2, 0.1, -1), Vec3d(0, 0, 5), Vec3d(0, -1, 0), 96, 72, 60);
    const RenderImage base = render(scene, cam);
    for (int trial = 0; trial < 3; ++trial) {
        std::shuffle(scene.splats.begin(), scene.splats.end(), rng);
        CHECK(render(scene, cam) == base);
    }
}

TEST_CASE("transmittance never increases and alpha stays in range") {
    std::mt19937_64 rng(4);
    const SplatScene scene = front_scene(rng, 600);
    const Camera cam = Camera::look_at(Vec3d(0, 0, -1), Vec3d(0, 0, 5), Vec3d(0, -1, 0), 64, 64, 60);
    for (int y = 0; y < 64; y += 7) {
        for (int x = 0; x < 64; x += 7) {
            const auto trace = transmittance_trace(scene, cam, x, y);
            double prev = 1.0;
            for (double t : trace) {
                CHECK(t <= prev);
                CHECK(t >= 0.0);
                prev = t;
            }
        }
    }
    const RenderImage img = render(scene, cam);
    for (float a : img.alpha) {
        CHECK(a >= 0.0f);
        CHECK(a <= 1.0f);
    }
    for (const Vec3f& c : img.color) CHECK(c.allFinite());
}

TEST_CASE("parallel rendering is bit-identical to serial") {
    std::mt19937_64 rng(5);
    const SplatScene scene = front_scene(rng, 2000, 2);
    const Camera cam = Camera::look_at(Vec3d(0, 0, -2), Vec3d(0, 0, 5), Vec3d(0, -1, 0), 150, 90, 60);
    const RenderImage serial = render(scene, cam);
    for (unsigned t : {2u, 4u, 7u}) CHECK(render(scene, cam, std::nullopt, nullptr, {.threads = t}) == serial);
}

TEST_CASE("WIM identity and uniform scale") {
    std::mt19937_64 rng(6);
    SplatScene scene = front_scene(rng, 300);
    for (auto& r : scene.splats) r.position *= 0.5f;
    const Camera cam = Camera::look_at(Vec3d(0, 0, -1), Vec3d(0, 0, 6), Vec3d(0, -1, 0), 80, 80, 60);
    CHECK(render(scene, cam, WimTransformd::identity()) == render(scene, cam));

    WimTransformd twice = WimTransformd::identity();
    twice.scale = 2;
    SplatScene scaled = scene;
    for (auto& r : scaled.splats) {
        r.position *= 2.0f;
        r.raw_log_scale.array() += std::log(2.0f);
    }
    refresh_bounds(scaled);
    const RenderImage a = render(scene, cam, twice);
    const RenderImage b = render(scaled, cam);
    double worst = 0;
    for (std::size_t i = 0; i < a.color.size(); ++i) worst = std::max(worst, double((a.color[i] - b.color[i]).cwiseAbs().maxCoeff()));
    CHECK(worst <= 1e-5);
}

TEST_CASE("weight at the projected mean is the opacity, clamped") {
    for (float raw : {-1.0f, 0.0f, 1.5f, 9.0f}) {
        const SplatScene scene = scene_of({colored(Vec3f(0, 0, 3), Vec3f(1, 1, 1), std::log(0.1f), raw)});
        const RenderImage img = render(scene, axis_camera());
        const double want = std::min(0.99, double(sigmoid(raw)));
        CHECK(img.alpha[img.index(50, 50)] == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("ppm encoding") {
    RenderImage img(3, 2);
    img.color[img.index(0, 0)] = Vec3f(1, 0, 0.5f);
    img.color[img.index(2, 1)] = Vec3f(2, -1, 1);
    const Bytes ppm = encode_ppm(img);
    const std::string header = "P6\n3 2\n255\n";
    REQUIRE(ppm.size() == header.size() + 18);
    CHECK(std::string(ppm.begin(), ppm.begin() + 11) == header);
    CHECK(ppm[11] == 255);
    CHECK(ppm[12] == 0);
    CHECK(ppm[13] == 128);
    CHECK(ppm[11 + 15] == 255);
    CHECK(ppm[11 + 16] == 0);
}

TEST_CASE("POI markers follow the layer filter") {
    const SplatScene scene = scene_of({colored(Vec3f(0, 0, 4), Vec3f(0, 0, 0), std::log(0.3f), 1.0f)});
    const Camera cam = axis_camera();
    Poi fire;
    fire.id = "f";
    fire.hazard = HazardClass::Kind::Fire;
    fire.position = Eigen::Vector3f(0.5f, 0, 2);  // projects to (75, 50)
    PoiOverlay hidden{{fire}, LayerState::none()};
    CHECK(render(scene, cam, std::nullopt, &hidden) == render(scene, cam));

    PoiOverlay shown{{fire}, LayerState::all_known()};
    const RenderImage img = render(scene, cam, std::nullopt, &shown);
    CHECK(img.color[img.index(75, 50)] == hazard_color(HazardClass::Kind::Fire));
    CHECK(img.color[img.index(77, 52)] == hazard_color(HazardClass::Kind::Fire));
    CHECK(img.color[img.index(78, 50)] != hazard_color(HazardClass::Kind::Fire));
}

TEST_CASE("invalid cameras are rejected") {
    Camera cam = axis_camera();
    cam.far = cam.near;
    CHECK_THROWS_AS(render(SplatScene{}, cam), Error);
}

TEST_CASE("frame_scene looks at the cloud center") {
    std::mt19937_64 rng(7);
    const SplatScene scene = front_scene(rng, 100);
    const Camera cam = frame_scene(scene, 64, 48);
    const Vec3d center = position_bounds(scene.splats).center().cast<double>();
    const Vec3d p = (cam.view * center.homogeneous()).head<3>();
    CHECK(std::abs(cam.fx * p.x() / p.z() + cam.cx - 32) < 1e-6);
    CHECK(std::abs(cam.fy * p.y() / p.z() + cam.cy - 24) < 1e-6);
    CHECK(p.z() > 0);
}

}
