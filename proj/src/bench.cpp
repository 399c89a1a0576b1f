#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "splat/bench.hpp"
#include "splat/error.hpp"
#include "splat/ply.hpp"

namespace splat {

Distribution parse_distribution(std::string_view name) {
    if (name == "uniform") return Distribution::Uniform;
    if (name == "debris") return Distribution::Debris;
    throw std::invalid_argument("unknown distribution '" + std::string(name) + "' (uniform|debris)");
}

std::string_view distribution_name(Distribution d) noexcept {
    return d == Distribution::Uniform ? "uniform" : "debris";
}

SplatScene generate_scene(std::size_t count, std::uint64_t seed, Distribution distribution, int sh_degree) {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw Error(Errc::InconsistentShDegree, "degree must be 0..3");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
    std::normal_distribution<float> normal(0.0f, 1.0f);

    struct Cluster {
        Vec3f center;
        float sigma;
    };
    std::vector<Cluster> clusters;
    if (distribution == Distribution::Debris) {
        const std::size_t k = std::clamp<std::size_t>(count / 4096, 1, 256);
        for (std::size_t i = 0; i < k; ++i) {
            clusters.push_back({Vec3f(20 * unit(rng), 0.5f + 1.5f * std::abs(unit(rng)), 20 * unit(rng)),
                                0.3f + 1.7f * std::abs(unit(rng))});
        }
    }
    std::uniform_int_distribution<std::size_t> pick(0, clusters.empty() ? 0 : clusters.size() - 1);

    SplatScene scene;
    scene.sh_degree = sh_degree;
    scene.splats.resize(count);
    const std::size_t rest = sh_rest_count(sh_degree);
    for (SplatRecord& s : scene.splats) {
        if (distribution == Distribution::Uniform) {
            s.position = Vec3f(10 * unit(rng), 10 * unit(rng), 10 * unit(rng));
        } else {
            const Cluster& c = clusters[pick(rng)];
            s.position = c.center + c.sigma * Vec3f(normal(rng), normal(rng), normal(rng));
        }
        s.raw_rotation = Vec4f(normal(rng), normal(rng), normal(rng), normal(rng));
        if (s.raw_rotation.norm() < 1e-3f) s.raw_rotation = Vec4f(1, 0, 0, 0);
        s.raw_log_scale = Vec3f::Constant(-3.5f) + 0.5f * Vec3f(normal(rng), normal(rng), normal(rng));
        s.raw_opacity = 1.5f * normal(rng);
        s.f_dc = 0.8f * Vec3f(normal(rng), normal(rng), normal(rng));
        s.f_rest.resize(rest);
        for (float& f : s.f_rest) f = 0.1f * normal(rng);
    }
    if (!scene.empty()) refresh_bounds(scene);
    return scene;
}

double nearest_rank(std::span<const double> sorted, double percentile) {
    if (sorted.empty()) throw Error(Errc::EmptySamples, "no samples");
    const auto n = static_cast<double>(sorted.size());
    const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

FrameTimingStats compute_stats(std::span<const double> samples) {
    if (samples.empty()) throw Error(Errc::EmptySamples, "compute_stats needs at least one sample");
    FrameTimingStats s;
    s.samples.assign(samples.begin(), samples.end());
    std::vector<double> sorted = s.samples;
    std::sort(sorted.begin(), sorted.end());
    // Summing in sorted order keeps the mean independent of sample order.
    double sum = 0;
    for (double v : sorted) sum += v;
    s.mean = sum / static_cast<double>(sorted.size());
    s.p50 = nearest_rank(sorted, 50);
    s.p95 = nearest_rank(sorted, 95);
    s.p99 = nearest_rank(sorted, 99);
    s.fps_equiv = 1000.0 / s.mean;
    return s;
}

const StageTiming& BenchReport::stage(std::string_view name) const {
    for (const auto& s : stages) {
        if (s.name == name) return s;
    }
    throw std::out_of_range("no stage " + std::string(name));
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename Fn>
double time_ms(Fn&& fn) {
    const auto start = Clock::now();
    fn();
    return ms_since(start);
}

}  // namespace

std::uint64_t estimate_memory(const SplatScene& scene, int width, int height) {
    const std::uint64_t n = scene.splats.size();
    const std::uint64_t rest = sh_rest_count(scene.sh_degree);
    const std::uint64_t records = n * (sizeof(SplatRecord) + rest * sizeof(float));
    const std::uint64_t activated = n * sizeof(ActivatedSplat);
    const std::uint64_t depths = n * (sizeof(float) + sizeof(std::uint8_t));
    // keys, order and the scatter buffers of the radix passes
    const std::uint64_t sort = n * 4 * sizeof(std::uint32_t);
    const std::uint64_t screen = n * sizeof(ScreenSplat);
    const std::uint64_t image = static_cast<std::uint64_t>(width) * height * (sizeof(Vec3f) + sizeof(float));
    return records + activated + depths + sort + screen + image;
}

std::uint64_t resident_peak_bytes() {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("VmHWM:", 0) == 0) {
            std::istringstream fields(line.substr(6));
            std::uint64_t kb = 0;
            fields >> kb;
            return kb * 1024;
        }
    }
    return 0;
}

BenchReport run_pipeline_bench(const SplatScene& scene, const Camera& cam, const BenchOptions& options) {
    if (options.runs < 1) throw std::invalid_argument("runs must be >= 1");
    if (options.warmup < 0) throw std::invalid_argument("warmup must be >= 0");
    cam.validate();

    BenchReport report;
    report.splat_count = scene.splats.size();
    report.sh_degree = scene.sh_degree;
    report.width = cam.width;
    report.height = cam.height;
    report.options = options;

    const Bytes ply = serialize_ply(scene);
    const RenderOptions render_options{.threads = options.threads, .frustum_cull = options.frustum_cull};
    const float near = static_cast<float>(cam.near);
    const float far = static_cast<float>(cam.far);

    std::vector<double> parse_ms, depth_ms, sort_ms, project_ms, composite_ms, render_ms;
    for (int run = 0; run < options.warmup + options.runs; ++run) {
        const bool keep = run >= options.warmup;
        SplatScene parsed;
        const double t_parse = time_ms([&] { parsed = parse_ply(ply); });

        std::vector<ActivatedSplat> active;
        DepthBuffer depths;
        const double t_depth = time_ms([&] {
            active = prepare_splats(scene, std::nullopt);
            depths = frame_depths(active, cam, options.frustum_cull);
        });

        SortPermutation perm;
        const double t_sort = time_ms([&] {
            perm = sort_by_depth(depths.depth, depths.culled, near, far,
                                 {.key_bits = render_options.key_bits, .threads = options.threads});
        });

        std::vector<ScreenSplat> screen;
        const double t_project = time_ms([&] { screen = project_sorted(scene, active, perm.order, cam, std::nullopt); });

        RenderImage image;
        const double t_composite = time_ms([&] { image = composite(screen, cam.width, cam.height, options.threads); });

        const double t_render = time_ms([&] { image = splat::render(scene, cam, std::nullopt, nullptr, render_options); });

        if (!keep) continue;
        parse_ms.push_back(t_parse);
        depth_ms.push_back(t_depth);
        sort_ms.push_back(t_sort);
        project_ms.push_back(t_project);
        composite_ms.push_back(t_composite);
        render_ms.push_back(t_render);
    }

    report.stages = {{"parse", compute_stats(parse_ms)},
                     {"depth", compute_stats(depth_ms)},
                     {"sort", compute_stats(sort_ms)},
                     {"project", compute_stats(project_ms)},
                     {"composite", compute_stats(composite_ms)}};
    report.render = compute_stats(render_ms);
    for (const auto& s : report.stages) {
        if (s.name != "parse") report.total_ms += s.stats.mean;
    }
    report.memory_estimate_bytes = estimate_memory(scene, cam.width, cam.height);
    report.resident_peak_bytes = resident_peak_bytes();
    for (double target : options.targets) {
        const double budget = 1000.0 / target;
        report.verdicts.push_back({target, budget, report.total_ms <= budget});
    }
    return report;
}

std::string format_report(const BenchReport& r) {
    std::ostringstream out;
    out << std::fixed;
    out << "splats " << r.splat_count << "  sh_degree " << r.sh_degree << "  image " << r.width << "x" << r.height
        << "  runs " << r.options.runs << " (+" << r.options.warmup << " warm-up)  threads " << r.options.threads
        << "\n\n";
    out << std::left << std::setw(14) << "stage" << std::right << std::setw(11) << "mean ms" << std::setw(11)
        << "p50 ms" << std::setw(11) << "p95 ms" << std::setw(11) << "p99 ms" << std::setw(11) << "fps eq" << '\n';
    auto row = [&](const std::string& name, const FrameTimingStats& s) {
        out << std::left << std::setw(14) << name << std::right << std::setprecision(3) << std::setw(11) << s.mean
            << std::setw(11) << s.p50 << std::setw(11) << s.p95 << std::setw(11) << s.p99 << std::setprecision(2)
            << std::setw(11) << s.fps_equiv << '\n';
    };
    for (const auto& s : r.stages) row(s.name, s.stats);
    out << std::left << std::setw(14) << "frame total" << std::right << std::setprecision(3) << std::setw(11)
        << r.total_ms << std::setw(44) << std::setprecision(2) << 1000.0 / r.total_ms << '\n';
    row("render", r.render);
    out << '\n' << std::setprecision(1);
    out << "memory estimate  " << static_cast<double>(r.memory_estimate_bytes) / (1 << 20) << " MiB";
    if (r.resident_peak_bytes > 0) {
        out << "   resident peak  " << static_cast<double>(r.resident_peak_bytes) / (1 << 20) << " MiB";
    }
    out << '\n';
    for (const auto& v : r.verdicts) {
        out << "target " << std::setprecision(0) << v.target_fps << " fps (" << std::setprecision(2) << v.budget_ms
            << " ms)  " << (v.pass ? "PASS" : "FAIL") << '\n';
    }
    return out.str();
}

nlohmann::json stats_json(const FrameTimingStats& s) {
    return {{"mean_ms", s.mean}, {"p50_ms", s.p50},       {"p95_ms", s.p95},
            {"p99_ms", s.p99},   {"fps_equiv", s.fps_equiv}, {"samples", s.samples.size()}};
}

nlohmann::json report_json(const BenchReport& r) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : r.stages) {
        nlohmann::json j = stats_json(s.stats);
        j["name"] = s.name;
        stages.push_back(std::move(j));
    }
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : r.verdicts) {
        verdicts.push_back({{"target_fps", v.target_fps}, {"budget_ms", v.budget_ms}, {"pass", v.pass}});
    }
    return {{"schema", kBenchSchema},
            {"splat_count", r.splat_count},
            {"sh_degree", r.sh_degree},
            {"image", {{"width", r.width}, {"height", r.height}}},
            {"runs", r.options.runs},
            {"warmup", r.options.warmup},
            {"threads", r.options.threads},
            {"stages", std::move(stages)},
            {"frame_total_ms", r.total_ms},
            {"render", stats_json(r.render)},
            {"memory", {{"estimate_bytes", r.memory_estimate_bytes}, {"resident_peak_bytes", r.resident_peak_bytes}}},
            {"verdicts", std::move(verdicts)}};
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("need at least two matched points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const auto n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace splat
