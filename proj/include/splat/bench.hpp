#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "splat/model.hpp"
#include "splat/render.hpp"

namespace splat {

enum class Distribution {
    Uniform,  ///< uniform in a 20-unit box
    Debris,   ///< Gaussian clusters over a flat field
};

Distribution parse_distribution(std::string_view name);
std::string_view distribution_name(Distribution d) noexcept;

/// Deterministic synthetic scene (mt19937_64 seeded with `seed`).
SplatScene generate_scene(std::size_t count, std::uint64_t seed, Distribution distribution = Distribution::Debris,
                          int sh_degree = 0);

struct FrameTimingStats {
    std::vector<double> samples;  ///< ms, in measurement order
    double mean = 0, p50 = 0, p95 = 0, p99 = 0;
    double fps_equiv = 0;  ///< 1000 / mean
};

/// Nearest-rank percentiles: the ceil(p/100 * n)-th smallest sample. Throws EmptySamples.
FrameTimingStats compute_stats(std::span<const double> samples);
double nearest_rank(std::span<const double> sorted, double percentile);

struct StageTiming {
    std::string name;
    FrameTimingStats stats;
};

struct BudgetVerdict {
    double target_fps = 0;
    double budget_ms = 0;
    bool pass = false;
};

struct BenchOptions {
    int runs = 10;
    int warmup = 1;
    unsigned threads = 1;
    bool frustum_cull = false;
    std::vector<double> targets{72.0, 30.0};
};

struct BenchReport {
    std::size_t splat_count = 0;
    int sh_degree = 0;
    int width = 0, height = 0;
    BenchOptions options;
    /// parse, depth, sort, project, composite
    std::vector<StageTiming> stages;
    FrameTimingStats render;  ///< full ref-render call
    /// Sum of the per-frame stage means (depth + sort + project + composite).
    double total_ms = 0;
    std::uint64_t memory_estimate_bytes = 0;
    std::uint64_t resident_peak_bytes = 0;  ///< 0 when the platform offers no probe
    std::vector<BudgetVerdict> verdicts;

    const StageTiming& stage(std::string_view name) const;
};

inline constexpr const char* kBenchSchema = "splatlink.bench/1";

/// Times every stage in isolation plus the full render. Throws std::invalid_argument if runs < 1.
BenchReport run_pipeline_bench(const SplatScene& scene, const Camera& cam, const BenchOptions& options = {});

/// Live splat bytes plus the renderer's working buffers for one frame.
std::uint64_t estimate_memory(const SplatScene& scene, int width, int height);
/// Peak resident set size from /proc/self/status, or 0.
std::uint64_t resident_peak_bytes();

std::string format_report(const BenchReport& report);
nlohmann::json report_json(const BenchReport& report);
nlohmann::json stats_json(const FrameTimingStats& stats);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace splat
