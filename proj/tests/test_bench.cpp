#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "splat/bench.hpp"
#include "splat/ply.hpp"
#include "support.hpp"

using namespace splat;

TEST_SUITE("bench") {

TEST_CASE("constant samples") {
    const std::vector<double> s = {10, 10, 10};
    const FrameTimingStats st = compute_stats(s);
    CHECK(st.mean == 10);
    CHECK(st.fps_equiv == 100);
    CHECK(st.p50 == 10);
    CHECK(st.p99 == 10);
    CHECK(st.samples == s);
}

TEST_CASE("frame time to fps matches the published device figures") {
    auto fps = [](double ms) { return compute_stats(std::vector<double>{ms}).fps_equiv; };
    CHECK(fps(13.8) == doctest::Approx(72.46).epsilon(1e-4));
    CHECK(std::lround(fps(13.8)) == 72);
    CHECK(fps(144.4) == doctest::Approx(6.93).epsilon(1e-3));
    CHECK(std::lround(fps(144.4)) == 7);
    CHECK(fps(111.3) == doctest::Approx(8.98).epsilon(1e-3));
    CHECK(std::lround(fps(111.3)) == 9);
}

TEST_CASE("no samples is EmptySamples") {
    try {
        compute_stats(std::vector<double>{});
        FAIL("expected EmptySamples");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptySamples);
    }
}

TEST_CASE("percentiles match a counting definition of nearest rank") {
    std::mt19937_64 rng(1);
    std::lognormal_distribution<double> t(2.0, 0.6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> s(1 + trial % 37);
        for (double& x : s) x = std::round(t(rng) * 4) / 4;  // ties too
        const FrameTimingStats st = compute_stats(s);
        CHECK(st.p50 == oracle::nearest_rank_by_count(s, 50));
        CHECK(st.p95 == oracle::nearest_rank_by_count(s, 95));
        CHECK(st.p99 == oracle::nearest_rank_by_count(s, 99));
        CHECK(st.p50 <= st.p95);
        CHECK(st.p95 <= st.p99);
        CHECK(st.fps_equiv == 1000.0 / st.mean);
    }
}

TEST_CASE("stats do not depend on sample order") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 40);
    std::vector<double> s(101);
    for (double& x : s) x = u(rng);
    const FrameTimingStats a = compute_stats(s);
    for (int i = 0; i < 10; ++i) {
        std::shuffle(s.begin(), s.end(), rng);
        const FrameTimingStats b = compute_stats(s);
        CHECK(b.mean == a.mean);
        CHECK(b.p50 == a.p50);
        CHECK(b.p95 == a.p95);
        CHECK(b.p99 == a.p99);
    }
}

TEST_CASE("generate_scene is deterministic") {
    CHECK(generate_scene(0, 1).empty());
    for (Distribution d : {Distribution::Uniform, Distribution::Debris}) {
        const SplatScene a = generate_scene(5000, 42, d, 1);
        const SplatScene b = generate_scene(5000, 42, d, 1);
        CHECK(a.size() == 5000);
        CHECK(a.sh_degree == 1);
        CHECK(serialize_ply(a) == serialize_ply(b));
        CHECK(serialize_ply(a) != serialize_ply(generate_scene(5000, 43, d, 1)));
        for (const auto& r : a.splats) REQUIRE_NOTHROW(activate(r));
    }
    CHECK(parse_distribution("uniform") == Distribution::Uniform);
    CHECK(distribution_name(parse_distribution("debris")) == "debris");
    CHECK_THROWS(parse_distribution("spiral"));
}

TEST_CASE("a 100-splat scene fits a 30 fps budget") {
    const SplatScene scene = generate_scene(100, 7);
    const Camera cam = frame_scene(scene, 320, 240);
    const BenchReport r = run_pipeline_bench(scene, cam, {.runs = 5});
    CHECK(r.total_ms < 1000.0 / 30);
    REQUIRE(r.verdicts.size() == 2);
    CHECK(r.verdicts[0].target_fps == 72);
    CHECK(r.verdicts[1].target_fps == 30);
    CHECK(r.verdicts[1].pass);
    for (const auto& v : r.verdicts) {
        CHECK(v.budget_ms == doctest::Approx(1000.0 / v.target_fps));
        CHECK(v.pass == (r.total_ms <= v.budget_ms));
    }
    double max_stage = 0;
    for (const auto& s : r.stages) {
        CHECK(s.stats.samples.size() == 5);
        if (s.name != "parse") max_stage = std::max(max_stage, s.stats.mean);
    }
    CHECK(r.total_ms >= max_stage);
    CHECK(r.memory_estimate_bytes >= estimate_memory(SplatScene{}, 320, 240));
}

TEST_CASE("empty scene reports every stage and passes") {
    const BenchReport r = run_pipeline_bench(SplatScene{}, frame_scene(SplatScene{}, 64, 48), {.runs = 3});
    std::vector<std::string> names;
    for (const auto& s : r.stages) names.push_back(s.name);
    CHECK(names == std::vector<std::string>{"parse", "depth", "sort", "project", "composite"});
    for (const auto& v : r.verdicts) CHECK(v.pass);
    CHECK(r.splat_count == 0);
    CHECK_THROWS_AS(run_pipeline_bench(SplatScene{}, frame_scene(SplatScene{}, 8, 8), {.runs = 0}), std::invalid_argument);
}

TEST_CASE("report structure is stable across runs") {
    const SplatScene scene = generate_scene(300, 3);
    const Camera cam = frame_scene(scene, 64, 48);
    const auto a = report_json(run_pipeline_bench(scene, cam, {.runs = 2, .warmup = 0}));
    const auto b = report_json(run_pipeline_bench(scene, cam, {.runs = 2, .warmup = 0}));
    CHECK(a.at("schema") == kBenchSchema);
    REQUIRE(a.at("stages").size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(a["stages"][i]["name"] == b["stages"][i]["name"]);
        CHECK(a["stages"][i]["samples"] == 2);
        for (const char* key : {"mean_ms", "p50_ms", "p95_ms", "p99_ms", "fps_equiv"}) CHECK(a["stages"][i].contains(key));
    }
    std::vector<std::string> ka, kb;
    for (const auto& [k, v] : a.items()) ka.push_back(k);
    for (const auto& [k, v] : b.items()) kb.push_back(k);
    CHECK(ka == kb);
    CHECK(a.contains("frame_total_ms"));
    CHECK(a.at("verdicts").size() == 2);
    const std::string text = format_report(run_pipeline_bench(scene, cam, {.runs = 1}));
    CHECK(text.find("composite") != std::string::npos);
    CHECK(text.find("72") != std::string::npos);
}

TEST_CASE("log-log slope of a power law") {
    const std::vector<double> x = {1e4, 1e5, 1e6};
    std::vector<double> y;
    for (double v : x) y.push_back(3 * std::pow(v, 1.1));
    CHECK(loglog_slope(x, y) == doctest::Approx(1.1));
}

}
