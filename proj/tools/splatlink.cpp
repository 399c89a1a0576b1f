// splatlink: inspect, generate, render, serve, bench and replay splat scenes.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "splat/bench.hpp"
#include "splat/error.hpp"
#include "splat/ply.hpp"
#include "splat/poi.hpp"
#include "splat/protocol.hpp"
#include "splat/render.hpp"
#include "splat/server.hpp"
#include "splat/wim.hpp"

namespace {

using namespace splat;
using nlohmann::json;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

json vec_json(const Vec3f& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3d to_vec3(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }

// ---- inspect --------------------------------------------------------------

struct InspectArgs {
    std::string file;
    bool json = false;
};

int run_inspect(const InspectArgs& a) {
    const Bytes bytes = read_file(a.file);
    const PlyDocument doc = read_ply(bytes);
    const SplatScene& scene = doc.scene;
    const std::size_t n = scene.size();
    if (a.json) {
        json props = json::array();
        for (const auto& p : doc.header.properties) props.push_back({{"name", p.name}, {"type", ply_scalar_name(p.type)}});
        json out{{"file", a.file},
                 {"splat_count", n},
                 {"sh_degree", scene.sh_degree},
                 {"format", doc.header.format == PlyFormat::Ascii ? "ascii" : "binary_little_endian"},
                 {"properties", props},
                 {"ignored_properties", doc.ignored_properties},
                 {"bytes", bytes.size()}};
        if (n > 0) out["bounds"] = {{"min", vec_json(scene.bounds.min())}, {"max", vec_json(scene.bounds.max())}};
        std::cout << out.dump(2) << '\n';
        return 0;
    }
    std::cout << n << (n == 1 ? " splat" : " splats") << ", degree " << scene.sh_degree << '\n';
    std::cout << "format " << (doc.header.format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << ", "
              << bytes.size() << " bytes\n";
    if (n > 0) {
        const Vec3f lo = scene.bounds.min(), hi = scene.bounds.max();
        std::cout << "bounds [" << lo.x() << ", " << lo.y() << ", " << lo.z() << "] .. [" << hi.x() << ", " << hi.y()
                  << ", " << hi.z() << "]\n";
    }
    std::cout << "properties (" << doc.header.properties.size() << ", " << doc.ignored_properties << " ignored):";
    for (const auto& p : doc.header.properties) std::cout << ' ' << p.name;
    std::cout << '\n';
    return 0;
}

// ---- gen ------------------------------------------------------------------

struct GenArgs {
    std::size_t count = 1000;
    std::optional<std::uint64_t> seed;
    std::string distribution = "debris";
    int sh_degree = 0;
    std::string out;
    bool json = false;
};

int run_gen(const GenArgs& a) {
    if (a.json && !a.seed) throw std::invalid_argument("--json requires an explicit --seed");
    const std::uint64_t seed = a.seed.value_or(42);
    const SplatScene scene = generate_scene(a.count, seed, parse_distribution(a.distribution), a.sh_degree);
    const Bytes bytes = serialize_ply(scene);
    write_file(a.out, bytes);
    if (a.json) {
        std::cout << json{{"file", a.out},
                          {"splat_count", scene.size()},
                          {"sh_degree", scene.sh_degree},
                          {"seed", seed},
                          {"distribution", a.distribution},
                          {"bytes", bytes.size()}}
                         .dump(2)
                  << '\n';
    } else {
        std::cout << "wrote " << a.out << ": " << scene.size() << " splats, degree " << scene.sh_degree << ", "
                  << bytes.size() << " bytes (seed " << seed << ")\n";
    }
    return 0;
}

// ---- render ---------------------------------------------------------------

struct RenderArgs {
    std::string file;
    std::string out;
    int width = 320;
    int height = 240;
    double fov = 60;
    std::vector<double> eye, target, up{0, -1, 0};
    std::optional<double> near, far;
    std::optional<double> wim_scale, wim_yaw;
    std::vector<double> wim_translate;
    std::string pois;
    std::optional<std::string> layers;
    unsigned threads = 1;
};

int run_render(const RenderArgs& a) {
    const SplatScene scene = parse_ply(read_file(a.file));
    Camera cam = frame_scene(scene, a.width, a.height, a.fov);
    if (!a.eye.empty() || !a.target.empty()) {
        const Vec3d eye = a.eye.empty() ? cam.position() : to_vec3(a.eye);
        const Vec3d target = a.target.empty() ? Vec3d::Zero() : to_vec3(a.target);
        cam = Camera::look_at(eye, target, to_vec3(a.up), a.width, a.height, a.fov, cam.near, cam.far);
    }
    if (a.near) cam.near = *a.near;
    if (a.far) cam.far = *a.far;

    std::optional<WimTransformd> wim;
    if (a.wim_scale || a.wim_yaw || !a.wim_translate.empty()) {
        WimTransformd w = WimTransformd::identity();
        if (a.wim_scale) w.scale = *a.wim_scale;
        if (a.wim_yaw) w.rotation = Eigen::AngleAxisd(*a.wim_yaw * M_PI / 180.0, Vec3d::UnitY());
        if (!a.wim_translate.empty()) w.translation = to_vec3(a.wim_translate);
        wim = w;
    }

    std::optional<PoiOverlay> overlay;
    if (!a.pois.empty()) {
        const json doc = json::parse(as_chars(read_file(a.pois)));
        PoiOverlay o;
        o.pois = doc.is_array() ? doc.get<std::vector<Poi>>() : doc.get<PoiSet>().pois;
        o.layers = a.layers ? parse_layers(*a.layers) : LayerState::all_known();
        overlay = std::move(o);
    }

    RenderOptions options;
    options.threads = a.threads;
    const RenderImage image = render(scene, cam, wim, overlay ? &*overlay : nullptr, options);
    write_file(a.out, encode_ppm(image));
    std::cout << "wrote " << a.out << ": " << image.width << "x" << image.height << ", " << scene.size()
              << " splats\n";
    return 0;
}

// ---- serve ----------------------------------------------------------------

struct ServeArgs {
    std::string config;
    std::optional<std::string> host, ingest_dir;
    std::optional<std::uint16_t> port;
    std::optional<std::size_t> chunk_size, max_clients, queue_capacity;
    std::optional<float> delta_epsilon;
    std::optional<int> poll_ms;
    bool no_upload = false;
    std::string record, load, port_file;
    std::optional<std::uint64_t> max_ingests;
    unsigned threads = 2;
};

ServerConfig resolve_config(const ServeArgs& a) {
    ServerConfig c;
    if (!a.config.empty()) {
        c = load_server_config(a.config);
    } else if (const char* path = std::getenv("SPLATLINK_CONFIG")) {
        c = load_server_config(path);
    }
    apply_env_overrides(c, [](const char* name) { return std::getenv(name); });
    if (a.host) c.host = *a.host;
    if (a.port) c.port = *a.port;
    if (a.ingest_dir) c.ingest_dir = *a.ingest_dir;
    if (a.no_upload) c.upload_enabled = false;
    if (a.chunk_size) c.chunk_size = *a.chunk_size;
    if (a.delta_epsilon) c.delta_epsilon = *a.delta_epsilon;
    if (a.max_clients) c.max_clients = *a.max_clients;
    if (a.queue_capacity) c.queue_capacity = *a.queue_capacity;
    if (a.poll_ms) c.poll_interval_ms = *a.poll_ms;
    c.validate();
    return c;
}

void ingest_file(SceneHub& hub, const std::filesystem::path& path) {
    try {
        const std::uint64_t version = hub.ingest_ply(read_file(path));
        std::cerr << "[ingest] " << path.string() << " -> version " << version << " ("
                  << hub.current()->scene.size() << " splats)\n";
    } catch (const Error& e) {
        std::cerr << "[ingest] " << path.string() << ": " << e.what() << '\n';
    }
}

int run_serve(const ServeArgs& a) {
    const ServerConfig config = resolve_config(a);
    SceneHub hub(config);

    std::optional<FrameRecorder> recorder;
    if (!a.record.empty()) recorder.emplace(hub, a.record);
    if (!a.load.empty()) {
        hub.ingest_ply(read_file(a.load));
        std::cerr << "[ingest] " << a.load << " -> version " << hub.version() << '\n';
    }

    SceneServer server(hub);
    const std::uint16_t port = server.start(a.threads);
    std::cout << "listening on http://" << config.host << ':' << port << std::endl;
    if (!a.port_file.empty()) {
        std::ofstream(a.port_file) << port << '\n';
    }

    std::optional<DirectoryWatcher> watcher;
    if (config.ingest_dir) {
        std::filesystem::create_directories(*config.ingest_dir);
        watcher.emplace(*config.ingest_dir, std::chrono::milliseconds(config.poll_interval_ms),
                        [&hub](const std::filesystem::path& p) { ingest_file(hub, p); });
        watcher->start();
        std::cerr << "[watch] " << config.ingest_dir->string() << " every " << config.poll_interval_ms << " ms\n";
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) {
        if (a.max_ingests && hub.ingest_count() >= *a.max_ingests && (!recorder || recorder->drained())) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }

    if (watcher) watcher->stop();
    server.stop();
    if (recorder) {
        recorder->stop();
        std::cerr << "[record] " << recorder->frames_written() << " frames -> " << a.record << '\n';
    }
    return 0;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
    std::string file;
    std::size_t count = 100000;
    std::optional<std::uint64_t> seed;
    std::string distribution = "debris";
    int sh_degree = 0;
    int width = 320, height = 240;
    BenchOptions options;
    bool json = false;
};

int run_bench(BenchArgs a) {
    if (a.json && a.file.empty() && !a.seed) throw std::invalid_argument("--json requires an explicit --seed");
    const SplatScene scene = a.file.empty()
                                 ? generate_scene(a.count, a.seed.value_or(42), parse_distribution(a.distribution), a.sh_degree)
                                 : parse_ply(read_file(a.file));
    const Camera cam = frame_scene(scene, a.width, a.height);
    const BenchReport report = run_pipeline_bench(scene, cam, a.options);
    if (a.json) {
        json doc = report_json(report);
        doc["source"] = a.file.empty() ? json{{"generated", true},
                                              {"seed", a.seed.value_or(42)},
                                              {"distribution", a.distribution}}
                                       : json{{"file", a.file}};
        std::cout << doc.dump(2) << '\n';
    } else {
        std::cout << format_report(report);
    }
    return 0;
}

// ---- replay ---------------------------------------------------------------

struct ReplayArgs {
    std::string log;
    bool verify = false;
    std::string expect, out;
    bool json = false;
};

int run_replay(const ReplayArgs& a) {
    const Bytes bytes = read_file(a.log);
    const std::vector<ProtocolFrame> frames = decode_frame_log(bytes);
    if (frames.empty()) {
        std::cerr << "error: no frames in " << a.log << '\n';
        return 1;
    }

    SceneReplica replica;
    std::size_t snapshots = 0, deltas = 0, poi_sets = 0;
    std::uint64_t last_version = 0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const ProtocolFrame& f = frames[i];
        if (a.verify && f.scene_version < last_version) {
            throw Error(Errc::VersionOrder, "frame " + std::to_string(i) + " goes back to version " +
                                                std::to_string(f.scene_version));
        }
        last_version = std::max(last_version, f.scene_version);
        try {
            switch (replica.apply(f)) {
                case SceneReplica::Event::SceneReplaced:
                    (f.type == FrameType::Delta ? deltas : snapshots)++;
                    break;
                case SceneReplica::Event::PoisReplaced: ++poi_sets; break;
                default: break;
            }
        } catch (const Error& e) {
            throw Error(e.code(), "frame " + std::to_string(i) + ": " + e.what());
        }
    }

    const Bytes final_ply = serialize_ply(replica.scene());
    bool ok = true;
    std::string verdict = "ok";
    if (a.verify) {
        if (replica.snapshot_in_progress()) {
            ok = false;
            verdict = "log ends inside a snapshot";
        } else if (!a.expect.empty()) {
            const Bytes expected = read_file(a.expect);
            if (expected != final_ply) {
                ok = false;
                verdict = same_records(parse_ply(expected), replica.scene())
                              ? "records match but bytes differ from " + a.expect
                              : "scene differs from " + a.expect;
            }
        }
    }
    if (!a.out.empty()) write_file(a.out, final_ply);

    if (a.json) {
        std::cout << json{{"frames", frames.size()},
                          {"bytes", bytes.size()},
                          {"version", replica.version()},
                          {"splat_count", replica.scene().size()},
                          {"snapshots", snapshots},
                          {"deltas", deltas},
                          {"poi_sets", poi_sets},
                          {"pois", replica.pois().size()},
                          {"verified", a.verify && ok},
                          {"verdict", verdict}}
                         .dump(2)
                  << '\n';
    } else {
        std::cout << frames.size() << " frames, version " << replica.version() << ", " << replica.scene().size()
                  << " splats (" << snapshots << " snapshots, " << deltas << " deltas, " << poi_sets
                  << " POI sets)\n";
        if (a.verify) std::cout << (ok ? "verify: OK" : "verify: FAILED, " + verdict) << '\n';
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splatlink: splat scene streaming toolkit"};
    app.require_subcommand(1);

    InspectArgs inspect;
    auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a splat PLY file");
    inspect_cmd->add_option("file", inspect.file, "PLY file")->required();
    inspect_cmd->add_flag("--json", inspect.json, "Machine-readable output");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic splat scene");
    gen_cmd->add_option("-n,--count", gen.count, "Splat count")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "RNG seed (default 42; required with --json)");
    gen_cmd->add_option("--dist", gen.distribution, "uniform | debris")->capture_default_str();
    gen_cmd->add_option("--sh-degree", gen.sh_degree, "SH degree 0..3")->check(CLI::Range(0, 3))->capture_default_str();
    gen_cmd->add_option("-o,--out", gen.out, "Output PLY")->required();
    gen_cmd->add_flag("--json", gen.json, "Machine-readable output");

    RenderArgs rend;
    auto* render_cmd = app.add_subcommand("render", "Render a scene to a PPM image");
    render_cmd->add_option("file", rend.file, "PLY file")->required();
    render_cmd->add_option("-o,--out", rend.out, "Output PPM")->required();
    render_cmd->add_option("--width", rend.width)->check(CLI::PositiveNumber)->capture_default_str();
    render_cmd->add_option("--height", rend.height)->check(CLI::PositiveNumber)->capture_default_str();
    render_cmd->add_option("--fov", rend.fov, "Vertical field of view, degrees")->capture_default_str();
    render_cmd->add_option("--eye", rend.eye, "Camera position x,y,z")->expected(3)->delimiter(',');
    render_cmd->add_option("--target", rend.target, "Look-at point x,y,z")->expected(3)->delimiter(',');
    render_cmd->add_option("--up", rend.up, "Up vector x,y,z")->expected(3)->delimiter(',');
    render_cmd->add_option("--near", rend.near);
    render_cmd->add_option("--far", rend.far);
    render_cmd->add_option("--wim-scale", rend.wim_scale, "WIM uniform scale");
    render_cmd->add_option("--wim-yaw", rend.wim_yaw, "WIM rotation about +y, degrees");
    render_cmd->add_option("--wim-translate", rend.wim_translate, "WIM translation x,y,z")->expected(3)->delimiter(',');
    render_cmd->add_option("--pois", rend.pois, "POI JSON (set or array)");
    render_cmd->add_option("--layers", rend.layers, "Visible hazard classes, comma separated (\"\" = none)");
    render_cmd->add_option("--threads", rend.threads)->capture_default_str();

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the scene server");
    serve_cmd->add_option("--config", serve.config, "JSON config file (or SPLATLINK_CONFIG)");
    serve_cmd->add_option("--host", serve.host);
    serve_cmd->add_option("--port", serve.port, "0 picks a free port");
    serve_cmd->add_option("--ingest-dir", serve.ingest_dir, "Directory watched for .ply files");
    serve_cmd->add_flag("--no-upload", serve.no_upload, "Disable POST /api/ingest");
    serve_cmd->add_option("--chunk-size", serve.chunk_size);
    serve_cmd->add_option("--delta-epsilon", serve.delta_epsilon);
    serve_cmd->add_option("--max-clients", serve.max_clients);
    serve_cmd->add_option("--queue-capacity", serve.queue_capacity);
    serve_cmd->add_option("--poll-ms", serve.poll_ms);
    serve_cmd->add_option("--record", serve.record, "Append every broadcast frame to this log");
    serve_cmd->add_option("--load", serve.load, "PLY ingested at startup");
    serve_cmd->add_option("--port-file", serve.port_file, "Write the bound port here");
    serve_cmd->add_option("--max-ingests", serve.max_ingests, "Exit after this many ingests are recorded");
    serve_cmd->add_option("--threads", serve.threads)->capture_default_str();

    BenchArgs bench;
    std::vector<double> targets;
    auto* bench_cmd = app.add_subcommand("bench", "Time the render pipeline stages");
    bench_cmd->add_option("--file", bench.file, "PLY file instead of a generated scene");
    bench_cmd->add_option("-n,--count", bench.count)->capture_default_str();
    bench_cmd->add_option("--seed", bench.seed, "RNG seed (default 42; required with --json)");
    bench_cmd->add_option("--dist", bench.distribution)->capture_default_str();
    bench_cmd->add_option("--sh-degree", bench.sh_degree)->check(CLI::Range(0, 3));
    bench_cmd->add_option("--runs", bench.options.runs)->check(CLI::PositiveNumber)->capture_default_str();
    bench_cmd->add_option("--warmup", bench.options.warmup)->check(CLI::NonNegativeNumber)->capture_default_str();
    bench_cmd->add_option("--threads", bench.options.threads)->capture_default_str();
    bench_cmd->add_option("--width", bench.width)->check(CLI::PositiveNumber)->capture_default_str();
    bench_cmd->add_option("--height", bench.height)->check(CLI::PositiveNumber)->capture_default_str();
    bench_cmd->add_option("--targets", targets, "Target FPS list (default 72,30)")->delimiter(',');
    bench_cmd->add_flag("--frustum-cull", bench.options.frustum_cull);
    bench_cmd->add_flag("--json", bench.json, "Machine-readable output");

    ReplayArgs replay;
    auto* replay_cmd = app.add_subcommand("replay", "Decode a recorded frame log");
    replay_cmd->add_option("log", replay.log, "Frame log")->required();
    replay_cmd->add_flag("--verify", replay.verify, "Check ordering and completeness");
    replay_cmd->add_option("--expect", replay.expect, "PLY the final scene must match byte for byte");
    replay_cmd->add_option("-o,--out", replay.out, "Write the reconstructed scene");
    replay_cmd->add_flag("--json", replay.json, "Machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    if (!targets.empty()) bench.options.targets = targets;

    try {
        if (*inspect_cmd) return run_inspect(inspect);
        if (*gen_cmd) return run_gen(gen);
        if (*render_cmd) return run_render(rend);
        if (*serve_cmd) return run_serve(serve);
        if (*bench_cmd) return run_bench(bench);
        if (*replay_cmd) return run_replay(replay);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
