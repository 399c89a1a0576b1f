#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "splat/error.hpp"
#include "splat/ply.hpp"
#include "splat/server.hpp"

namespace splat {

// ---- config ---------------------------------------------------------------

void ServerConfig::validate() const {
    if (chunk_size < 1) throw std::invalid_argument("chunk_size must be >= 1");
    if (chunk_size + 4 > max_payload) throw std::invalid_argument("chunk_size must leave room for the chunk header");
    if (queue_capacity < 2) throw std::invalid_argument("queue_capacity must be >= 2");
    if (max_clients < 1) throw std::invalid_argument("max_clients must be >= 1");
    if (poll_interval_ms < 1) throw std::invalid_argument("poll_interval_ms must be >= 1");
    if (!(delta_epsilon >= 0.0f)) throw std::invalid_argument("delta_epsilon must be >= 0");
}

void merge_server_config(ServerConfig& c, const nlohmann::json& doc) {
    if (!doc.is_object()) throw std::invalid_argument("config document must be a JSON object");
    static const char* const known[] = {"host",         "port",          "ingest_dir",     "upload_enabled",
                                        "chunk_size",   "delta_epsilon", "max_clients",    "queue_capacity",
                                        "poll_interval_ms", "max_payload"};
    for (const auto& [key, value] : doc.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
            throw std::invalid_argument("unknown config key '" + key + "'");
        }
    }
    try {
        if (doc.contains("host")) c.host = doc["host"].get<std::string>();
        if (doc.contains("port")) c.port = doc["port"].get<std::uint16_t>();
        if (doc.contains("ingest_dir")) {
            if (doc["ingest_dir"].is_null()) {
                c.ingest_dir.reset();
            } else {
                c.ingest_dir = doc["ingest_dir"].get<std::string>();
            }
        }
        if (doc.contains("upload_enabled")) c.upload_enabled = doc["upload_enabled"].get<bool>();
        if (doc.contains("chunk_size")) c.chunk_size = doc["chunk_size"].get<std::size_t>();
        if (doc.contains("delta_epsilon")) c.delta_epsilon = doc["delta_epsilon"].get<float>();
        if (doc.contains("max_clients")) c.max_clients = doc["max_clients"].get<std::size_t>();
        if (doc.contains("queue_capacity")) c.queue_capacity = doc["queue_capacity"].get<std::size_t>();
        if (doc.contains("poll_interval_ms")) c.poll_interval_ms = doc["poll_interval_ms"].get<int>();
        if (doc.contains("max_payload")) c.max_payload = doc["max_payload"].get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("bad config value: ") + e.what());
    }
}

ServerConfig load_server_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path.string());
    ServerConfig config;
    try {
        merge_server_config(config, nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return config;
}

namespace {

template <typename T>
T parse_env_number(const char* name, const char* text) {
    T value{};
    const std::string_view s(text);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::invalid_argument(std::string(name) + "='" + text + "' is not a valid number");
    }
    return value;
}

}  // namespace

void apply_env_overrides(ServerConfig& c, const std::function<const char*(const char*)>& getenv_fn) {
    if (const char* v = getenv_fn("SPLATLINK_HOST")) c.host = v;
    if (const char* v = getenv_fn("SPLATLINK_PORT")) c.port = parse_env_number<std::uint16_t>("SPLATLINK_PORT", v);
    if (const char* v = getenv_fn("SPLATLINK_INGEST_DIR")) c.ingest_dir = std::filesystem::path(v);
    if (const char* v = getenv_fn("SPLATLINK_CHUNK_SIZE")) {
        c.chunk_size = parse_env_number<std::size_t>("SPLATLINK_CHUNK_SIZE", v);
    }
    if (const char* v = getenv_fn("SPLATLINK_DELTA_EPSILON")) {
        c.delta_epsilon = parse_env_number<float>("SPLATLINK_DELTA_EPSILON", v);
    }
    if (const char* v = getenv_fn("SPLATLINK_MAX_CLIENTS")) {
        c.max_clients = parse_env_number<std::size_t>("SPLATLINK_MAX_CLIENTS", v);
    }
    if (const char* v = getenv_fn("SPLATLINK_QUEUE_CAPACITY")) {
        c.queue_capacity = parse_env_number<std::size_t>("SPLATLINK_QUEUE_CAPACITY", v);
    }
    if (const char* v = getenv_fn("SPLATLINK_POLL_MS")) c.poll_interval_ms = parse_env_number<int>("SPLATLINK_POLL_MS", v);
    if (const char* v = getenv_fn("SPLATLINK_UPLOAD")) c.upload_enabled = std::string_view(v) != "0";
}

// ---- scene state ----------------------------------------------------------

std::size_t SceneState::snapshot_frame_count() const noexcept {
    return (ply.size() + chunk_size - 1) / chunk_size + 2;
}

ProtocolFrame SceneState::snapshot_frame(std::size_t k) const {
    const std::size_t chunks = snapshot_frame_count() - 2;
    ProtocolFrame f;
    f.scene_version = scene.version;
    if (k == 0) {
        f.type = FrameType::SnapshotBegin;
        f.payload = encode_snapshot_begin({static_cast<std::uint32_t>(chunks), ply.size(),
                                           static_cast<std::uint8_t>(scene.sh_degree), scene.splats.size()});
    } else if (k <= chunks) {
        const std::size_t at = (k - 1) * chunk_size;
        const std::size_t len = std::min(chunk_size, ply.size() - at);
        f.type = FrameType::SnapshotChunk;
        f.payload.reserve(4 + len);
        append_le(f.payload, static_cast<std::uint32_t>(k - 1));
        f.payload.insert(f.payload.end(), ply.begin() + static_cast<std::ptrdiff_t>(at),
                         ply.begin() + static_cast<std::ptrdiff_t>(at + len));
    } else {
        f.type = FrameType::SnapshotEnd;
    }
    return f;
}

// ---- client session -------------------------------------------------------

ClientSession::ClientSession(std::uint64_t id, std::size_t capacity) : id_(id), capacity_(std::max<std::size_t>(2, capacity)) {}

std::optional<ProtocolFrame> ClientSession::try_pop() {
    std::lock_guard lock(mutex_);
    while (!queue_.empty()) {
        Entry& front = queue_.front();
        if (auto* frame = std::get_if<ProtocolFrame>(&front.item)) {
            ProtocolFrame out = std::move(*frame);
            queue_.pop_front();
            return out;
        }
        auto& stream = std::get<SnapshotStream>(front.item);
        ProtocolFrame out = stream.state->snapshot_frame(stream.next++);
        if (stream.next >= stream.state->snapshot_frame_count()) queue_.pop_front();
        return out;
    }
    return std::nullopt;
}

std::optional<ProtocolFrame> ClientSession::wait_pop(std::chrono::milliseconds timeout) {
    {
        std::unique_lock lock(mutex_);
        ready_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
    }
    return try_pop();
}

void ClientSession::set_notify(std::function<void()> notify) {
    std::lock_guard lock(mutex_);
    notify_ = std::move(notify);
}

void ClientSession::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
        queue_.clear();
        notify_ = nullptr;
    }
    ready_.notify_all();
}

bool ClientSession::closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
}

std::size_t ClientSession::queued_entries() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
}

bool ClientSession::idle() const {
    std::lock_guard lock(mutex_);
    return queue_.empty();
}

std::uint64_t ClientSession::overflow_count() const {
    std::lock_guard lock(mutex_);
    return overflows_;
}

std::uint64_t ClientSession::last_acked_version() const {
    std::lock_guard lock(mutex_);
    return last_acked_;
}

bool ClientSession::subscribed() const {
    std::lock_guard lock(mutex_);
    return subscribed_;
}

void ClientSession::offer(Entry entry, std::uint64_t resulting_version, const std::shared_ptr<const SceneState>& newest,
                          const ProtocolFrame& newest_pois) {
    std::function<void()> notify;
    {
        std::lock_guard lock(mutex_);
        if (closed_) return;
        if (queue_.size() >= capacity_) {
            // Replace-with-newest: everything queued is superseded by the current
            // scene and POI set. A partially sent snapshot is abandoned; the
            // client drops it when the new SnapshotBegin arrives.
            ++overflows_;
            queue_.clear();
            if (newest) {
                queue_.push_back({true, SnapshotStream{newest, 0}});
                promised_version_ = newest->scene.version;
            }
            queue_.push_back({false, newest_pois});
            const bool covered = entry.scene_content || (std::holds_alternative<ProtocolFrame>(entry.item) &&
                                                         (std::get<ProtocolFrame>(entry.item).type == FrameType::PoiSet ||
                                                          std::get<ProtocolFrame>(entry.item).type == FrameType::Ack));
            if (!covered) queue_.push_back(std::move(entry));
        } else {
            if (entry.scene_content) promised_version_ = resulting_version;
            queue_.push_back(std::move(entry));
        }
        notify = notify_;
    }
    ready_.notify_all();
    if (notify) notify();
}

// ---- hub ------------------------------------------------------------------

SceneHub::SceneHub(ServerConfig config) : config_(std::move(config)) { config_.validate(); }

std::shared_ptr<ClientSession> SceneHub::connect(std::optional<std::size_t> capacity) {
    std::lock_guard lock(state_mutex_);
    if (sessions_.size() >= config_.max_clients) {
        throw Error(Errc::TooManyClients, std::to_string(sessions_.size()) + " clients connected");
    }
    auto session = std::make_shared<ClientSession>(next_session_id_++, capacity.value_or(config_.queue_capacity));
    sessions_.push_back(session);
    return session;
}

void SceneHub::disconnect(const std::shared_ptr<ClientSession>& session) {
    if (!session) return;
    session->close();
    std::lock_guard lock(state_mutex_);
    std::erase(sessions_, session);
}

std::size_t SceneHub::client_count() const {
    std::lock_guard lock(state_mutex_);
    return sessions_.size();
}

ProtocolFrame SceneHub::poi_frame_locked() const {
    return make_poi_frame(pois_, current_ ? current_->scene.version : 0);
}

SceneHub::SyncPlan SceneHub::subscribe(ClientSession& session, std::uint64_t last_known_version) {
    std::lock_guard lock(state_mutex_);
    {
        std::lock_guard session_lock(session.mutex_);
        session.subscribed_ = true;
    }
    const std::uint64_t current = current_ ? current_->scene.version : 0;
    const ProtocolFrame pois = poi_frame_locked();
    if (last_known_version == current) {
        session.offer({true, make_ack(current)}, current, current_, pois);
        return SyncPlan::AckOnly;
    }
    if (current_) {
        session.offer({true, ClientSession::SnapshotStream{current_, 0}}, current, current_, pois);
        ++stats_.snapshots_sent;
    }
    session.offer({false, pois}, 0, current_, pois);
    return SyncPlan::Snapshot;
}

void SceneHub::acknowledge(ClientSession& session, std::uint64_t version) {
    std::lock_guard lock(session.mutex_);
    session.last_acked_ = std::max(session.last_acked_, version);
}

void SceneHub::handle_client_frame(ClientSession& session, const ProtocolFrame& frame) {
    switch (frame.type) {
        case FrameType::Subscribe: subscribe(session, decode_subscribe(frame)); return;
        case FrameType::Ack: acknowledge(session, frame.scene_version); return;
        default: break;
    }
    send_error(session, Errc::UnexpectedFrame, std::string(frame_type_name(frame.type)) + " is not a client frame");
}

void SceneHub::send_error(ClientSession& session, Errc code, const std::string& message) {
    std::lock_guard lock(state_mutex_);
    const std::uint64_t version = current_ ? current_->scene.version : 0;
    session.offer({false, make_error_frame(static_cast<std::uint16_t>(code), message, version)}, 0, current_,
                  poi_frame_locked());
}

std::uint64_t SceneHub::ingest_ply(ByteView bytes) {
    SplatScene scene;
    try {
        scene = parse_ply(bytes);
    } catch (const Error& e) {
        std::lock_guard lock(state_mutex_);
        ++stats_.parse_failures;
        throw Error(Errc::ParseFailed, e.what());
    }

    std::lock_guard writer(write_mutex_);
    const std::shared_ptr<const SceneState> prev = current();
    scene.version = (prev ? prev->scene.version : 0) + 1;
    auto state = std::make_shared<SceneState>();
    state->ply = serialize_ply(scene);
    state->scene = std::move(scene);
    state->chunk_size = config_.chunk_size;

    std::optional<ProtocolFrame> delta_frame;
    if (prev) {
        const DeltaSet delta = diff_scenes(prev->scene, state->scene, config_.delta_epsilon);
        const std::size_t size = encoded_delta_size(delta);
        if (size < state->ply.size() && size <= config_.max_payload) {
            ProtocolFrame f;
            f.type = FrameType::Delta;
            f.scene_version = state->scene.version;
            f.payload = encode_delta(delta);
            delta_frame = std::move(f);
        }
    }

    std::lock_guard lock(state_mutex_);
    current_ = state;
    const ProtocolFrame pois = poi_frame_locked();
    const std::uint64_t version = state->scene.version;
    for (const auto& session : sessions_) {
        bool subscribed;
        std::uint64_t promised;
        {
            std::lock_guard session_lock(session->mutex_);
            subscribed = session->subscribed_;
            promised = session->promised_version_;
        }
        if (!subscribed) continue;
        if (delta_frame && prev && promised == prev->scene.version) {
            session->offer({true, *delta_frame}, version, current_, pois);
            ++stats_.deltas_sent;
        } else {
            session->offer({true, ClientSession::SnapshotStream{current_, 0}}, version, current_, pois);
            ++stats_.snapshots_sent;
        }
    }
    ++ingests_;
    return version;
}

std::shared_ptr<const SceneState> SceneHub::current() const {
    std::lock_guard lock(state_mutex_);
    return current_;
}

std::uint64_t SceneHub::version() const {
    std::lock_guard lock(state_mutex_);
    return current_ ? current_->scene.version : 0;
}

PoiSet SceneHub::pois() const {
    std::lock_guard lock(state_mutex_);
    return pois_;
}

void SceneHub::broadcast_pois_locked() {
    const ProtocolFrame frame = poi_frame_locked();
    for (const auto& session : sessions_) {
        if (!session->subscribed()) continue;
        session->offer({false, frame}, 0, current_, frame);
    }
}

PoiSet SceneHub::upsert_poi(const Poi& poi) {
    std::lock_guard writer(write_mutex_);
    PoiSet next = splat::upsert_poi(pois(), poi);
    std::lock_guard lock(state_mutex_);
    pois_ = next;
    broadcast_pois_locked();
    return next;
}

bool SceneHub::remove_poi(const std::string& id) {
    std::lock_guard writer(write_mutex_);
    const PoiSet before = pois();
    PoiSet next = splat::remove_poi(before, id);
    if (next.revision == before.revision) return false;
    std::lock_guard lock(state_mutex_);
    pois_ = std::move(next);
    broadcast_pois_locked();
    return true;
}

SceneHub::Stats SceneHub::stats() const {
    std::lock_guard lock(state_mutex_);
    return stats_;
}

// ---- directory watcher ----------------------------------------------------

DirectoryWatcher::DirectoryWatcher(std::filesystem::path dir, std::chrono::milliseconds interval, Callback callback)
    : dir_(std::move(dir)), interval_(interval), callback_(std::move(callback)) {}

DirectoryWatcher::~DirectoryWatcher() { stop(); }

std::vector<std::filesystem::path> DirectoryWatcher::poll_once() {
    namespace fs = std::filesystem;
    std::lock_guard lock(poll_mutex_);
    std::error_code ec;
    if (!fs::is_directory(dir_, ec)) return {};

    std::vector<std::pair<fs::file_time_type, fs::path>> ready;
    std::map<fs::path, Seen> present;
    for (const auto& entry : fs::directory_iterator(dir_, ec)) {
        if (!entry.is_regular_file(ec)) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext != ".ply") continue;
        const auto size = entry.file_size(ec);
        if (ec) continue;
        const auto mtime = entry.last_write_time(ec);
        if (ec) continue;

        Seen now{size, mtime, false};
        const auto it = seen_.find(entry.path());
        if (it != seen_.end()) {
            const Seen& before = it->second;
            if (before.size == size && before.mtime == mtime) {
                now.ingested = before.ingested;
                if (!before.ingested && size > 0) {
                    ready.emplace_back(mtime, entry.path());
                    now.ingested = true;
                }
            }
        }
        present.emplace(entry.path(), now);
    }
    seen_ = std::move(present);

    std::sort(ready.begin(), ready.end());
    std::vector<fs::path> handed;
    for (const auto& [mtime, path] : ready) {
        try {
            callback_(path);
        } catch (const std::exception& e) {
            std::cerr << "[watch] " << path.string() << ": " << e.what() << '\n';
        }
        handed.push_back(path);
    }
    return handed;
}

void DirectoryWatcher::start() {
    if (thread_.joinable()) return;
    thread_ = std::jthread([this](std::stop_token stop) {
        std::mutex m;
        std::condition_variable_any cv;
        while (!stop.stop_requested()) {
            poll_once();
            std::unique_lock lock(m);
            cv.wait_for(lock, stop, interval_, [] { return false; });
        }
    });
}

void DirectoryWatcher::stop() {
    if (thread_.joinable()) {
        thread_.request_stop();
        thread_.join();
    }
}

// ---- recorder -------------------------------------------------------------

FrameRecorder::FrameRecorder(SceneHub& hub, const std::filesystem::path& log_path) : hub_(hub) {
    auto out = std::make_shared<std::ofstream>(log_path, std::ios::binary | std::ios::trunc);
    if (!*out) throw std::runtime_error("cannot open replay log " + log_path.string());
    session_ = hub_.connect(std::size_t{1} << 20);
    hub_.subscribe(*session_, 0);
    thread_ = std::jthread([this, out](std::stop_token stop) {
        while (!stop.stop_requested()) {
            busy_ = true;
            auto frame = session_->try_pop();
            if (!frame) {
                busy_ = false;
                std::this_thread::sleep_for(std::chrono::milliseconds(5));
                continue;
            }
            const Bytes bytes = encode_frame(*frame);
            out->write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            out->flush();
            ++written_;
            busy_ = false;
        }
    });
}

FrameRecorder::~FrameRecorder() { stop(); }

bool FrameRecorder::drained() const { return !busy_.load() && session_->idle(); }

void FrameRecorder::stop() {
    if (thread_.joinable()) {
        thread_.request_stop();
        thread_.join();
        hub_.disconnect(session_);
    }
}

}  // namespace splat
