#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "splat/bytes.hpp"
#include "splat/error.hpp"
#include "splat/model.hpp"
#include "splat/poi.hpp"
#include "splat/protocol.hpp"

namespace splat {

struct ServerConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8080;
    std::optional<std::filesystem::path> ingest_dir;
    bool upload_enabled = true;
    std::size_t chunk_size = kDefaultChunkSize;
    float delta_epsilon = 0.0f;
    std::size_t max_clients = 64;
    /// Outbound queue entries per client; a whole snapshot occupies one entry.
    std::size_t queue_capacity = 64;
    int poll_interval_ms = 500;
    std::size_t max_payload = kDefaultMaxPayload;

    /// Throws std::invalid_argument naming the offending key.
    void validate() const;
};

/// Reads the JSON config document; keys mirror the ServerConfig fields.
ServerConfig load_server_config(const std::filesystem::path& path);
void merge_server_config(ServerConfig& config, const nlohmann::json& doc);
/// SPLATLINK_HOST, SPLATLINK_PORT, SPLATLINK_INGEST_DIR, SPLATLINK_CHUNK_SIZE,
/// SPLATLINK_DELTA_EPSILON, SPLATLINK_MAX_CLIENTS, SPLATLINK_QUEUE_CAPACITY,
/// SPLATLINK_POLL_MS, SPLATLINK_UPLOAD.
void apply_env_overrides(ServerConfig& config, const std::function<const char*(const char*)>& getenv_fn);

/// One published scene version. Immutable once shared.
struct SceneState {
    SplatScene scene;
    Bytes ply;  ///< canonical serialization streamed in snapshots
    std::size_t chunk_size = kDefaultChunkSize;

    std::size_t snapshot_frame_count() const noexcept;
    /// Frame `k` of this version's snapshot (0 = Begin, last = End).
    ProtocolFrame snapshot_frame(std::size_t k) const;
};

/// Outbound side of one subscriber. Entries are plain frames or a snapshot
/// stream that yields its frames lazily from the shared SceneState.
class ClientSession {
public:
    ClientSession(std::uint64_t id, std::size_t capacity);

    std::uint64_t id() const noexcept { return id_; }

    /// Next frame to transmit, if any.
    std::optional<ProtocolFrame> try_pop();
    std::optional<ProtocolFrame> wait_pop(std::chrono::milliseconds timeout);

    /// Called after every enqueue, outside the session lock.
    void set_notify(std::function<void()> notify);
    void close();
    bool closed() const;

    std::size_t queued_entries() const;
    bool idle() const;  ///< nothing queued
    std::uint64_t overflow_count() const;
    std::uint64_t last_acked_version() const;
    bool subscribed() const;

private:
    friend class SceneHub;

    struct SnapshotStream {
        std::shared_ptr<const SceneState> state;
        std::size_t next = 0;
    };
    struct Entry {
        bool scene_content = false;
        std::variant<ProtocolFrame, SnapshotStream> item;
    };

    /// Enqueues, applying replace-with-newest on overflow. Caller holds no session lock.
    void offer(Entry entry, std::uint64_t resulting_version, const std::shared_ptr<const SceneState>& newest,
               const ProtocolFrame& newest_pois);

    const std::uint64_t id_;
    const std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable ready_;
    std::deque<Entry> queue_;
    std::function<void()> notify_;
    bool closed_ = false;
    bool subscribed_ = false;
    /// Version the client will hold once everything queued is delivered.
    std::uint64_t promised_version_ = 0;
    std::uint64_t last_acked_ = 0;
    std::uint64_t overflows_ = 0;
};

/// Authoritative scene + POI state with fan-out to subscribers. Writers are
/// serialized; readers take immutable snapshots.
class SceneHub {
public:
    explicit SceneHub(ServerConfig config);

    const ServerConfig& config() const noexcept { return config_; }

    /// Throws TooManyClients once max_clients sessions exist.
    std::shared_ptr<ClientSession> connect(std::optional<std::size_t> capacity = std::nullopt);
    void disconnect(const std::shared_ptr<ClientSession>& session);
    std::size_t client_count() const;

    enum class SyncPlan { AckOnly, Snapshot };
    /// Up-to-date clients get an Ack; everyone else a full snapshot plus the POI set.
    SyncPlan subscribe(ClientSession& session, std::uint64_t last_known_version);
    void acknowledge(ClientSession& session, std::uint64_t version);

    /// Dispatches a client->server frame (Subscribe, Ack); anything else gets an Error frame.
    void handle_client_frame(ClientSession& session, const ProtocolFrame& frame);
    /// Queues an Error frame for one client.
    void send_error(ClientSession& session, Errc code, const std::string& message);

    /// Parses and publishes a new version. Throws ParseFailed and leaves the
    /// current scene untouched when the bytes do not parse.
    std::uint64_t ingest_ply(ByteView bytes);

    std::shared_ptr<const SceneState> current() const;
    std::uint64_t version() const;
    std::uint64_t ingest_count() const noexcept { return ingests_.load(); }

    PoiSet pois() const;
    PoiSet upsert_poi(const Poi& poi);
    /// False when the id is unknown.
    bool remove_poi(const std::string& id);

    /// Broadcast statistics (for tests and logs).
    struct Stats {
        std::uint64_t deltas_sent = 0;
        std::uint64_t snapshots_sent = 0;
        std::uint64_t parse_failures = 0;
    };
    Stats stats() const;

private:
    ProtocolFrame poi_frame_locked() const;
    void broadcast_pois_locked();

    ServerConfig config_;
    std::mutex write_mutex_;
    mutable std::mutex state_mutex_;
    std::shared_ptr<const SceneState> current_;
    PoiSet pois_;
    std::vector<std::shared_ptr<ClientSession>> sessions_;
    std::uint64_t next_session_id_ = 1;
    std::atomic<std::uint64_t> ingests_{0};
    Stats stats_;
};

/// Polls a directory for new or changed .ply files. A file is ingested once
/// its size has been stable across two consecutive polls; each (path, size,
/// mtime) is ingested at most once.
class DirectoryWatcher {
public:
    using Callback = std::function<void(const std::filesystem::path&)>;

    DirectoryWatcher(std::filesystem::path dir, std::chrono::milliseconds interval, Callback callback);
    ~DirectoryWatcher();

    DirectoryWatcher(const DirectoryWatcher&) = delete;
    DirectoryWatcher& operator=(const DirectoryWatcher&) = delete;

    /// One scan; returns the files handed to the callback, oldest first.
    std::vector<std::filesystem::path> poll_once();

    void start();
    void stop();

private:
    struct Seen {
        std::uintmax_t size = 0;
        std::filesystem::file_time_type mtime;
        bool ingested = false;
    };

    std::filesystem::path dir_;
    std::chrono::milliseconds interval_;
    Callback callback_;
    std::map<std::filesystem::path, Seen> seen_;
    std::mutex poll_mutex_;
    std::jthread thread_;
};

/// Writes every frame a subscriber receives to a replay log.
class FrameRecorder {
public:
    FrameRecorder(SceneHub& hub, const std::filesystem::path& log_path);
    ~FrameRecorder();

    FrameRecorder(const FrameRecorder&) = delete;
    FrameRecorder& operator=(const FrameRecorder&) = delete;

    /// True when every frame received so far is on disk.
    bool drained() const;
    std::uint64_t frames_written() const noexcept { return written_.load(); }
    void stop();

private:
    SceneHub& hub_;
    std::shared_ptr<ClientSession> session_;
    std::atomic<std::uint64_t> written_{0};
    std::atomic<bool> busy_{false};
    std::jthread thread_;
};

/// HTTP + WebSocket front end on one port: /ws/scene carries protocol
/// frames; /api/... are the JSON request/response endpoints.
class SceneServer {
public:
    explicit SceneServer(SceneHub& hub);
    ~SceneServer();

    SceneServer(const SceneServer&) = delete;
    SceneServer& operator=(const SceneServer&) = delete;

    /// Binds and starts serving on background threads; returns the bound port.
    std::uint16_t start(unsigned threads = 2);
    void stop();
    std::uint16_t port() const noexcept { return port_; }

private:
    struct Impl;
    SceneHub& hub_;
    std::unique_ptr<Impl> impl_;
    std::uint16_t port_ = 0;
};

}  // namespace splat
