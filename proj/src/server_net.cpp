#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <iostream>

#include "splat/server.hpp"

namespace splat {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

constexpr std::uint64_t kMaxUploadBytes = std::uint64_t{1} << 30;

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

Response json_response(const Request& req, http::status status, const nlohmann::json& body) {
    Response res{status, req.version()};
    res.set(http::field::content_type, "application/json");
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = body.dump();
    res.prepare_payload();
    return res;
}

Response error_response(const Request& req, http::status status, std::string_view error, std::string_view detail) {
    return json_response(req, status, {{"error", error}, {"detail", detail}});
}

std::string_view path_of(std::string_view target) { return target.substr(0, target.find('?')); }

std::string query_param(std::string_view target, std::string_view key) {
    const auto q = target.find('?');
    if (q == std::string_view::npos) return {};
    std::string_view rest = target.substr(q + 1);
    while (!rest.empty()) {
        const auto amp = rest.find('&');
        const std::string_view pair = rest.substr(0, amp);
        const auto eq = pair.find('=');
        if (pair.substr(0, eq) == key && eq != std::string_view::npos) return std::string(pair.substr(eq + 1));
        if (amp == std::string_view::npos) break;
        rest.remove_prefix(amp + 1);
    }
    return {};
}

Response handle_request(SceneHub& hub, const Request& req) {
    const std::string_view target(req.target().data(), req.target().size());
    const std::string_view path = path_of(target);
    const auto method = req.method();

    if (path == "/api/scene/version") {
        if (method != http::verb::get) return error_response(req, http::status::method_not_allowed, "MethodNotAllowed", path);
        const auto state = hub.current();
        return json_response(req, http::status::ok,
                             {{"version", state ? state->scene.version : 0},
                              {"splat_count", state ? state->scene.splats.size() : 0}});
    }

    if (path == "/api/pois") {
        if (method == http::verb::get) {
            PoiSet set = hub.pois();
            const std::string layers = query_param(target, "layers");
            if (!layers.empty()) set.pois = filter_pois(set.pois, parse_layers(layers));
            return json_response(req, http::status::ok, set);
        }
        if (method == http::verb::post) {
            try {
                const Poi poi = nlohmann::json::parse(req.body()).get<Poi>();
                return json_response(req, http::status::ok, hub.upsert_poi(poi));
            } catch (const nlohmann::json::exception& e) {
                return error_response(req, http::status::bad_request, errc_name(Errc::InvalidPoi), e.what());
            } catch (const Error& e) {
                return error_response(req, http::status::bad_request, e.name(), e.what());
            }
        }
        return error_response(req, http::status::method_not_allowed, "MethodNotAllowed", path);
    }

    constexpr std::string_view poi_prefix = "/api/pois/";
    if (path.starts_with(poi_prefix) && path.size() > poi_prefix.size()) {
        if (method != http::verb::delete_) {
            return error_response(req, http::status::method_not_allowed, "MethodNotAllowed", path);
        }
        const std::string id(path.substr(poi_prefix.size()));
        if (!hub.remove_poi(id)) return error_response(req, http::status::not_found, "NotFound", id);
        return json_response(req, http::status::ok, {{"removed", id}, {"revision", hub.pois().revision}});
    }

    if (path == "/api/ingest") {
        if (method != http::verb::post) return error_response(req, http::status::method_not_allowed, "MethodNotAllowed", path);
        if (!hub.config().upload_enabled) return error_response(req, http::status::forbidden, "UploadDisabled", path);
        try {
            const std::uint64_t version = hub.ingest_ply(as_bytes(req.body()));
            return json_response(req, http::status::ok,
                                 {{"version", version}, {"splat_count", hub.current()->scene.splats.size()}});
        } catch (const Error& e) {
            return error_response(req, http::status::unprocessable_entity, e.name(), e.what());
        }
    }

    return error_response(req, http::status::not_found, "NotFound", path);
}

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket&& socket, SceneHub& hub, std::shared_ptr<ClientSession> client)
        : ws_(std::move(socket)), hub_(hub), client_(std::move(client)) {}

    ~WsSession() { hub_.disconnect(client_); }

    void run(Request req) {
        ws_.binary(true);
        ws_.read_message_max(hub_.config().max_payload + kFrameHeaderSize);
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
    }

private:
    void on_accept(beast::error_code ec) {
        if (ec) return;
        std::weak_ptr<WsSession> weak = shared_from_this();
        client_->set_notify([weak] {
            if (auto self = weak.lock()) {
                asio::post(self->ws_.get_executor(), [self] { self->pump(); });
            }
        });
        do_read();
        pump();
    }

    void do_read() {
        ws_.async_read(in_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            closing_ = true;
            client_->close();
            return;
        }
        const auto data = in_.cdata();
        const ByteView bytes(static_cast<const std::uint8_t*>(data.data()), data.size());
        try {
            hub_.handle_client_frame(*client_, decode_frame(bytes, hub_.config().max_payload));
        } catch (const Error& e) {
            hub_.send_error(*client_, e.code(), e.what());
        }
        in_.consume(in_.size());
        do_read();
    }

    void pump() {
        if (writing_ || closing_) return;
        auto frame = client_->try_pop();
        if (!frame) return;
        writing_ = true;
        out_ = encode_frame(*frame);
        ws_.async_write(asio::buffer(out_), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        writing_ = false;
        if (ec) {
            closing_ = true;
            client_->close();
            return;
        }
        pump();
    }

    websocket::stream<beast::tcp_stream> ws_;
    SceneHub& hub_;
    std::shared_ptr<ClientSession> client_;
    beast::flat_buffer in_;
    Bytes out_;
    bool writing_ = false;
    bool closing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& socket, SceneHub& hub) : stream_(std::move(socket)), hub_(hub) {}

    void run() {
        asio::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
    }

private:
    void do_read() {
        parser_.emplace();
        parser_->body_limit(kMaxUploadBytes);
        stream_.expires_after(std::chrono::seconds(60));
        http::async_read(stream_, buffer_, *parser_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec == http::error::end_of_stream) {
            beast::error_code ignored;
            stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
            return;
        }
        if (ec) return;

        Request req = parser_->release();
        if (websocket::is_upgrade(req)) {
            const std::string target(req.target());
            if (path_of(target) != "/ws/scene") {
                send(error_response(req, http::status::not_found, "NotFound", target));
                return;
            }
            std::shared_ptr<ClientSession> client;
            try {
                client = hub_.connect();
            } catch (const Error& e) {
                auto res = error_response(req, http::status::service_unavailable, e.name(), e.what());
                res.keep_alive(false);
                send(std::move(res));
                return;
            }
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), hub_, std::move(client))->run(std::move(req));
            return;
        }
        send(handle_request(hub_, req));
    }

    void send(Response res) {
        auto held = std::make_shared<Response>(std::move(res));
        const bool close = held->need_eof();
        http::async_write(stream_, *held,
                          [self = shared_from_this(), held, close](beast::error_code ec, std::size_t) {
                              if (ec) return;
                              if (close) {
                                  beast::error_code ignored;
                                  self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                                  return;
                              }
                              self->do_read();
                          });
    }

    beast::tcp_stream stream_;
    SceneHub& hub_;
    beast::flat_buffer buffer_;
    std::optional<http::request_parser<http::string_body>> parser_;
};

}  // namespace

struct SceneServer::Impl {
    explicit Impl(SceneHub& h) : hub(h), acceptor(asio::make_strand(ioc)) {}

    void do_accept() {
        acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
            if (ec) {
                if (ec == asio::error::operation_aborted) return;
                std::cerr << "[server] accept: " << ec.message() << '\n';
            } else {
                std::make_shared<HttpSession>(std::move(socket), hub)->run();
            }
            do_accept();
        });
    }

    SceneHub& hub;
    asio::io_context ioc;
    tcp::acceptor acceptor;
    std::vector<std::thread> threads;
};

SceneServer::SceneServer(SceneHub& hub) : hub_(hub) {}

SceneServer::~SceneServer() { stop(); }

std::uint16_t SceneServer::start(unsigned threads) {
    if (impl_) return port_;
    impl_ = std::make_unique<Impl>(hub_);
    const auto& cfg = hub_.config();
    const tcp::endpoint endpoint(asio::ip::make_address(cfg.host), cfg.port);
    auto& acceptor = impl_->acceptor;
    acceptor.open(endpoint.protocol());
    acceptor.set_option(asio::socket_base::reuse_address(true));
    acceptor.bind(endpoint);
    acceptor.listen(asio::socket_base::max_listen_connections);
    port_ = acceptor.local_endpoint().port();
    impl_->do_accept();
    for (unsigned i = 0; i < std::max(1u, threads); ++i) {
        impl_->threads.emplace_back([io = &impl_->ioc] { io->run(); });
    }
    return port_;
}

void SceneServer::stop() {
    if (!impl_) return;
    impl_->ioc.stop();
    for (auto& t : impl_->threads) t.join();
    impl_.reset();
}

}  // namespace splat
