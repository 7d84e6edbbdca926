#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>

#include "hytwin/cosim.hpp"
#include "hytwin/error.hpp"

namespace hytwin::cosim {

namespace {

constexpr std::size_t max_line_bytes = 64u << 20;

[[noreturn]] void connection_error(const std::string& what) {
    throw Error("PROTO_CONNECTION", what + ": " + std::strerror(errno));
}

std::string describe(const Hello& h) {
    std::string tags;
    for (const auto& f : h.features) {
        tags += (tags.empty() ? "" : ",") + f;
    }
    return "features [" + tags + "], label " + h.label + ", enc_len " + std::to_string(h.enc_len) + ", dec_len " +
           std::to_string(h.dec_len) + (h.label_feedback ? ", label feedback" : "");
}

}  // namespace

std::uint16_t port_from_env(std::uint16_t fallback) {
    const char* env = std::getenv("HYTWIN_PORT");
    if (env == nullptr || *env == '\0') {
        return fallback;
    }
    const std::string_view text(env);
    unsigned value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size() || value > 65535) {
        throw Error("CONFIG_INVALID", "HYTWIN_PORT must be a port number, got '" + std::string(text) + "'");
    }
    return static_cast<std::uint16_t>(value);
}

// --- ServerSession -------------------------------------------------------------

ServerSession::ServerSession(surrogate::Seq2SeqModel model) : model_(std::move(model)), expected_(hello_for(model_)) {
    model_.validate();
}

Message ServerSession::fail(std::string code, std::string detail) {
    phase_ = Phase::Closed;
    return ErrorMsg{std::move(code), std::move(detail)};
}

std::optional<Message> ServerSession::handle_line(std::string_view line) {
    if (phase_ == Phase::Closed) {
        return std::nullopt;
    }
    Message msg;
    try {
        msg = decode(line);
    } catch (const Error& e) {
        return fail(e.code(), e.detail());
    }
    return handle(msg);
}

std::optional<Message> ServerSession::handle(const Message& msg) {
    if (phase_ == Phase::Closed) {
        return std::nullopt;
    }
    if (std::holds_alternative<Shutdown>(msg)) {
        phase_ = Phase::Closed;
        return std::nullopt;
    }
    if (phase_ == Phase::AwaitHello) {
        const auto* hello = std::get_if<Hello>(&msg);
        if (hello == nullptr) {
            return fail("NOT_READY", "expected hello before any other message");
        }
        if (hello->version != protocol_version) {
            return fail("SPEC_MISMATCH", "unsupported protocol version " + std::to_string(hello->version));
        }
        if (!(*hello == expected_)) {
            return fail("SPEC_MISMATCH", "client expects " + describe(*hello) + "; served model has " + describe(expected_));
        }
        phase_ = Phase::Ready;
        return HelloAck{};
    }

    const auto* predict = std::get_if<Predict>(&msg);
    if (predict == nullptr) {
        return fail("PROTO_MALFORMED", "only predict or shutdown are valid after the handshake");
    }
    if (last_seq_ && predict->seq <= *last_seq_) {
        return fail("SEQ_ORDER", "seq " + std::to_string(predict->seq) + " does not follow " + std::to_string(*last_seq_));
    }
    const auto& d = model_.dims;
    if (predict->enc.rows() != d.enc_len || predict->enc.cols() != d.enc_features || predict->dec.rows() != d.dec_len ||
        predict->dec.cols() != d.dec_features) {
        return fail("SPEC_MISMATCH", "predict matrices do not match the negotiated dims");
    }
    last_seq_ = predict->seq;
    surrogate::seq2seq_forward(d, model_.params, predict->enc, predict->dec, cache_);
    ++answered_;
    return Prediction{predict->seq, {cache_.predictions.data(), cache_.predictions.data() + cache_.predictions.size()}};
}

// --- Connection / Listener -------------------------------------------------------

Connection::Connection(Connection&& other) noexcept : fd_(other.fd_), buffer_(std::move(other.buffer_)) {
    other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        buffer_ = std::move(other.buffer_);
        other.fd_ = -1;
    }
    return *this;
}

Connection::~Connection() { close(); }

void Connection::close() noexcept {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Connection Connection::connect(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    const std::string service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &found); rc != 0) {
        throw Error("PROTO_CONNECTION", "cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (auto* ai = found; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
            break;
        }
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(found);
    if (fd < 0) {
        connection_error("cannot connect to " + host + ":" + service);
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return Connection(fd);
}

void Connection::write_line(std::string_view line) {
    if (fd_ < 0) {
        throw Error("PROTO_CONNECTION", "connection is closed");
    }
    std::string data(line);
    if (data.empty() || data.back() != '\n') {
        data.push_back('\n');
    }
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            connection_error("send failed");
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::optional<std::string> Connection::read_line(std::optional<std::chrono::milliseconds> timeout) {
    if (fd_ < 0) {
        throw Error("PROTO_CONNECTION", "connection is closed");
    }
    const auto deadline = timeout ? std::chrono::steady_clock::now() + *timeout : std::chrono::steady_clock::time_point{};
    while (true) {
        if (const auto pos = buffer_.find('\n'); pos != std::string::npos) {
            std::string line = buffer_.substr(0, pos);
            buffer_.erase(0, pos + 1);
            return line;
        }
        if (buffer_.size() > max_line_bytes) {
            throw Error("PROTO_MALFORMED", "line exceeds " + std::to_string(max_line_bytes) + " bytes");
        }
        int wait_ms = -1;
        if (timeout) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) {
                throw Error("PROTO_TIMEOUT", "no reply within " + std::to_string(timeout->count()) + " ms");
            }
            wait_ms = static_cast<int>(left.count());
        }
        pollfd pfd{fd_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, wait_ms);
        if (ready < 0) {
            if (errno == EINTR) {
                continue;
            }
            connection_error("poll failed");
        }
        if (ready == 0) {
            continue;
        }
        char chunk[65536];
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            connection_error("receive failed");
        }
        if (n == 0) {
            if (!buffer_.empty()) {
                throw Error("PROTO_MALFORMED", "connection closed inside a line");
            }
            return std::nullopt;
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

Listener::Listener(std::uint16_t port, const std::string& host) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) {
        connection_error("cannot create socket");
    }
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw Error("PROTO_CONNECTION", "listen address must be an IPv4 literal, got " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 1) != 0) {
        const int saved = errno;
        ::close(fd_);
        errno = saved;
        connection_error("cannot listen on " + host + ":" + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

Listener::~Listener() {
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

Connection Listener::accept() {
    while (true) {
        const int fd = ::accept(fd_, nullptr, nullptr);
        if (fd >= 0) {
            const int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return Connection(fd);
        }
        if (errno != EINTR) {
            connection_error("accept failed");
        }
    }
}

// --- ModelServer -------------------------------------------------------------------

ModelServer::ModelServer(surrogate::Seq2SeqModel model, std::uint16_t port, const std::string& host)
    : model_(std::move(model)), listener_(port, host) {
    model_.validate();
}

std::size_t ModelServer::serve_one() {
    Connection conn = listener_.accept();
    ServerSession session(model_);
    try {
        while (session.phase() != Phase::Closed) {
            const auto line = conn.read_line(std::nullopt);
            if (!line) {
                break;
            }
            if (const auto reply = session.handle_line(*line)) {
                conn.write_line(encode(*reply));
            }
        }
    } catch (const Error& e) {
        if (e.code() == "PROTO_MALFORMED") {
            try {
                conn.write_line(encode(ErrorMsg{e.code(), e.detail()}));
            } catch (const Error&) {
            }
        } else if (e.code() != "PROTO_CONNECTION") {
            throw;
        }
    }
    return session.answered();
}

// --- Client ------------------------------------------------------------------------

Client::Client(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout)
    : conn_(Connection::connect(host, port)), timeout_(timeout) {}

Client::~Client() {
    if (conn_.is_open()) {
        try {
            shutdown();
        } catch (const Error&) {
        }
    }
}

Message Client::receive() {
    const auto line = conn_.read_line(timeout_);
    if (!line) {
        conn_.close();
        throw Error("PROTO_CONNECTION", "server closed the connection");
    }
    Message msg;
    try {
        msg = decode(*line);
    } catch (const Error&) {
        conn_.close();
        throw;
    }
    if (const auto* err = std::get_if<ErrorMsg>(&msg)) {
        conn_.close();
        throw Error(err->code, err->detail);
    }
    return msg;
}

void Client::hello(const Hello& hello) {
    conn_.write_line(encode(hello));
    const auto reply = receive();
    const auto* ack = std::get_if<HelloAck>(&reply);
    if (ack == nullptr) {
        conn_.close();
        throw Error("PROTO_MALFORMED", "expected hello_ack");
    }
    if (ack->version != protocol_version) {
        conn_.close();
        throw Error("PROTO_MALFORMED", "server acknowledged protocol version " + std::to_string(ack->version));
    }
}

std::vector<double> Client::predict(const Matrix& enc, const Matrix& dec) {
    const std::int64_t seq = ++seq_;
    conn_.write_line(encode(Predict{seq, enc, dec}));
    auto reply = receive();
    auto* prediction = std::get_if<Prediction>(&reply);
    if (prediction == nullptr) {
        conn_.close();
        throw Error("PROTO_MALFORMED", "expected prediction");
    }
    if (prediction->seq != seq) {
        conn_.close();
        throw Error("PROTO_MALFORMED",
                    "prediction seq " + std::to_string(prediction->seq) + " does not answer " + std::to_string(seq));
    }
    if (static_cast<surrogate::Index>(prediction->y.size()) != dec.rows()) {
        conn_.close();
        throw Error("PROTO_MALFORMED", "prediction has " + std::to_string(prediction->y.size()) + " values");
    }
    return std::move(prediction->y);
}

void Client::shutdown() {
    if (conn_.is_open()) {
        try {
            conn_.write_line(encode(Shutdown{}));
        } catch (const Error&) {
        }
        conn_.close();
    }
}

// --- Remote binding ------------------------------------------------------------------

RemotePredictor::RemotePredictor(surrogate::Seq2SeqModel model, const std::string& host, std::uint16_t port,
                                 std::chrono::milliseconds timeout)
    : model_(std::move(model)), client_(host, port, timeout) {
    model_.validate();
    try {
        client_.hello(hello_for(model_));
    } catch (const Error& e) {
        if (e.code() == "SPEC_MISMATCH") {
            throw Error("REMOTE_SPEC_MISMATCH", e.detail());
        }
        throw;
    }
}

std::vector<double> RemotePredictor::predict(const Matrix& enc_raw, const Matrix& dec_raw, std::span<const double>) {
    Matrix enc = enc_raw;
    Matrix dec = dec_raw;
    surrogate::normalize_encoder(model_, enc);
    surrogate::normalize_decoder(model_, dec);
    auto y = client_.predict(enc, dec);
    for (auto& v : y) {
        v = model_.label_norm.invert(0, v);
    }
    return y;
}

hybrid::TerminalBinding bind_remote(const plant::Plant& plant, const surrogate::Seq2SeqModel& model,
                                    const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
    for (const auto& tag : model.feature_tags()) {
        if (!plant.has_tag(tag)) {
            throw Error("UNKNOWN_TAG", tag);
        }
    }
    return hybrid::bind_surrogate(plant, model.dims, model.feature_tags(), model.label_tag(),
                                  std::make_shared<RemotePredictor>(model, host, port, timeout));
}

}  // namespace hytwin::cosim
