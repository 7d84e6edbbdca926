#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hytwin/hybrid.hpp"
#include "hytwin/seq2seq.hpp"

namespace hytwin::cosim {

using surrogate::Matrix;

inline constexpr int protocol_version = 1;
inline constexpr std::uint16_t default_port = 7878;
inline constexpr std::chrono::milliseconds default_timeout{10'000};

/// HYTWIN_PORT if set and valid, else `fallback`. Throws CONFIG_INVALID on
/// a malformed value.
[[nodiscard]] std::uint16_t port_from_env(std::uint16_t fallback = default_port);

// --- Messages -------------------------------------------------------------------

struct Hello {
    int version = protocol_version;
    std::vector<std::string> features;
    std::string label;
    std::int64_t enc_len = 0;
    std::int64_t dec_len = 0;
    /// Encoder rows carry the label as an extra last column.
    bool label_feedback = false;

    friend bool operator==(const Hello&, const Hello&) = default;
};

struct HelloAck {
    int version = protocol_version;
    friend bool operator==(const HelloAck&, const HelloAck&) = default;
};

struct Predict {
    std::int64_t seq = 0;
    Matrix enc;  // enc_len x encoder columns, normalized
    Matrix dec;  // dec_len x features, normalized

    friend bool operator==(const Predict& a, const Predict& b) {
        return a.seq == b.seq && a.enc.rows() == b.enc.rows() && a.enc.cols() == b.enc.cols() &&
               a.dec.rows() == b.dec.rows() && a.dec.cols() == b.dec.cols() && a.enc == b.enc && a.dec == b.dec;
    }
};

struct Prediction {
    std::int64_t seq = 0;
    std::vector<double> y;  // dec_len, normalized
    friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct ErrorMsg {
    std::string code;
    std::string detail;
    friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

struct Shutdown {
    friend bool operator==(const Shutdown&, const Shutdown&) = default;
};

using Message = std::variant<Hello, HelloAck, Predict, Prediction, ErrorMsg, Shutdown>;

/// One JSON object terminated by '\n'.
[[nodiscard]] std::string encode(const Message& msg);
/// Accepts one line with or without its '\n'. Throws PROTO_MALFORMED.
[[nodiscard]] Message decode(std::string_view line);

/// The Hello a client sends for a model.
[[nodiscard]] Hello hello_for(const surrogate::Seq2SeqModel& model);

// --- Server session ----------------------------------------------------------------

enum class Phase { AwaitHello, Ready, Closed };

/// Protocol state machine of the serving side, independent of transport.
class ServerSession {
public:
    explicit ServerSession(surrogate::Seq2SeqModel model);

    /// Reply to one incoming line, if any. Every error reply closes the
    /// session.
    [[nodiscard]] std::optional<Message> handle_line(std::string_view line);
    [[nodiscard]] std::optional<Message> handle(const Message& msg);

    [[nodiscard]] Phase phase() const noexcept { return phase_; }
    [[nodiscard]] std::size_t answered() const noexcept { return answered_; }

private:
    Message fail(std::string code, std::string detail);

    surrogate::Seq2SeqModel model_;
    Hello expected_;
    Phase phase_ = Phase::AwaitHello;
    std::optional<std::int64_t> last_seq_;
    std::size_t answered_ = 0;
    surrogate::ForwardCache cache_;
};

// --- Transport -----------------------------------------------------------------------

/// Connected TCP stream carrying newline-delimited lines.
class Connection {
public:
    explicit Connection(int fd) noexcept : fd_(fd) {}
    Connection(Connection&& other) noexcept;
    Connection& operator=(Connection&& other) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;
    ~Connection();

    /// Connects to host:port. Throws PROTO_CONNECTION.
    static Connection connect(const std::string& host, std::uint16_t port);

    /// Throws PROTO_CONNECTION.
    void write_line(std::string_view line);
    /// Next line without its '\n'; nullopt on orderly close. Throws
    /// PROTO_TIMEOUT, PROTO_CONNECTION or PROTO_MALFORMED (oversized line).
    [[nodiscard]] std::optional<std::string> read_line(std::optional<std::chrono::milliseconds> timeout);
    void close() noexcept;
    [[nodiscard]] bool is_open() const noexcept { return fd_ >= 0; }

private:
    int fd_ = -1;
    std::string buffer_;
};

/// Listening TCP socket; port 0 picks a free port.
class Listener {
public:
    explicit Listener(std::uint16_t port, const std::string& host = "127.0.0.1");
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;
    ~Listener();

    [[nodiscard]] std::uint16_t port() const noexcept { return port_; }
    [[nodiscard]] Connection accept();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

/// Hosts one model; each serve_one() handles exactly one client session.
class ModelServer {
public:
    ModelServer(surrogate::Seq2SeqModel model, std::uint16_t port, const std::string& host = "127.0.0.1");

    [[nodiscard]] std::uint16_t port() const noexcept { return listener_.port(); }
    /// Accepts one connection and serves it until Shutdown, an error reply
    /// or disconnect. Returns the number of predictions answered.
    std::size_t serve_one();

private:
    surrogate::Seq2SeqModel model_;
    Listener listener_;
};

/// Blocking client for one session.
class Client {
public:
    Client(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout = default_timeout);
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;
    ~Client();

    /// Throws the server's ErrorMsg code verbatim, PROTO_TIMEOUT,
    /// PROTO_MALFORMED or PROTO_CONNECTION.
    void hello(const Hello& hello);
    /// Normalized matrices in, normalized predictions out.
    [[nodiscard]] std::vector<double> predict(const Matrix& enc, const Matrix& dec);
    void shutdown();

private:
    Message receive();

    Connection conn_;
    std::chrono::milliseconds timeout_;
    std::int64_t seq_ = 0;
};

/// Surrogate hosted by a cosim server. The local copy of the model supplies
/// the normalization on both sides of the call.
class RemotePredictor final : public hybrid::Predictor {
public:
    RemotePredictor(surrogate::Seq2SeqModel model, const std::string& host, std::uint16_t port,
                    std::chrono::milliseconds timeout = default_timeout);

    [[nodiscard]] std::vector<double> predict(const Matrix& enc_raw, const Matrix& dec_raw,
                                              std::span<const double> dec_times) override;

private:
    surrogate::Seq2SeqModel model_;
    Client client_;
};

/// Handshakes with a remote model and binds it to the plant. A rejected
/// handshake surfaces as REMOTE_SPEC_MISMATCH.
[[nodiscard]] hybrid::TerminalBinding bind_remote(const plant::Plant& plant, const surrogate::Seq2SeqModel& model,
                                                  const std::string& host, std::uint16_t port,
                                                  std::chrono::milliseconds timeout = default_timeout);

}  // namespace hytwin::cosim
