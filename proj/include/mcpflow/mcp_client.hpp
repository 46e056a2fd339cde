#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "mcpflow/detail/json_util.hpp"
#include "mcpflow/registry.hpp"

namespace mcpflow {

inline constexpr const char* kProtocolVersion = "2024-11-05";
inline constexpr double kDefaultConnectTimeout = 30.0;
inline constexpr double kDefaultCallTimeout = 60.0;
inline constexpr double kShutdownGraceSeconds = 3.0;

// ---------------------------------------------------------------------------
// Errors — distinct types so callers can tell spawn failures, timeouts and
// protocol violations apart. Messages carry the transport transcript tail.
// ---------------------------------------------------------------------------

struct ClientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SpawnError : ClientError { using ClientError::ClientError; };
struct TimeoutError : ClientError { using ClientError::ClientError; };
struct ProtocolError : ClientError { using ClientError::ClientError; };
struct SessionClosedError : ClientError { using ClientError::ClientError; };
struct SchemaViolationError : ClientError { using ClientError::ClientError; };
struct UnknownToolError : ClientError { using ClientError::ClientError; };

// ---------------------------------------------------------------------------
// Tool results
// ---------------------------------------------------------------------------

enum class ContentKind { text, image, resource };

struct ContentBlock {
    ContentKind kind = ContentKind::text;
    std::string payload;
};

struct ToolResult {
    std::vector<ContentBlock> content;
    bool is_error = false;
    double elapsed = 0.0;            // seconds
    json raw = json::object();       // verbatim response, kept even if parsing fails
    bool transport_failure = false;  // set by callers that record failures as results

    std::string text() const {
        std::string out;
        for (const auto& b : content)
            if (b.kind == ContentKind::text) out += b.payload;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Wire channels
// ---------------------------------------------------------------------------

class Channel {
public:
    virtual ~Channel() = default;
    virtual void send_line(const std::string& line) = 0;
    // Blocks up to timeout; nullopt on EOF/shutdown; throws TimeoutError.
    virtual std::optional<std::string> recv_line(double timeout_seconds) = 0;
    virtual void shutdown() = 0;

    std::string tail() const {
        std::string out;
        for (const auto& l : tail_) out += "\n  " + l;
        return out;
    }

protected:
    void remember(const char* direction, const std::string& line) {
        tail_.push_back(std::string(direction) + " " +
                        (line.size() > 300 ? line.substr(0, 300) + "..." : line));
        while (tail_.size() > 16) tail_.pop_front();
    }
    std::deque<std::string> tail_;
};

// Newline-delimited JSON over a child process's stdin/stdout. stderr goes to
// a per-session log file.
class StdioChannel : public Channel {
public:
    StdioChannel(const LaunchSpec& launch, const std::filesystem::path& stderr_log) {
        int in_pipe[2], out_pipe[2];
        if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw SpawnError("pipe() failed");
        pid_ = fork();
        if (pid_ < 0) throw SpawnError("fork() failed");
        if (pid_ == 0) {
            dup2(in_pipe[0], STDIN_FILENO);
            dup2(out_pipe[1], STDOUT_FILENO);
            int err_fd = ::open(stderr_log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
            if (err_fd >= 0) dup2(err_fd, STDERR_FILENO);
            close(in_pipe[0]); close(in_pipe[1]);
            close(out_pipe[0]); close(out_pipe[1]);
            std::vector<char*> argv;
            argv.push_back(const_cast<char*>(launch.command.c_str()));
            for (const auto& a : launch.args) argv.push_back(const_cast<char*>(a.c_str()));
            argv.push_back(nullptr);
            for (const auto& [k, v] : launch.env) setenv(k.c_str(), v.c_str(), 1);
            execvp(launch.command.c_str(), argv.data());
            _exit(127);
        }
        close(in_pipe[0]);
        close(out_pipe[1]);
        write_fd_ = in_pipe[1];
        read_fd_ = out_pipe[0];

        // execvp failure is an immediate exit 127; probe so a missing binary
        // surfaces as a spawn error rather than a handshake timeout.
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        int status = 0;
        if (waitpid(pid_, &status, WNOHANG) == pid_) {
            reaped_ = true;
            if (WIFEXITED(status) && WEXITSTATUS(status) == 127)
                throw SpawnError("cannot execute '" + launch.command + "'");
        }
    }

    ~StdioChannel() override { shutdown(); }

    void send_line(const std::string& line) override {
        if (line.find('\n') != std::string::npos)
            throw ProtocolError("frame contains embedded newline");
        std::string framed = line + "\n";
        remember(">>", line);
        ssize_t n = ::write(write_fd_, framed.data(), framed.size());
        if (n != ssize_t(framed.size()))
            throw SessionClosedError("write to server failed" + tail());
    }

    std::optional<std::string> recv_line(double timeout_seconds) override {
        auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(timeout_seconds));
        for (;;) {
            size_t nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                remember("<<", line);
                return line;
            }
            auto remaining = deadline - std::chrono::steady_clock::now();
            if (remaining <= std::chrono::steady_clock::duration::zero())
                throw TimeoutError("timed out waiting for server frame" + tail());
            struct pollfd pfd{read_fd_, POLLIN, 0};
            int ms = int(std::chrono::duration_cast<std::chrono::milliseconds>(remaining).count());
            int rc = ::poll(&pfd, 1, std::max(1, std::min(ms, 200)));
            if (rc < 0) return std::nullopt;
            if (rc == 0) continue;
            char chunk[4096];
            ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
            if (n <= 0) return std::nullopt;  // EOF
            buffer_.append(chunk, size_t(n));
        }
    }

    void shutdown() override {
        if (pid_ <= 0) return;
        if (write_fd_ >= 0) { close(write_fd_); write_fd_ = -1; }
        if (!reaped_) {
            ::kill(pid_, SIGTERM);
            auto deadline = std::chrono::steady_clock::now() +
                            std::chrono::duration<double>(kShutdownGraceSeconds);
            int status = 0;
            while (std::chrono::steady_clock::now() < deadline) {
                if (waitpid(pid_, &status, WNOHANG) == pid_) { reaped_ = true; break; }
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
            }
            if (!reaped_) {
                ::kill(pid_, SIGKILL);
                waitpid(pid_, &status, 0);
                reaped_ = true;
            }
        }
        if (read_fd_ >= 0) { close(read_fd_); read_fd_ = -1; }
        pid_ = -1;
    }

private:
    pid_t pid_ = -1;
    int read_fd_ = -1;
    int write_fd_ = -1;
    bool reaped_ = false;
    std::string buffer_;
};

// HTTP SSE pairing: a long-lived GET event stream delivers messages; an
// "endpoint" event names the POST path for requests.
class SseChannel : public Channel {
public:
    SseChannel(const std::string& url, double connect_timeout) {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw SpawnError("bad sse url: " + url);
        auto path_start = url.find('/', scheme_end + 3);
        std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
        std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

        stream_client_ = std::make_unique<httplib::Client>(base);
        stream_client_->set_read_timeout(3600, 0);
        post_client_ = std::make_unique<httplib::Client>(base);

        reader_ = std::thread([this, path] {
            httplib::Headers headers{{"Accept", "text/event-stream"}};
            stream_client_->Get(path, headers, [this](const char* data, size_t len) {
                on_stream_data(std::string_view(data, len));
                return !stopping_.load();
            });
            std::lock_guard lock(mutex_);
            stream_done_ = true;
            cv_.notify_all();
        });

        std::unique_lock lock(mutex_);
        if (!cv_.wait_for(lock, std::chrono::duration<double>(connect_timeout),
                          [this] { return !endpoint_.empty() || stream_done_; }) ||
            endpoint_.empty())
            throw SpawnError("sse stream did not announce an endpoint: " + url);
    }

    ~SseChannel() override { shutdown(); }

    void send_line(const std::string& line) override {
        remember(">>", line);
        std::string endpoint;
        {
            std::lock_guard lock(mutex_);
            endpoint = endpoint_;
        }
        auto res = post_client_->Post(endpoint, line, "application/json");
        if (!res || res->status >= 400)
            throw SessionClosedError("sse post failed" + tail());
    }

    std::optional<std::string> recv_line(double timeout_seconds) override {
        std::unique_lock lock(mutex_);
        if (!cv_.wait_for(lock, std::chrono::duration<double>(timeout_seconds),
                          [this] { return !messages_.empty() || stream_done_; }))
            throw TimeoutError("timed out waiting for sse event" + tail());
        if (messages_.empty()) return std::nullopt;
        std::string line = std::move(messages_.front());
        messages_.pop_front();
        remember("<<", line);
        return line;
    }

    void shutdown() override {
        stopping_ = true;
        if (stream_client_) stream_client_->stop();
        if (reader_.joinable()) reader_.join();
    }

private:
    void on_stream_data(std::string_view chunk) {
        std::string event, data;
        stream_buffer_.append(chunk);
        size_t sep;
        while ((sep = stream_buffer_.find("\n\n")) != std::string::npos) {
            std::string block = stream_buffer_.substr(0, sep);
            stream_buffer_.erase(0, sep + 2);
            event = "message";
            data.clear();
            size_t pos = 0;
            while (pos < block.size()) {
                size_t eol = block.find('\n', pos);
                std::string line = block.substr(pos, eol == std::string::npos
                                                        ? std::string::npos : eol - pos);
                pos = eol == std::string::npos ? block.size() : eol + 1;
                if (line.rfind("event:", 0) == 0) event = detail::trim(line.substr(6));
                else if (line.rfind("data:", 0) == 0) {
                    if (!data.empty()) data += "\n";
                    data += detail::trim(line.substr(5));
                }
            }
            std::lock_guard lock(mutex_);
            if (event == "endpoint") endpoint_ = data;
            else if (event == "message") messages_.push_back(data);
            cv_.notify_all();
        }
    }

    std::unique_ptr<httplib::Client> stream_client_;
    std::unique_ptr<httplib::Client> post_client_;
    std::thread reader_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::string endpoint_;
    std::deque<std::string> messages_;
    std::string stream_buffer_;
    bool stream_done_ = false;
    std::atomic<bool> stopping_{false};
};

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

enum class SessionState { connecting, ready, closed, failed };

struct ServerInfo {
    std::string name;
    std::string version;
};

// One logical conversation with one server. Transferable between threads,
// not shareable: overlapping calls on the same session are rejected.
class Session {
public:
    static Session connect(const LaunchSpec& launch, double timeout = kDefaultConnectTimeout,
                           std::filesystem::path stderr_log = {}) {
        launch.validate();
        Session s;
        s.st_ = std::make_unique<State>();
        if (stderr_log.empty())
            stderr_log = std::filesystem::temp_directory_path() /
                         ("mcpflow-session-" + std::to_string(::getpid()) + "-" +
                          std::to_string(counter_++) + ".log");
        s.st_->stderr_log = stderr_log;
        try {
            if (launch.transport == Transport::stdio)
                s.st_->channel = std::make_unique<StdioChannel>(launch, stderr_log);
            else
                s.st_->channel = std::make_unique<SseChannel>(launch.url, timeout);
            s.handshake(timeout);
        } catch (...) {
            s.st_->state = SessionState::failed;
            throw;
        }
        s.st_->state = SessionState::ready;
        return s;
    }

    Session(Session&&) = default;
    Session& operator=(Session&&) = default;
    ~Session() {
        if (st_) close();
    }

    SessionState state() const { return st_->state; }
    const std::string& protocol_version() const { return st_->protocol_version; }
    const ServerInfo& server_info() const { return st_->server_info; }
    const std::vector<std::string>& schema_warnings() const { return st_->schema_warnings; }
    const std::filesystem::path& stderr_log() const { return st_->stderr_log; }

    // Follows pagination cursors until exhausted; every tool is validated
    // against the registry invariants.
    std::vector<ToolSpec> list_tools(double timeout = kDefaultCallTimeout) {
        require_ready();
        InFlightGuard guard(*st_);
        std::vector<ToolSpec> tools;
        json cursor;
        for (;;) {
            json params = json::object();
            if (!cursor.is_null()) params["cursor"] = cursor;
            json result = request("tools/list", params, timeout);
            for (const auto& tj : result.value("tools", json::array())) {
                ToolSpec t;
                t.name = tj.value("name", "");
                t.description = tj.value("description", "");
                t.input_schema = tj.value("inputSchema", json::object());
                try {
                    auto findings = t.validate();
                    st_->schema_warnings.insert(st_->schema_warnings.end(), findings.begin(),
                                                findings.end());
                } catch (const std::invalid_argument& e) {
                    throw SchemaViolationError(e.what());
                }
                for (const auto& existing : tools)
                    if (existing.name == t.name)
                        throw SchemaViolationError("duplicate tool name: " + t.name);
                tools.push_back(std::move(t));
            }
            if (!result.contains("nextCursor") || result["nextCursor"].is_null()) break;
            cursor = result["nextCursor"];
        }
        st_->cached_tools = tools;
        st_->have_tools = true;
        return tools;
    }

    ToolResult call_tool(const std::string& name, const json& arguments,
                         double timeout = kDefaultCallTimeout) {
        require_ready();
        if (!st_->have_tools) list_tools(timeout);
        bool known = false;
        for (const auto& t : st_->cached_tools) known = known || t.name == name;
        if (!known) throw UnknownToolError("unknown tool: " + name);
        InFlightGuard guard(*st_);

        auto start = std::chrono::steady_clock::now();
        json result = request("tools/call", json{{"name", name}, {"arguments", arguments}},
                              timeout);
        ToolResult out;
        out.elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.raw = result;
        out.is_error = result.value("isError", false);
        try {
            for (const auto& block : result.value("content", json::array())) {
                ContentBlock cb;
                std::string type = block.value("type", "text");
                if (type == "text") {
                    cb.kind = ContentKind::text;
                    cb.payload = block.value("text", "");
                } else if (type == "image") {
                    cb.kind = ContentKind::image;
                    cb.payload = block.value("data", "");
                } else {
                    cb.kind = ContentKind::resource;
                    cb.payload = block.value("resource", json::object()).dump();
                }
                out.content.push_back(std::move(cb));
            }
        } catch (const json::exception&) {
            out.content.clear();  // raw still carries the response
        }
        return out;
    }

    // Idempotent. Terminates the subprocess (graceful, then forced) or
    // closes the stream; an in-flight call resolves with a closed error.
    void close() {
        if (!st_ || st_->state == SessionState::closed) return;
        st_->closed_flag = true;
        if (st_->channel) st_->channel->shutdown();
        st_->state = SessionState::closed;
    }

private:
    Session() = default;

    struct State {
        std::unique_ptr<Channel> channel;
        SessionState state = SessionState::connecting;
        std::string protocol_version;
        ServerInfo server_info;
        std::vector<ToolSpec> cached_tools;
        bool have_tools = false;
        std::vector<std::string> schema_warnings;
        std::filesystem::path stderr_log;
        int next_id = 1;
        std::atomic<bool> in_flight{false};
        std::atomic<bool> closed_flag{false};
    };

    struct InFlightGuard {
        explicit InFlightGuard(State& s) : st(s) {
            bool expected = false;
            if (!st.in_flight.compare_exchange_strong(expected, true))
                throw ProtocolError("overlapping call on one session");
        }
        ~InFlightGuard() { st.in_flight = false; }
        State& st;
    };

    void require_ready() const {
        if (st_->state == SessionState::closed || st_->closed_flag)
            throw SessionClosedError("session is closed");
        if (st_->state != SessionState::ready) throw ProtocolError("session not ready");
    }

    void handshake(double timeout) {
        json init_params{{"protocolVersion", kProtocolVersion},
                         {"capabilities", json::object()},
                         {"clientInfo", {{"name", "mcpflow"}, {"version", "0.1.0"}}}};
        json result = request("initialize", init_params, timeout, /*handshake=*/true);
        st_->protocol_version = result.value("protocolVersion", "");
        if (result.contains("serverInfo")) {
            st_->server_info.name = result["serverInfo"].value("name", "");
            st_->server_info.version = result["serverInfo"].value("version", "");
        }
        json note{{"jsonrpc", "2.0"}, {"method", "notifications/initialized"}};
        st_->channel->send_line(note.dump());
    }

    // One JSON-RPC exchange. Notifications arriving in between are skipped;
    // a response with an id we never issued is a protocol error.
    json request(const std::string& method, const json& params, double timeout,
                 bool handshake = false) {
        int id = st_->next_id++;
        json req{{"jsonrpc", "2.0"}, {"id", id}, {"method", method}, {"params", params}};
        try {
            st_->channel->send_line(req.dump());
            for (;;) {
                auto line = st_->channel->recv_line(timeout);
                if (!line) {
                    if (st_->closed_flag)
                        throw SessionClosedError("session closed during in-flight call");
                    st_->state = SessionState::failed;
                    throw SessionClosedError("server closed the connection" +
                                             st_->channel->tail());
                }
                if (detail::trim(*line).empty()) continue;
                json msg = json::parse(*line, nullptr, false);
                if (msg.is_discarded()) {
                    st_->state = SessionState::failed;
                    throw ProtocolError("malformed frame from server" + st_->channel->tail());
                }
                if (!msg.contains("id") || msg["id"].is_null()) continue;  // notification
                if (msg["id"] != id) {
                    st_->state = SessionState::failed;
                    throw ProtocolError("response id does not match the outstanding request" +
                                        st_->channel->tail());
                }
                if (msg.contains("error")) {
                    std::string emsg = msg["error"].value("message", "unknown error");
                    throw ProtocolError((handshake ? "initialize rejected: " : "server error: ") +
                                        emsg);
                }
                return msg.value("result", json::object());
            }
        } catch (const TimeoutError& e) {
            if (handshake) {
                st_->state = SessionState::failed;
                throw TimeoutError(std::string("handshake timed out: ") + e.what());
            }
            throw;
        }
    }

    std::unique_ptr<State> st_;
    inline static std::atomic<int> counter_{0};
};

}  // namespace mcpflow
