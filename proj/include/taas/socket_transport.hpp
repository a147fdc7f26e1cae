#pragma once

// TCP transport for live runs and a thread-per-actor host around it.
//
// Framing is the wire.hpp frame. Each endpoint optionally listens; a send
// goes over an outbound connection to the target's directory address, or,
// for endpoints without one (clients), back over the connection the target
// last spoke on. Delivery is at-most-once: a broken connection drops
// whatever it still had queued, and the actors' retransmission covers it.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "taas/runtime.hpp"
#include "taas/wire.hpp"

namespace taas {

// "host:port"; throws std::invalid_argument.
std::pair<std::string, std::uint16_t> split_address(const std::string& address);

struct TransportStats {
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t connect_failures = 0;
    std::uint64_t dropped = 0;
};

class SocketTransport {
  public:
    using Handler = std::function<void(EndpointId from, Bytes message)>;

    // `listen` may use port 0; port() then reports the bound port.
    SocketTransport(EndpointId self, std::optional<std::string> listen, std::map<EndpointId, std::string> directory,
                    Handler handler);
    ~SocketTransport();
    SocketTransport(const SocketTransport&) = delete;
    SocketTransport& operator=(const SocketTransport&) = delete;

    void start();
    // Closes every socket and joins the IO thread.
    void stop();

    void send(EndpointId to, Bytes message);
    void set_address(EndpointId id, std::string address);

    std::uint16_t port() const { return port_; }
    TransportStats stats() const;

  private:
    struct Conn {
        int fd = -1;
        bool connecting = false;
        std::optional<EndpointId> outbound_to;
        FrameDecoder decoder;
        std::deque<Bytes> out;
        std::size_t out_pos = 0;
    };

    void loop();
    void wake();
    void flush_sends();
    int connect_to(EndpointId to);
    void close_conn(int fd);
    void on_readable(Conn& c);
    void on_writable(Conn& c);

    EndpointId self_;
    std::optional<std::string> listen_addr_;
    Handler handler_;
    int listen_fd_ = -1;
    int wake_pipe_[2] = {-1, -1};
    std::uint16_t port_ = 0;
    std::thread io_;
    std::atomic<bool> running_{false};

    mutable std::mutex mu_;
    std::map<EndpointId, std::string> directory_;
    std::vector<std::pair<EndpointId, Bytes>> outgoing_;
    TransportStats stats_;

    // IO thread only.
    std::map<int, Conn> conns_;
    std::map<EndpointId, int> outbound_;
    std::map<EndpointId, int> inbound_;
    std::map<EndpointId, std::chrono::steady_clock::time_point> connect_backoff_;
};

// Microseconds on the process-wide steady clock.
Micros live_now();

// Runs one actor on its own thread with a SocketTransport. Handlers run
// under the host mutex, so inspect() sees the actor between handlers.
class LiveHost {
  public:
    using Factory = std::function<std::unique_ptr<Actor>()>;

    LiveHost(EndpointId id, std::optional<std::string> listen, std::map<EndpointId, std::string> directory,
             Factory factory);
    ~LiveHost();
    LiveHost(const LiveHost&) = delete;
    LiveHost& operator=(const LiveHost&) = delete;

    // Fresh incarnation from the factory.
    void start();
    // Crash stop: the actor and its transport are destroyed.
    void stop();
    bool running() const { return running_; }
    EndpointId id() const { return id_; }
    std::uint16_t port() const;

    // Runs `fn` against the live actor (nullptr while stopped).
    void inspect(const std::function<void(Actor*)>& fn);
    std::optional<TransportStats> transport_stats() const;

  private:
    class Rt;
    void loop();

    EndpointId id_;
    std::optional<std::string> listen_;
    std::map<EndpointId, std::string> directory_;
    Factory factory_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::unique_ptr<Actor> actor_;
    std::unique_ptr<SocketTransport> transport_;
    std::deque<std::pair<EndpointId, Bytes>> inbox_;
    std::optional<Micros> wake_;
    std::atomic<bool> running_{false};
    bool stopping_ = false;
    std::thread thread_;
};

}  // namespace taas
