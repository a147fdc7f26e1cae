#include "taas/socket_transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <system_error>

namespace taas {

namespace {

constexpr auto kConnectBackoff = std::chrono::milliseconds(100);

void set_nonblocking(int fd) {
    int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in resolve(const std::string& address) {
    auto [host, port] = split_address(address);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (host.empty() || host == "*") {
        sa.sin_addr.s_addr = htonl(INADDR_ANY);
        return sa;
    }
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) return sa;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
        throw std::invalid_argument("cannot resolve " + host);
    }
    sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return sa;
}

}  // namespace

std::pair<std::string, std::uint16_t> split_address(const std::string& address) {
    auto colon = address.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("address without port: " + address);
    unsigned long port = 0;
    try {
        port = std::stoul(address.substr(colon + 1));
    } catch (const std::exception&) {
        throw std::invalid_argument("bad port in " + address);
    }
    if (port > 65535) throw std::invalid_argument("bad port in " + address);
    return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

SocketTransport::SocketTransport(EndpointId self, std::optional<std::string> listen,
                                 std::map<EndpointId, std::string> directory, Handler handler)
    : self_(self), listen_addr_(std::move(listen)), handler_(std::move(handler)), directory_(std::move(directory)) {}

SocketTransport::~SocketTransport() { stop(); }

void SocketTransport::start() {
    if (::pipe(wake_pipe_) != 0) throw std::system_error(errno, std::generic_category(), "pipe");
    set_nonblocking(wake_pipe_[0]);
    set_nonblocking(wake_pipe_[1]);
    if (listen_addr_) {
        auto sa = resolve(*listen_addr_);
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (listen_fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
            int err = errno;
            ::close(listen_fd_);
            listen_fd_ = -1;
            throw std::system_error(err, std::generic_category(), "bind " + *listen_addr_);
        }
        ::listen(listen_fd_, 128);
        set_nonblocking(listen_fd_);
        sockaddr_in bound{};
        socklen_t len = sizeof(bound);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);
    }
    running_ = true;
    io_ = std::thread([this] { loop(); });
}

void SocketTransport::stop() {
    if (!running_.exchange(false)) return;
    wake();
    if (io_.joinable()) io_.join();
    for (auto& [fd, c] : conns_) ::close(fd);
    conns_.clear();
    outbound_.clear();
    inbound_.clear();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    for (int& fd : wake_pipe_) {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
}

void SocketTransport::send(EndpointId to, Bytes message) {
    {
        std::lock_guard lock(mu_);
        outgoing_.emplace_back(to, std::move(message));
    }
    wake();
}

void SocketTransport::set_address(EndpointId id, std::string address) {
    std::lock_guard lock(mu_);
    directory_[id] = std::move(address);
}

TransportStats SocketTransport::stats() const {
    std::lock_guard lock(mu_);
    return stats_;
}

void SocketTransport::wake() {
    if (wake_pipe_[1] < 0) return;
    char b = 1;
    [[maybe_unused]] auto n = ::write(wake_pipe_[1], &b, 1);
}

int SocketTransport::connect_to(EndpointId to) {
    std::string address;
    {
        std::lock_guard lock(mu_);
        auto it = directory_.find(to);
        if (it == directory_.end()) return -1;
        address = it->second;
    }
    auto now = std::chrono::steady_clock::now();
    if (auto b = connect_backoff_.find(to); b != connect_backoff_.end() && now < b->second) return -1;

    sockaddr_in sa{};
    try {
        sa = resolve(address);
    } catch (const std::invalid_argument&) {
        return -1;
    }
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) return -1;
    set_nonblocking(fd);
    set_nodelay(fd);
    int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
    if (rc != 0 && errno != EINPROGRESS) {
        ::close(fd);
        connect_backoff_[to] = now + kConnectBackoff;
        std::lock_guard lock(mu_);
        ++stats_.connect_failures;
        return -1;
    }
    Conn c;
    c.fd = fd;
    c.connecting = rc != 0;
    c.outbound_to = to;
    conns_.emplace(fd, std::move(c));
    outbound_[to] = fd;
    return fd;
}

void SocketTransport::close_conn(int fd) {
    auto it = conns_.find(fd);
    if (it == conns_.end()) return;
    if (it->second.outbound_to) {
        auto to = *it->second.outbound_to;
        if (auto o = outbound_.find(to); o != outbound_.end() && o->second == fd) outbound_.erase(o);
        if (it->second.connecting) {
            connect_backoff_[to] = std::chrono::steady_clock::now() + kConnectBackoff;
            std::lock_guard lock(mu_);
            ++stats_.connect_failures;
        }
    }
    for (auto i = inbound_.begin(); i != inbound_.end();) {
        if (i->second == fd) {
            i = inbound_.erase(i);
        } else {
            ++i;
        }
    }
    {
        std::lock_guard lock(mu_);
        stats_.dropped += it->second.out.size();
    }
    ::close(fd);
    conns_.erase(it);
}

void SocketTransport::flush_sends() {
    std::vector<std::pair<EndpointId, Bytes>> batch;
    {
        std::lock_guard lock(mu_);
        batch.swap(outgoing_);
    }
    for (auto& [to, msg] : batch) {
        int fd = -1;
        bool has_address;
        {
            std::lock_guard lock(mu_);
            has_address = directory_.contains(to);
        }
        if (auto o = outbound_.find(to); o != outbound_.end()) {
            fd = o->second;
        } else if (auto i = inbound_.find(to); i != inbound_.end() && !has_address) {
            fd = i->second;
        } else if (has_address) {
            fd = connect_to(to);
        } else if (i != inbound_.end()) {
            fd = i->second;
        }
        if (fd < 0) {
            std::lock_guard lock(mu_);
            ++stats_.dropped;
            continue;
        }
        auto frame = encode_frame(self_, msg);
        {
            std::lock_guard lock(mu_);
            ++stats_.frames_sent;
            stats_.bytes_sent += frame.size();
        }
        conns_.at(fd).out.push_back(std::move(frame));
    }
}

void SocketTransport::on_readable(Conn& c) {
    char buf[64 * 1024];
    while (true) {
        ssize_t n = ::recv(c.fd, buf, sizeof(buf), 0);
        if (n > 0) {
            c.decoder.feed(ByteView(reinterpret_cast<const std::uint8_t*>(buf), static_cast<std::size_t>(n)));
            continue;
        }
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
        if (n < 0 && errno == EINTR) continue;
        close_conn(c.fd);
        return;
    }
    int fd = c.fd;
    try {
        while (auto f = c.decoder.next()) {
            if (!c.outbound_to) inbound_[f->from] = fd;
            {
                std::lock_guard lock(mu_);
                ++stats_.frames_received;
            }
            handler_(f->from, std::move(f->message));
        }
    } catch (const DecodeError&) {
        close_conn(fd);
    }
}

void SocketTransport::on_writable(Conn& c) {
    c.connecting = false;
    while (!c.out.empty()) {
        const auto& front = c.out.front();
        ssize_t n = ::send(c.fd, front.data() + c.out_pos, front.size() - c.out_pos, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EAGAIN || errno == EWOULDBLOCK) return;
            if (errno == EINTR) continue;
            close_conn(c.fd);
            return;
        }
        c.out_pos += static_cast<std::size_t>(n);
        if (c.out_pos == front.size()) {
            c.out.pop_front();
            c.out_pos = 0;
        }
    }
}

void SocketTransport::loop() {
    std::vector<pollfd> fds;
    while (running_) {
        flush_sends();
        fds.clear();
        fds.push_back({wake_pipe_[0], POLLIN, 0});
        if (listen_fd_ >= 0) fds.push_back({listen_fd_, POLLIN, 0});
        for (auto& [fd, c] : conns_) {
            short ev = POLLIN;
            if (c.connecting || !c.out.empty()) ev |= POLLOUT;
            fds.push_back({fd, ev, 0});
        }
        int rc = ::poll(fds.data(), fds.size(), 100);
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        for (const auto& p : fds) {
            if (p.revents == 0) continue;
            if (p.fd == wake_pipe_[0]) {
                char drain[256];
                while (::read(wake_pipe_[0], drain, sizeof(drain)) > 0) {
                }
                continue;
            }
            if (p.fd == listen_fd_) {
                while (true) {
                    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
                    if (fd < 0) break;
                    set_nodelay(fd);
                    Conn c;
                    c.fd = fd;
                    conns_.emplace(fd, std::move(c));
                }
                continue;
            }
            auto it = conns_.find(p.fd);
            if (it == conns_.end()) continue;
            if (p.revents & (POLLERR | POLLHUP | POLLNVAL)) {
                if (!(p.revents & POLLIN)) {
                    close_conn(p.fd);
                    continue;
                }
            }
            if (p.revents & POLLOUT) {
                on_writable(it->second);
                it = conns_.find(p.fd);
                if (it == conns_.end()) continue;
            }
            if (p.revents & POLLIN) on_readable(it->second);
        }
    }
}

Micros live_now() {
    static const auto origin = std::chrono::steady_clock::now();
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - origin).count();
}

class LiveHost::Rt final : public Runtime {
  public:
    Rt(LiveHost& h) : h_(h) {}
    EndpointId self() const override { return h_.id_; }
    Micros now() const override { return live_now(); }
    void send(EndpointId to, Bytes message) override {
        if (to == h_.id_) {
            h_.inbox_.emplace_back(to, std::move(message));
            return;
        }
        if (h_.transport_) h_.transport_->send(to, std::move(message));
    }
    void wake_at(Micros at) override {
        if (!h_.wake_ || at < *h_.wake_) h_.wake_ = at;
    }

  private:
    LiveHost& h_;
};

LiveHost::LiveHost(EndpointId id, std::optional<std::string> listen, std::map<EndpointId, std::string> directory,
                   Factory factory)
    : id_(id), listen_(std::move(listen)), directory_(std::move(directory)), factory_(std::move(factory)) {}

LiveHost::~LiveHost() { stop(); }

void LiveHost::start() {
    if (running_) return;
    {
        std::lock_guard lock(mu_);
        stopping_ = false;
        inbox_.clear();
        wake_.reset();
        actor_ = factory_();
        transport_ = std::make_unique<SocketTransport>(id_, listen_, directory_, [this](EndpointId from, Bytes m) {
            {
                std::lock_guard l(mu_);
                inbox_.emplace_back(from, std::move(m));
            }
            cv_.notify_one();
        });
    }
    transport_->start();
    running_ = true;
    thread_ = std::thread([this] { loop(); });
}

void LiveHost::stop() {
    if (!running_.exchange(false)) return;
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
    transport_->stop();
    std::lock_guard lock(mu_);
    transport_.reset();
    actor_.reset();
    inbox_.clear();
}

std::uint16_t LiveHost::port() const {
    std::lock_guard lock(mu_);
    return transport_ ? transport_->port() : 0;
}

void LiveHost::inspect(const std::function<void(Actor*)>& fn) {
    std::lock_guard lock(mu_);
    fn(actor_.get());
}

std::optional<TransportStats> LiveHost::transport_stats() const {
    std::lock_guard lock(mu_);
    if (!transport_) return std::nullopt;
    return transport_->stats();
}

void LiveHost::loop() {
    Rt rt(*this);
    std::unique_lock lock(mu_);
    actor_->on_start(rt);
    while (!stopping_) {
        while (!inbox_.empty() && !stopping_) {
            auto [from, msg] = std::move(inbox_.front());
            inbox_.pop_front();
            actor_->on_message(rt, from, msg);
        }
        if (stopping_) break;
        if (wake_ && *wake_ <= live_now()) {
            wake_.reset();
            actor_->on_timer(rt);
            continue;
        }
        if (wake_) {
            auto wait = std::chrono::microseconds(*wake_ - live_now());
            cv_.wait_for(lock, wait, [&] { return stopping_ || !inbox_.empty(); });
        } else {
            cv_.wait(lock, [&] { return stopping_ || !inbox_.empty(); });
        }
    }
}

}  // namespace taas
