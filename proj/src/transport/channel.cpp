#include "fedlsi/transport/channel.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <stdexcept>

namespace fedlsi::transport {

namespace {

struct FrameQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Frame> q;
    bool closed = false;

    void push(const Frame& f) {
        {
            std::lock_guard<std::mutex> lock(mu);
            if (closed) {
                throw std::runtime_error("send on closed channel");
            }
            q.push_back(f);
        }
        cv.notify_one();
    }

    std::optional<Frame> pop() {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [this] { return !q.empty() || closed; });
        if (q.empty()) {
            return std::nullopt;
        }
        Frame f = std::move(q.front());
        q.pop_front();
        return f;
    }

    void close() {
        {
            std::lock_guard<std::mutex> lock(mu);
            closed = true;
        }
        cv.notify_all();
    }
};

class MemoryEndpoint : public Endpoint {
public:
    MemoryEndpoint(std::shared_ptr<FrameQueue> out, std::shared_ptr<FrameQueue> in)
        : out_(std::move(out)), in_(std::move(in)) {}

    void send(const Frame& frame) override { out_->push(frame); }
    std::optional<Frame> recv() override { return in_->pop(); }
    void close() override { out_->close(); }

private:
    std::shared_ptr<FrameQueue> out_;
    std::shared_ptr<FrameQueue> in_;
};

class SocketEndpoint : public Endpoint {
public:
    explicit SocketEndpoint(int fd) : fd_(fd) {}

    ~SocketEndpoint() override {
        if (fd_ >= 0) {
            ::close(fd_);
        }
    }

    void send(const Frame& frame) override {
        const auto bytes = encode_frame(frame);
        std::size_t off = 0;
        while (off < bytes.size()) {
            const ssize_t n = ::write(fd_, bytes.data() + off, bytes.size() - off);
            if (n < 0) {
                throw std::runtime_error(std::string("channel write failed: ") +
                                         std::strerror(errno));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::optional<Frame> recv() override {
        std::vector<std::uint8_t> header(kFrameHeaderSize);
        if (!read_exact(header.data(), header.size(), /*eof_ok=*/true)) {
            return std::nullopt;  // clean close at a frame boundary
        }
        // Validate the header eagerly so garbage is rejected before a bogus
        // length can make us wait on bytes that will never come.
        if (std::memcmp(header.data(), "FLSI", 4) != 0) {
            throw FrameError(FrameError::Kind::bad_magic, "bad frame magic");
        }
        if (header[4] != kWireVersion) {
            throw FrameError(FrameError::Kind::bad_version, "unsupported frame version");
        }
        std::uint64_t len = 0;
        for (int i = 0; i < 8; ++i) {
            len |= static_cast<std::uint64_t>(header[6 + i]) << (8 * i);
        }
        std::vector<std::uint8_t> rest(static_cast<std::size_t>(len) + kFrameTrailerSize);
        if (!read_exact(rest.data(), rest.size(), /*eof_ok=*/false)) {
            throw FrameError(FrameError::Kind::truncated, "stream truncated mid-frame");
        }
        std::vector<std::uint8_t> whole;
        whole.reserve(header.size() + rest.size());
        whole.insert(whole.end(), header.begin(), header.end());
        whole.insert(whole.end(), rest.begin(), rest.end());
        return decode_frame(whole);
    }

    void close() override { ::shutdown(fd_, SHUT_WR); }

private:
    bool read_exact(std::uint8_t* dst, std::size_t n, bool eof_ok) {
        std::size_t off = 0;
        while (off < n) {
            const ssize_t r = ::read(fd_, dst + off, n - off);
            if (r < 0) {
                throw std::runtime_error(std::string("channel read failed: ") +
                                         std::strerror(errno));
            }
            if (r == 0) {
                if (off == 0 && eof_ok) {
                    return false;
                }
                throw FrameError(FrameError::Kind::truncated, "stream truncated mid-frame");
            }
            off += static_cast<std::size_t>(r);
        }
        return true;
    }

    int fd_;
};

}  // namespace

Link make_memory_link() {
    auto a2b = std::make_shared<FrameQueue>();
    auto b2a = std::make_shared<FrameQueue>();
    Link link;
    link.client = std::make_shared<MemoryEndpoint>(a2b, b2a);
    link.server = std::make_shared<MemoryEndpoint>(b2a, a2b);
    return link;
}

Link make_socket_link() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
        throw std::runtime_error(std::string("socketpair failed: ") + std::strerror(errno));
    }
    // Desk-scale models are far below this; a full buffer would deadlock the
    // single-threaded exchange phases.
    const int buf = 8 * 1024 * 1024;
    for (int fd : {fds[0], fds[1]}) {
        ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &buf, sizeof(buf));
        ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &buf, sizeof(buf));
    }
    Link link;
    link.client = std::make_shared<SocketEndpoint>(fds[0]);
    link.server = std::make_shared<SocketEndpoint>(fds[1]);
    return link;
}

Link make_link(TransportKind kind) {
    return kind == TransportKind::memory ? make_memory_link() : make_socket_link();
}

}  // namespace fedlsi::transport
