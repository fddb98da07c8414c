#include "drsync/session.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <exception>
#include <thread>

namespace drsync {

void Transcript::record(Party from, size_t bits, size_t bytes) {
    msgs_.push_back({from, bits, bytes, msgs_.size()});
}

size_t Transcript::total_bits() const {
    size_t t = 0;
    for (const auto& m : msgs_) t += m.bits;
    return t;
}

size_t Transcript::bits_from(Party p) const {
    size_t t = 0;
    for (const auto& m : msgs_)
        if (m.from == p) t += m.bits;
    return t;
}

bool Transcript::operator==(const Transcript& o) const {
    if (msgs_.size() != o.msgs_.size()) return false;
    for (size_t i = 0; i < msgs_.size(); ++i) {
        const auto &a = msgs_[i], &b = o.msgs_[i];
        if (a.from != b.from || a.bits != b.bits || a.bytes != b.bytes || a.index != b.index) return false;
    }
    return true;
}

void Endpoint::send(const BitString& payload) {
    if (payload.nbits > max_frame_bits) throw ChannelError("oversize frame");
    send_raw(payload);
    transcript_.record(self_, payload.nbits, payload.bytes.size());
}

BitString Endpoint::recv() {
    BitString s = recv_raw();
    if (s.nbits > max_frame_bits) throw ChannelError("oversize frame");
    transcript_.record(self_ == Party::Alice ? Party::Bob : Party::Alice, s.nbits, s.bytes.size());
    return s;
}

Bytes encode_frame(const BitString& payload) {
    BitWriter w;
    w.put_varint(payload.nbits);
    BitString head = w.finish();
    Bytes out = std::move(head.bytes);
    out.insert(out.end(), payload.bytes.begin(), payload.bytes.begin() + long((payload.nbits + 7) / 8));
    return out;
}

BitString decode_frame(ByteView frame, size_t max_bits) {
    uint64_t nbits = 0;
    size_t pos = 0;
    for (unsigned shift = 0;; shift += 7) {
        if (pos >= frame.size() || shift >= 64) throw ChannelError("truncated frame");
        uint8_t c = frame[pos++];
        nbits |= uint64_t(c & 0x7f) << shift;
        if (!(c & 0x80)) break;
    }
    if (nbits > max_bits) throw ChannelError("oversize frame");
    size_t nbytes = (nbits + 7) / 8;
    if (frame.size() - pos != nbytes) throw ChannelError("truncated frame");
    BitString s;
    s.nbits = nbits;
    s.bytes.assign(frame.begin() + long(pos), frame.end());
    return s;
}

namespace {

struct Pipe {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Bytes> queue;
    bool closed = false;
};

class MemoryEndpoint : public Endpoint {
public:
    MemoryEndpoint(Party self, std::shared_ptr<Pipe> out, std::shared_ptr<Pipe> in,
                   std::chrono::milliseconds timeout)
        : Endpoint(self), out_(std::move(out)), in_(std::move(in)), timeout_(timeout) {}
    ~MemoryEndpoint() override { close(); }

    void close() override {
        std::lock_guard lk(out_->mu);
        out_->closed = true;
        out_->cv.notify_all();
    }

private:
    void send_raw(const BitString& payload) override {
        Bytes frame = encode_frame(payload);
        std::lock_guard lk(out_->mu);
        if (out_->closed) throw ChannelError("send on closed channel");
        out_->queue.push_back(std::move(frame));
        out_->cv.notify_all();
    }
    BitString recv_raw() override {
        std::unique_lock lk(in_->mu);
        if (!in_->cv.wait_for(lk, timeout_, [&] { return !in_->queue.empty() || in_->closed; }))
            throw ChannelError("receive timed out");
        if (in_->queue.empty()) throw ChannelError("peer closed channel");
        Bytes frame = std::move(in_->queue.front());
        in_->queue.pop_front();
        lk.unlock();
        return decode_frame(frame, max_frame_bits);
    }

    std::shared_ptr<Pipe> out_, in_;
    std::chrono::milliseconds timeout_;
};

}  // namespace

std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> memory_pair(std::chrono::milliseconds timeout) {
    auto ab = std::make_shared<Pipe>(), ba = std::make_shared<Pipe>();
    return {std::make_unique<MemoryEndpoint>(Party::Alice, ab, ba, timeout),
            std::make_unique<MemoryEndpoint>(Party::Bob, ba, ab, timeout)};
}

namespace {
constexpr char kMagic[4] = {'D', 'R', 'S', '1'};

sockaddr_in resolve(const std::string& host, uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        addrinfo hints{}, *res = nullptr;
        hints.ai_family = AF_INET;
        if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
            throw ChannelError("cannot resolve host " + host);
        addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
        freeaddrinfo(res);
    }
    return addr;
}
}  // namespace

SocketEndpoint::SocketEndpoint(int fd, Party self) : Endpoint(self), fd_(fd) {
    int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

SocketEndpoint::~SocketEndpoint() { close(); }

void SocketEndpoint::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

std::unique_ptr<SocketEndpoint> SocketEndpoint::listen(const std::string& host, uint16_t port, Party self) {
    int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (lfd < 0) throw ChannelError("socket failed");
    int one = 1;
    setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = resolve(host, port);
    if (::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(lfd, 1) != 0) {
        ::close(lfd);
        throw ChannelError("cannot listen on " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
    int fd = ::accept(lfd, nullptr, nullptr);
    ::close(lfd);
    if (fd < 0) throw ChannelError("accept failed");
    std::unique_ptr<SocketEndpoint> ep(new SocketEndpoint(fd, self));
    char magic[4];
    ep->write_all(reinterpret_cast<const uint8_t*>(kMagic), 4);
    ep->read_all(reinterpret_cast<uint8_t*>(magic), 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw ChannelError("bad magic");
    return ep;
}

std::unique_ptr<SocketEndpoint> SocketEndpoint::connect(const std::string& host, uint16_t port, Party self,
                                                        std::chrono::milliseconds retry_for) {
    sockaddr_in addr = resolve(host, port);
    auto deadline = std::chrono::steady_clock::now() + retry_for;
    for (;;) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw ChannelError("socket failed");
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
            std::unique_ptr<SocketEndpoint> ep(new SocketEndpoint(fd, self));
            char magic[4];
            ep->write_all(reinterpret_cast<const uint8_t*>(kMagic), 4);
            ep->read_all(reinterpret_cast<uint8_t*>(magic), 4);
            if (std::memcmp(magic, kMagic, 4) != 0) throw ChannelError("bad magic");
            return ep;
        }
        ::close(fd);
        if (std::chrono::steady_clock::now() > deadline)
            throw ChannelError("cannot connect to " + host + ":" + std::to_string(port));
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
}

void SocketEndpoint::write_all(const uint8_t* p, size_t n) {
    while (n > 0) {
        ssize_t k = ::send(fd_, p, n, MSG_NOSIGNAL);
        if (k <= 0) {
            if (k < 0 && errno == EINTR) continue;
            throw ChannelError("socket write failed");
        }
        p += k;
        n -= size_t(k);
    }
}

void SocketEndpoint::read_all(uint8_t* p, size_t n) {
    while (n > 0) {
        ssize_t k = ::recv(fd_, p, n, 0);
        if (k <= 0) {
            if (k < 0 && errno == EINTR) continue;
            throw ChannelError(k == 0 ? "peer closed channel" : "socket read failed");
        }
        p += k;
        n -= size_t(k);
    }
}

void SocketEndpoint::send_raw(const BitString& payload) {
    if (payload.nbits > 0xffffffffu) throw ChannelError("oversize frame");
    uint8_t head[4];
    uint32_t n = uint32_t(payload.nbits);
    for (int i = 0; i < 4; ++i) head[i] = uint8_t(n >> (24 - 8 * i));
    write_all(head, 4);
    write_all(payload.bytes.data(), (payload.nbits + 7) / 8);
}

BitString SocketEndpoint::recv_raw() {
    uint8_t head[4];
    read_all(head, 4);
    uint32_t n = uint32_t(head[0]) << 24 | uint32_t(head[1]) << 16 | uint32_t(head[2]) << 8 | head[3];
    if (n > max_frame_bits) throw ChannelError("oversize frame");
    BitString s;
    s.nbits = n;
    s.bytes.resize((n + 7) / 8);
    read_all(s.bytes.data(), s.bytes.size());
    return s;
}

SharedSeed handshake(Endpoint& ep, std::optional<SharedSeed> fixed_share) {
    SharedSeed mine = fixed_share ? *fixed_share : SharedSeed::random();
    // Raw frames keep the handshake out of the transcript.
    ep.send_raw(BitString::from_bytes(Bytes(mine.bytes.begin(), mine.bytes.end())));
    BitString theirs = ep.recv_raw();
    if (theirs.nbits != 128) throw ChannelError("bad handshake frame");
    SharedSeed other;
    std::copy(theirs.bytes.begin(), theirs.bytes.end(), other.bytes.begin());
    return mine ^ other;
}

ProtocolRun run_protocol(const Role& alice, const Role& bob, std::optional<SharedSeed> seed) {
    auto [ea, eb] = memory_pair();
    ProtocolRun run;
    std::exception_ptr err_a, err_b;
    SharedSeed sa, sb;
    auto drive = [](const Role& role, Endpoint& ep, std::optional<SharedSeed> fixed, SharedSeed& out,
                    std::exception_ptr& err) {
        try {
            out = fixed ? *fixed : handshake(ep);
            role(ep, out);
        } catch (...) {
            err = std::current_exception();
        }
        ep.close();
    };
    std::thread tb(drive, std::cref(bob), std::ref(*eb), seed, std::ref(sb), std::ref(err_b));
    drive(alice, *ea, seed, sa, err_a);
    tb.join();
    // A ChannelError on one side is usually the echo of a real failure on the other.
    auto is_channel = [](const std::exception_ptr& e) {
        try {
            std::rethrow_exception(e);
        } catch (const ChannelError&) {
            return true;
        } catch (...) {
            return false;
        }
    };
    if (err_a && !is_channel(err_a)) std::rethrow_exception(err_a);
    if (err_b && !is_channel(err_b)) std::rethrow_exception(err_b);
    if (err_a) std::rethrow_exception(err_a);
    if (err_b) std::rethrow_exception(err_b);
    run.alice = ea->transcript();
    run.bob = eb->transcript();
    run.seed = sa;
    return run;
}

}  // namespace drsync
