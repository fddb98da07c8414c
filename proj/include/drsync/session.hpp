#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drsync/bits.hpp"
#include "drsync/randcore.hpp"

namespace drsync {

enum class Party : uint8_t { Alice = 0, Bob = 1 };

struct MessageRecord {
    Party from;
    size_t bits;
    size_t bytes;  // on-wire payload bytes
    size_t index;
};

class Transcript {
public:
    void record(Party from, size_t bits, size_t bytes);
    const std::vector<MessageRecord>& messages() const { return msgs_; }
    size_t rounds() const { return msgs_.size(); }
    size_t total_bits() const;
    size_t bits_from(Party p) const;
    bool operator==(const Transcript& o) const;

private:
    std::vector<MessageRecord> msgs_;
};

class ChannelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One party's end of a reliable ordered duplex channel.
class Endpoint {
public:
    virtual ~Endpoint() = default;

    void send(const BitString& payload);
    BitString recv();
    void send_bytes(Bytes b) { send(BitString::from_bytes(std::move(b))); }

    Party self() const { return self_; }
    Transcript& transcript() { return transcript_; }
    const Transcript& transcript() const { return transcript_; }
    virtual void close() = 0;

    size_t max_frame_bits = size_t(1) << 34;

protected:
    friend SharedSeed handshake(Endpoint&, std::optional<SharedSeed>);
    explicit Endpoint(Party self) : self_(self) {}
    virtual void send_raw(const BitString& payload) = 0;
    virtual BitString recv_raw() = 0;

private:
    Party self_;
    Transcript transcript_;
};

// Frame encoding used by the in-memory channel: varint bit length + payload.
Bytes encode_frame(const BitString& payload);
BitString decode_frame(ByteView frame, size_t max_bits);

std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> memory_pair(
    std::chrono::milliseconds timeout = std::chrono::seconds(120));

// TCP loopback/stream channel.
class SocketEndpoint : public Endpoint {
public:
    static std::unique_ptr<SocketEndpoint> listen(const std::string& host, uint16_t port, Party self);
    static std::unique_ptr<SocketEndpoint> connect(const std::string& host, uint16_t port, Party self,
                                                   std::chrono::milliseconds retry_for = std::chrono::seconds(10));
    ~SocketEndpoint() override;
    void close() override;

private:
    SocketEndpoint(int fd, Party self);
    void send_raw(const BitString& payload) override;
    BitString recv_raw() override;
    void write_all(const uint8_t* p, size_t n);
    void read_all(uint8_t* p, size_t n);
    int fd_;
};

// Each side contributes 16 random bytes; nothing is recorded in the transcript.
SharedSeed handshake(Endpoint& ep, std::optional<SharedSeed> fixed_share = std::nullopt);

using Role = std::function<void(Endpoint&, const SharedSeed&)>;

struct ProtocolRun {
    Transcript alice;
    Transcript bob;
    SharedSeed seed;
};

// Runs both roles on two threads over an in-memory channel.  With a fixed seed
// the handshake is skipped so runs are reproducible.
ProtocolRun run_protocol(const Role& alice, const Role& bob, std::optional<SharedSeed> seed = std::nullopt);

}  // namespace drsync
