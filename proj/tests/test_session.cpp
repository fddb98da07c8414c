#include <random>
#include <thread>

#include "doctest.h"
#include "drsync/session.hpp"

using namespace drsync;

namespace {
BitString random_bits(std::mt19937_64& rng, size_t nbits) {
    BitWriter w;
    for (size_t i = 0; i < nbits; ++i) w.put_bit(rng() & 1);
    return w.finish();
}
}  // namespace

TEST_CASE("bit writer and reader round trip") {
    BitWriter w;
    w.put(5, 3);
    w.put(0x1234, 16);
    w.put_varint(300);
    w.put_bytes(Bytes{1, 2, 3});
    w.put_bit(true);
    BitString s = w.finish();
    CHECK(s.nbits == 3 + 16 + 16 + 24 + 1);
    BitReader r(s);
    CHECK(r.get(3) == 5);
    CHECK(r.get(16) == 0x1234);
    CHECK(r.get_varint() == 300);
    CHECK(r.get_bytes(3) == Bytes{1, 2, 3});
    CHECK(r.get_bit());
    CHECK(r.remaining() == 0);
    CHECK_THROWS(r.get(1));
}

TEST_CASE("frame arithmetic") {
    std::mt19937_64 rng(1);
    BitString s = random_bits(rng, 13);
    Bytes f = encode_frame(s);
    CHECK(f.size() == 3);
    CHECK(decode_frame(f, 1 << 20) == s);
    BitString empty;
    CHECK(encode_frame(empty).size() == 1);
    CHECK(decode_frame(encode_frame(empty), 10) == empty);
    Bytes truncated = f;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_frame(truncated, 1 << 20), ChannelError);
    CHECK_THROWS_AS(decode_frame(f, 12), ChannelError);
}

TEST_CASE("frame fuzz: 10^6 payloads round trip bit-exact") {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000000; ++i) {
        size_t n = rng() % 40;
        BitString s = random_bits(rng, n);
        REQUIRE(decode_frame(encode_frame(s), 1 << 20) == s);
    }
}

TEST_CASE("in-memory channel delivers in order and records both sides") {
    std::mt19937_64 rng(3);
    std::vector<BitString> sent;
    for (int i = 0; i < 200; ++i) sent.push_back(random_bits(rng, rng() % 300));
    std::vector<BitString> got;
    auto run = run_protocol(
        [&](Endpoint& ep, const SharedSeed&) {
            for (const auto& s : sent) ep.send(s);
            ep.send(BitString{});
            ep.recv();
        },
        [&](Endpoint& ep, const SharedSeed&) {
            for (size_t i = 0; i < sent.size(); ++i) got.push_back(ep.recv());
            CHECK(ep.recv().nbits == 0);
            BitWriter w;
            w.put(1, 1);
            ep.send(w.finish());
        },
        SharedSeed::from_u64(1));
    CHECK(got == sent);
    CHECK(run.alice == run.bob);
    CHECK(run.alice.rounds() == sent.size() + 2);
    size_t bits = 1;
    for (const auto& s : sent) bits += s.nbits;
    CHECK(run.alice.total_bits() == bits);
    CHECK(run.alice.bits_from(Party::Bob) == 1);
}

TEST_CASE("handshake agrees on both ends and differs across sessions") {
    SharedSeed a1, b1, a2;
    auto r1 = run_protocol([&](Endpoint&, const SharedSeed& s) { a1 = s; },
                           [&](Endpoint&, const SharedSeed& s) { b1 = s; });
    auto r2 = run_protocol([&](Endpoint&, const SharedSeed& s) { a2 = s; }, [&](Endpoint&, const SharedSeed&) {});
    CHECK(a1 == b1);
    CHECK(a1 != a2);
    CHECK(r1.alice.rounds() == 0);
    CHECK(r2.bob.rounds() == 0);
}

TEST_CASE("failures propagate and wake the peer") {
    CHECK_THROWS_WITH(run_protocol([](Endpoint&, const SharedSeed&) { throw std::runtime_error("boom"); },
                                   [](Endpoint& ep, const SharedSeed&) { ep.recv(); },
                                   SharedSeed::from_u64(1)),
                      "boom");
}

TEST_CASE("recv past the end is a channel error") {
    CHECK_THROWS_AS(run_protocol([](Endpoint&, const SharedSeed&) {},
                                 [](Endpoint& ep, const SharedSeed&) { ep.recv(); }, SharedSeed::from_u64(1)),
                    ChannelError);
}

TEST_CASE("socket loopback carries frames and the handshake") {
    const uint16_t port = 39000 + uint16_t(std::random_device{}() % 2000);
    SharedSeed sa, sb;
    BitString got;
    std::mt19937_64 rng(5);
    BitString payload = random_bits(rng, 1001);
    std::thread server([&] {
        auto ep = SocketEndpoint::listen("127.0.0.1", port, Party::Bob);
        sb = handshake(*ep);
        got = ep->recv();
        ep->send(BitString{});
    });
    auto ep = SocketEndpoint::connect("127.0.0.1", port, Party::Alice);
    sa = handshake(*ep);
    ep->send(payload);
    ep->recv();
    server.join();
    CHECK(sa == sb);
    CHECK(got == payload);
    CHECK(ep->transcript().rounds() == 2);
    CHECK(ep->transcript().total_bits() == 1001);
}
