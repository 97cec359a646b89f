#include <doctest.h>

#include <chrono>
#include <cstring>
#include <thread>
#include <vector>

#include "hfl/transport.hpp"

using namespace hfl;
using transport::ParameterMessage;
using transport::Role;

TEST_CASE("crc32: known vector") {
    const char* s = "123456789";
    const auto crc = transport::crc32(
        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s), 9));
    CHECK(crc == 0xcbf43926U);
}

TEST_CASE("encode: one-value frame is exactly 30 bytes") {
    ParameterMessage msg{Role::client, 0, 0, {1.0f}};
    const auto frame = transport::encode(msg);
    CHECK(frame.size() == 30);  // 4+1+1+4+4+8+4+4
    CHECK(frame[0] == 'H');
    CHECK(frame[1] == 'F');
    CHECK(frame[2] == 'L');
    CHECK(frame[3] == 'P');
    CHECK(frame[4] == 1);  // version
    CHECK(frame[5] == 0);  // role client
}

TEST_CASE("codec: round trip is bit-exact for a full-size parameter vector") {
    Rng rng(7);
    ParameterMessage msg{Role::edge, 3, 12, {}};
    msg.values.resize(77569);
    for (auto& v : msg.values) v = static_cast<float>(rng.normal());
    const auto frame = transport::encode(msg);
    const auto back = transport::decode(frame);
    CHECK(back == msg);
}

TEST_CASE("codec: signed zeros and subnormals survive") {
    ParameterMessage msg{Role::global_server, 1, 2,
                         {0.0f, -0.0f, 1e-42f, -1e-42f, std::numeric_limits<float>::denorm_min()}};
    const auto back = transport::decode(transport::encode(msg));
    REQUIRE(back.values.size() == msg.values.size());
    for (std::size_t i = 0; i < msg.values.size(); ++i) {
        std::uint32_t a, b;
        std::memcpy(&a, &msg.values[i], 4);
        std::memcpy(&b, &back.values[i], 4);
        CHECK(a == b);
    }
}

TEST_CASE("decode: a flipped payload bit fails the CRC") {
    ParameterMessage msg{Role::client, 9, 4, {1.5f, -2.5f, 3.5f}};
    auto frame = transport::encode(msg);
    frame[transport::kHeaderBytes + 5] ^= 0x10;
    CHECK_THROWS_WITH_AS(transport::decode(frame), doctest::Contains("CRC"), CodecError);
}

TEST_CASE("decode: distinct errors for magic, version, role and truncation") {
    ParameterMessage msg{Role::client, 1, 1, {1.0f}};
    auto good = transport::encode(msg);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(transport::decode(bad_magic), doctest::Contains("magic"), CodecError);

    auto bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_WITH_AS(transport::decode(bad_version), doctest::Contains("version"),
                         CodecError);

    auto bad_role = good;
    bad_role[5] = 7;
    CHECK_THROWS_WITH_AS(transport::decode(bad_role), doctest::Contains("role"), CodecError);

    auto truncated = good;
    truncated.pop_back();
    CHECK_THROWS_WITH_AS(transport::decode(truncated), doctest::Contains("count field"),
                         CodecError);

    std::vector<std::uint8_t> tiny = {'H', 'F', 'L', 'P'};
    CHECK_THROWS_WITH_AS(transport::decode(tiny), doctest::Contains("shorter"), CodecError);
}

TEST_CASE("channel: send then recv returns the same message, in order") {
    transport::Channel<int> ch;
    ch.send(1);
    ch.send(2);
    ch.send(3);
    CHECK(ch.recv() == 1);
    CHECK(ch.recv() == 2);
    CHECK(ch.recv() == 3);
}

TEST_CASE("channel: recv on a closed empty channel raises, does not hang") {
    transport::Channel<int> ch;
    ch.close();
    CHECK_THROWS_AS(ch.recv(), ChannelClosedError);
    transport::Channel<int> ch2;
    ch2.send(5);
    ch2.close();
    CHECK(ch2.recv() == 5);  // drained before the closed signal
    CHECK_THROWS_AS(ch2.recv(), ChannelClosedError);
    CHECK_THROWS_AS(ch2.send(6), ChannelClosedError);
}

TEST_CASE("channel: a blocked recv is woken by a concurrent close") {
    transport::Channel<int> ch;
    std::thread closer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        ch.close();
    });
    CHECK_THROWS_AS(ch.recv(), ChannelClosedError);
    closer.join();
}

TEST_CASE("channel: multiple producers, single consumer") {
    transport::Channel<int> ch;
    std::vector<std::thread> producers;
    for (int t = 0; t < 4; ++t)
        producers.emplace_back([&ch, t] {
            for (int i = 0; i < 25; ++i) ch.send(t * 100 + i);
        });
    std::vector<int> got;
    for (int i = 0; i < 100; ++i) got.push_back(ch.recv());
    for (auto& p : producers) p.join();
    CHECK(got.size() == 100);
    // per-producer order is preserved
    std::vector<int> last(4, -1);
    for (const int v : got) {
        const int t = v / 100;
        CHECK(v % 100 > last[t]);
        last[t] = v % 100;
    }
}

TEST_CASE("codec property: random payload round trips bit-exactly") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        ParameterMessage msg;
        msg.role = static_cast<Role>(rng.below(3));
        msg.sender_id = static_cast<std::uint32_t>(rng.next_u64());
        msg.round = static_cast<std::uint32_t>(rng.below(1000));
        msg.values.resize(rng.below(200));
        for (auto& v : msg.values) {
            // bit-random floats, finite only
            std::uint32_t bits = static_cast<std::uint32_t>(rng.next_u64());
            float f;
            std::memcpy(&f, &bits, 4);
            v = std::isfinite(f) ? f : 1.0f;
        }
        const auto back = transport::decode(transport::encode(msg));
        CHECK(back.role == msg.role);
        CHECK(back.sender_id == msg.sender_id);
        CHECK(back.round == msg.round);
        REQUIRE(back.values.size() == msg.values.size());
        for (std::size_t i = 0; i < msg.values.size(); ++i) {
            std::uint32_t a, b;
            std::memcpy(&a, &msg.values[i], 4);
            std::memcpy(&b, &back.values[i], 4);
            CHECK(a == b);
        }
    }
}
