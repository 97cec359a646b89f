#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/nn.hpp"

// Parameter-message codec and in-process delivery. The frame layout is the
// normative wire format; a socket transport must emit identical bytes.
//
//   magic "HFLP" | version u8 | role u8 | sender_id u32 LE | round u32 LE |
//   count u64 LE | values f32 LE * count | crc32 u32 LE
//
// The CRC-32 (IEEE reflected, as in zlib) covers every byte after the magic
// and before the checksum itself.
namespace hfl::transport {

enum class Role : std::uint8_t { client = 0, edge = 1, global_server = 2 };

struct ParameterMessage {
    Role role = Role::client;
    std::uint32_t sender_id = 0;
    std::uint32_t round = 0;
    std::vector<float> values;

    bool operator==(const ParameterMessage&) const = default;
};

inline constexpr char kFrameMagic[4] = {'H', 'F', 'L', 'P'};
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 1 + 1 + 4 + 4 + 8;

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1U) ? 0xedb88320U ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xffffffffU;
    for (const auto b : bytes) crc = table[(crc ^ b) & 0xffU] ^ (crc >> 8);
    return crc ^ 0xffffffffU;
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffU));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffU));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const ParameterMessage& msg) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + msg.values.size() * 4 + 4);
    out.insert(out.end(), kFrameMagic, kFrameMagic + 4);
    out.push_back(kFrameVersion);
    out.push_back(static_cast<std::uint8_t>(msg.role));
    detail::put_u32(out, msg.sender_id);
    detail::put_u32(out, msg.round);
    detail::put_u64(out, msg.values.size());
    for (const float f : msg.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
    }
    const std::uint32_t crc =
        crc32(std::span<const std::uint8_t>(out.data() + 4, out.size() - 4));
    detail::put_u32(out, crc);
    return out;
}

inline ParameterMessage decode(std::span<const std::uint8_t> frame) {
    if (frame.size() < kHeaderBytes + 4) throw CodecError("decode: frame shorter than header");
    if (std::memcmp(frame.data(), kFrameMagic, 4) != 0) throw CodecError("decode: bad magic");
    if (frame[4] != kFrameVersion)
        throw CodecError("decode: unsupported version " + std::to_string(frame[4]));
    if (frame[5] > 2) throw CodecError("decode: bad role " + std::to_string(frame[5]));
    const std::uint64_t count = detail::get_u64(frame.data() + 14);
    const std::uint64_t expected = kHeaderBytes + count * 4 + 4;
    if (frame.size() != expected)
        throw CodecError("decode: frame is " + std::to_string(frame.size()) +
                         " bytes, count field implies " + std::to_string(expected));
    const std::uint32_t stated = detail::get_u32(frame.data() + frame.size() - 4);
    const std::uint32_t actual =
        crc32(std::span<const std::uint8_t>(frame.data() + 4, frame.size() - 8));
    if (stated != actual) throw CodecError("decode: CRC mismatch");

    ParameterMessage msg;
    msg.role = static_cast<Role>(frame[5]);
    msg.sender_id = detail::get_u32(frame.data() + 6);
    msg.round = detail::get_u32(frame.data() + 10);
    msg.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t bits = detail::get_u32(frame.data() + kHeaderBytes + i * 4);
        std::memcpy(&msg.values[i], &bits, 4);
    }
    return msg;
}

inline ParameterMessage make_message(Role role, std::uint32_t sender, std::uint32_t round,
                                     const nn::ParamVector& pv) {
    return ParameterMessage{role, sender, round, pv.values};
}

// Multi-producer single-consumer FIFO with reliable, ordered, at-most-once
// delivery. recv blocks until a message arrives or the channel closes.
template <typename T>
class Channel {
public:
    void send(T value) {
        {
            std::lock_guard lock(mutex_);
            if (closed_) throw ChannelClosedError("send on closed channel");
            queue_.push_back(std::move(value));
        }
        cv_.notify_one();
    }

    T recv() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return !queue_.empty() || closed_; });
        if (queue_.empty()) throw ChannelClosedError("recv on closed channel");
        T value = std::move(queue_.front());
        queue_.pop_front();
        return value;
    }

    void close() {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        cv_.notify_all();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<T> queue_;
    bool closed_ = false;
};

using FrameChannel = Channel<std::vector<std::uint8_t>>;

}  // namespace hfl::transport
