#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace aurora {

using Bytes = std::vector<uint8_t>;
using ByteSpan = std::span<const uint8_t>;

// Virtual time in nanoseconds since scenario start.
using VirtNs = uint64_t;

constexpr VirtNs kUs = 1000;
constexpr VirtNs kMs = 1000 * kUs;
constexpr VirtNs kSec = 1000 * kMs;

constexpr size_t kPageSize = 4096;
constexpr size_t kFrameSize = 4096;

// Minimal expected-like result carrier. Errors are ordinary values so
// scenarios can observe a failure and keep running.
template <typename T, typename E>
class Result {
public:
    Result(T value) : v_(std::move(value)) {}
    Result(E error) : v_(std::move(error)) {}

    bool ok() const { return std::holds_alternative<T>(v_); }
    explicit operator bool() const { return ok(); }

    T& value() { return std::get<T>(v_); }
    const T& value() const { return std::get<T>(v_); }
    E& error() { return std::get<E>(v_); }
    const E& error() const { return std::get<E>(v_); }

private:
    std::variant<T, E> v_;
};

struct Unit {};

inline std::string to_hex(ByteSpan data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

inline Bytes from_hex(std::string_view hex) {
    auto nib = [](char c) -> uint8_t {
        if (c >= '0' && c <= '9') return static_cast<uint8_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<uint8_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F') return static_cast<uint8_t>(c - 'A' + 10);
        return 0;
    };
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i + 1 < hex.size(); i += 2)
        out.push_back(static_cast<uint8_t>(nib(hex[i]) << 4 | nib(hex[i + 1])));
    return out;
}

// Little-endian scalar packing used by all wire-level structs.
inline void put_u16(uint8_t* p, uint16_t v) {
    p[0] = static_cast<uint8_t>(v);
    p[1] = static_cast<uint8_t>(v >> 8);
}
inline void put_u32(uint8_t* p, uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}
inline void put_u64(uint8_t* p, uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}
inline uint16_t get_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | p[1] << 8);
}
inline uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}
inline uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

// ticks * 1e9 / hz without intermediate overflow.
inline uint64_t ticks_to_ns(uint64_t ticks, uint64_t hz) {
    return static_cast<uint64_t>(static_cast<unsigned __int128>(ticks) * 1000000000u / hz);
}
inline uint64_t ns_to_ticks(uint64_t ns, uint64_t hz) {
    return static_cast<uint64_t>(static_cast<unsigned __int128>(ns) * hz / 1000000000u);
}

// Opaque per-enclave identity ("EPID"), carried as 16 bytes on the wire.
struct Epid {
    std::array<uint8_t, 16> bytes{};

    static Epid from_u64(uint64_t v) {
        Epid e;
        put_u64(e.bytes.data(), v);
        return e;
    }
    uint64_t low64() const { return get_u64(bytes.data()); }
    uint16_t low16() const { return get_u16(bytes.data()); }
    auto operator<=>(const Epid&) const = default;
};

}  // namespace aurora
