#pragma once

#include "aurora/common.hpp"

namespace aurora::wire {

// Network byte order accessors.
inline void put_be16(uint8_t* p, uint16_t v) {
    p[0] = static_cast<uint8_t>(v >> 8);
    p[1] = static_cast<uint8_t>(v);
}
inline void put_be32(uint8_t* p, uint32_t v) {
    p[0] = static_cast<uint8_t>(v >> 24);
    p[1] = static_cast<uint8_t>(v >> 16);
    p[2] = static_cast<uint8_t>(v >> 8);
    p[3] = static_cast<uint8_t>(v);
}
inline uint16_t get_be16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] << 8 | p[1]);
}
inline uint32_t get_be32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) << 24 | static_cast<uint32_t>(p[1]) << 16 |
           static_cast<uint32_t>(p[2]) << 8 | p[3];
}

struct MacAddr {
    std::array<uint8_t, 6> b{};

    static MacAddr broadcast() {
        MacAddr m;
        m.b.fill(0xff);
        return m;
    }
    bool is_broadcast() const { return *this == broadcast(); }
    auto operator<=>(const MacAddr&) const = default;
};

constexpr uint16_t kEtherIpv4 = 0x0800;
constexpr uint16_t kEtherArp = 0x0806;
constexpr size_t kEtherHeader = 14;

constexpr uint8_t kProtoIcmp = 1;
constexpr uint8_t kProtoTcp = 6;
constexpr uint8_t kProtoUdp = 17;

// RFC 1071 internet checksum.
uint16_t checksum16(ByteSpan data, uint32_t initial = 0);

Bytes build_ether(const MacAddr& dst, const MacAddr& src, uint16_t ethertype, ByteSpan payload);

struct EtherView {
    MacAddr dst, src;
    uint16_t ethertype;
    ByteSpan payload;
};
std::optional<EtherView> parse_ether(ByteSpan frame);

struct ArpPacket {
    uint16_t op = 1;  // 1 request, 2 reply
    MacAddr sender_mac;
    uint32_t sender_ip = 0;
    MacAddr target_mac;
    uint32_t target_ip = 0;
};
Bytes build_arp(const ArpPacket& a);
std::optional<ArpPacket> parse_arp(ByteSpan payload);

// IPv4 with a mandatory 4-byte options area carrying the flow tag (IHL 6).
struct Ipv4Header {
    uint8_t protocol = 0;
    uint32_t src = 0;
    uint32_t dst = 0;
    uint16_t ident = 0;
    uint8_t ttl = 64;
    bool more_fragments = false;
    uint16_t frag_offset_units = 0;  // 8-byte units
    std::array<uint8_t, 4> options{};
};
constexpr size_t kIpv4HeaderLen = 24;  // 20 + 4-byte options

Bytes build_ipv4(const Ipv4Header& h, ByteSpan payload);

struct Ipv4View {
    Ipv4Header hdr;
    bool checksum_ok = false;
    ByteSpan payload;
};
std::optional<Ipv4View> parse_ipv4(ByteSpan packet);

// Fast-path introspection for the SSV classifier: returns the 4 option bytes
// of an IPv4 frame with IHL > 5, without validating payload checksums.
std::optional<std::array<uint8_t, 4>> extract_flow_tag(ByteSpan ether_frame);

struct IcmpEcho {
    uint8_t type = 8;  // 8 request, 0 reply
    uint16_t ident = 0;
    uint16_t seq = 0;
    ByteSpan payload;
};
Bytes build_icmp_echo(const IcmpEcho& e);
std::optional<IcmpEcho> parse_icmp_echo(ByteSpan data);

uint16_t l4_checksum(uint32_t src, uint32_t dst, uint8_t proto, ByteSpan segment);

Bytes build_udp(uint32_t src_ip, uint32_t dst_ip, uint16_t src_port, uint16_t dst_port,
                ByteSpan payload);

struct UdpView {
    uint16_t src_port, dst_port;
    bool checksum_ok;
    ByteSpan payload;
};
std::optional<UdpView> parse_udp(uint32_t src_ip, uint32_t dst_ip, ByteSpan segment);

// TCP flags
constexpr uint16_t kTcpFin = 0x01;
constexpr uint16_t kTcpSyn = 0x02;
constexpr uint16_t kTcpRst = 0x04;
constexpr uint16_t kTcpPsh = 0x08;
constexpr uint16_t kTcpAck = 0x10;

struct TcpSegment {
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    uint32_t seq = 0;
    uint32_t ack = 0;
    uint16_t flags = 0;
    uint16_t window = 0;
    ByteSpan payload;
};
Bytes build_tcp(uint32_t src_ip, uint32_t dst_ip, const TcpSegment& s);

struct TcpView {
    TcpSegment seg;
    bool checksum_ok;
};
std::optional<TcpView> parse_tcp(uint32_t src_ip, uint32_t dst_ip, ByteSpan segment);

}  // namespace aurora::wire
