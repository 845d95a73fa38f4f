#include "aurora/wire.hpp"

namespace aurora::wire {

uint16_t checksum16(ByteSpan data, uint32_t initial) {
    uint32_t sum = initial;
    size_t i = 0;
    for (; i + 1 < data.size(); i += 2) sum += static_cast<uint32_t>(data[i] << 8 | data[i + 1]);
    if (i < data.size()) sum += static_cast<uint32_t>(data[i] << 8);
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<uint16_t>(~sum);
}

Bytes build_ether(const MacAddr& dst, const MacAddr& src, uint16_t ethertype, ByteSpan payload) {
    Bytes out(kEtherHeader + payload.size());
    std::copy(dst.b.begin(), dst.b.end(), out.begin());
    std::copy(src.b.begin(), src.b.end(), out.begin() + 6);
    put_be16(out.data() + 12, ethertype);
    std::copy(payload.begin(), payload.end(), out.begin() + kEtherHeader);
    return out;
}

std::optional<EtherView> parse_ether(ByteSpan frame) {
    if (frame.size() < kEtherHeader) return std::nullopt;
    EtherView v;
    std::copy(frame.begin(), frame.begin() + 6, v.dst.b.begin());
    std::copy(frame.begin() + 6, frame.begin() + 12, v.src.b.begin());
    v.ethertype = get_be16(frame.data() + 12);
    v.payload = frame.subspan(kEtherHeader);
    return v;
}

Bytes build_arp(const ArpPacket& a) {
    Bytes out(28, 0);
    put_be16(out.data(), 1);       // htype ethernet
    put_be16(out.data() + 2, kEtherIpv4);
    out[4] = 6;
    out[5] = 4;
    put_be16(out.data() + 6, a.op);
    std::copy(a.sender_mac.b.begin(), a.sender_mac.b.end(), out.begin() + 8);
    put_be32(out.data() + 14, a.sender_ip);
    std::copy(a.target_mac.b.begin(), a.target_mac.b.end(), out.begin() + 18);
    put_be32(out.data() + 24, a.target_ip);
    return out;
}

std::optional<ArpPacket> parse_arp(ByteSpan p) {
    if (p.size() < 28) return std::nullopt;
    ArpPacket a;
    a.op = get_be16(p.data() + 6);
    std::copy(p.begin() + 8, p.begin() + 14, a.sender_mac.b.begin());
    a.sender_ip = get_be32(p.data() + 14);
    std::copy(p.begin() + 18, p.begin() + 24, a.target_mac.b.begin());
    a.target_ip = get_be32(p.data() + 24);
    return a;
}

Bytes build_ipv4(const Ipv4Header& h, ByteSpan payload) {
    Bytes out(kIpv4HeaderLen + payload.size());
    out[0] = 0x46;  // version 4, IHL 6 (24-byte header with options)
    out[1] = 0;
    put_be16(out.data() + 2, static_cast<uint16_t>(out.size()));
    put_be16(out.data() + 4, h.ident);
    uint16_t ff = static_cast<uint16_t>((h.more_fragments ? 0x2000 : 0) | (h.frag_offset_units & 0x1fff));
    put_be16(out.data() + 6, ff);
    out[8] = h.ttl;
    out[9] = h.protocol;
    put_be16(out.data() + 10, 0);
    put_be32(out.data() + 12, h.src);
    put_be32(out.data() + 16, h.dst);
    std::copy(h.options.begin(), h.options.end(), out.begin() + 20);
    uint16_t csum = checksum16(ByteSpan(out.data(), kIpv4HeaderLen));
    put_be16(out.data() + 10, csum);
    std::copy(payload.begin(), payload.end(), out.begin() + kIpv4HeaderLen);
    return out;
}

std::optional<Ipv4View> parse_ipv4(ByteSpan p) {
    if (p.size() < 20) return std::nullopt;
    uint8_t ihl = p[0] & 0x0f;
    if ((p[0] >> 4) != 4 || ihl < 5) return std::nullopt;
    size_t hlen = static_cast<size_t>(ihl) * 4;
    if (p.size() < hlen) return std::nullopt;
    Ipv4View v;
    uint16_t total = get_be16(p.data() + 2);
    if (total < hlen || total > p.size()) return std::nullopt;
    v.hdr.ident = get_be16(p.data() + 4);
    uint16_t ff = get_be16(p.data() + 6);
    v.hdr.more_fragments = (ff & 0x2000) != 0;
    v.hdr.frag_offset_units = ff & 0x1fff;
    v.hdr.ttl = p[8];
    v.hdr.protocol = p[9];
    v.hdr.src = get_be32(p.data() + 12);
    v.hdr.dst = get_be32(p.data() + 16);
    if (ihl >= 6) std::copy(p.begin() + 20, p.begin() + 24, v.hdr.options.begin());
    v.checksum_ok = checksum16(p.first(hlen)) == 0;
    v.payload = p.subspan(hlen, total - hlen);
    return v;
}

std::optional<std::array<uint8_t, 4>> extract_flow_tag(ByteSpan ether_frame) {
    auto ev = parse_ether(ether_frame);
    if (!ev || ev->ethertype != kEtherIpv4) return std::nullopt;
    ByteSpan p = ev->payload;
    if (p.size() < 24) return std::nullopt;
    if ((p[0] >> 4) != 4 || (p[0] & 0x0f) < 6) return std::nullopt;
    std::array<uint8_t, 4> tag;
    std::copy(p.begin() + 20, p.begin() + 24, tag.begin());
    return tag;
}

Bytes build_icmp_echo(const IcmpEcho& e) {
    Bytes out(8 + e.payload.size(), 0);
    out[0] = e.type;
    put_be16(out.data() + 4, e.ident);
    put_be16(out.data() + 6, e.seq);
    std::copy(e.payload.begin(), e.payload.end(), out.begin() + 8);
    put_be16(out.data() + 2, checksum16(out));
    return out;
}

std::optional<IcmpEcho> parse_icmp_echo(ByteSpan d) {
    if (d.size() < 8) return std::nullopt;
    if (checksum16(d) != 0) return std::nullopt;
    IcmpEcho e;
    e.type = d[0];
    e.ident = get_be16(d.data() + 4);
    e.seq = get_be16(d.data() + 6);
    e.payload = d.subspan(8);
    return e;
}

uint16_t l4_checksum(uint32_t src, uint32_t dst, uint8_t proto, ByteSpan segment) {
    uint8_t pseudo[12];
    put_be32(pseudo, src);
    put_be32(pseudo + 4, dst);
    pseudo[8] = 0;
    pseudo[9] = proto;
    put_be16(pseudo + 10, static_cast<uint16_t>(segment.size()));
    uint32_t sum = 0;
    for (size_t i = 0; i + 1 < sizeof(pseudo); i += 2)
        sum += static_cast<uint32_t>(pseudo[i] << 8 | pseudo[i + 1]);
    uint16_t inv = checksum16(segment, sum);
    return inv;
}

Bytes build_udp(uint32_t src_ip, uint32_t dst_ip, uint16_t src_port, uint16_t dst_port,
                ByteSpan payload) {
    Bytes out(8 + payload.size(), 0);
    put_be16(out.data(), src_port);
    put_be16(out.data() + 2, dst_port);
    put_be16(out.data() + 4, static_cast<uint16_t>(out.size()));
    std::copy(payload.begin(), payload.end(), out.begin() + 8);
    uint16_t csum = l4_checksum(src_ip, dst_ip, kProtoUdp, out);
    if (csum == 0) csum = 0xffff;
    put_be16(out.data() + 6, csum);
    return out;
}

std::optional<UdpView> parse_udp(uint32_t src_ip, uint32_t dst_ip, ByteSpan seg) {
    if (seg.size() < 8) return std::nullopt;
    UdpView v;
    v.src_port = get_be16(seg.data());
    v.dst_port = get_be16(seg.data() + 2);
    uint16_t len = get_be16(seg.data() + 4);
    if (len < 8 || len > seg.size()) return std::nullopt;
    v.checksum_ok = l4_checksum(src_ip, dst_ip, kProtoUdp, seg.first(len)) == 0;
    v.payload = seg.subspan(8, len - 8);
    return v;
}

Bytes build_tcp(uint32_t src_ip, uint32_t dst_ip, const TcpSegment& s) {
    Bytes out(20 + s.payload.size(), 0);
    put_be16(out.data(), s.src_port);
    put_be16(out.data() + 2, s.dst_port);
    put_be32(out.data() + 4, s.seq);
    put_be32(out.data() + 8, s.ack);
    put_be16(out.data() + 12, static_cast<uint16_t>(5 << 12 | (s.flags & 0x1ff)));
    put_be16(out.data() + 14, s.window);
    std::copy(s.payload.begin(), s.payload.end(), out.begin() + 20);
    put_be16(out.data() + 16, l4_checksum(src_ip, dst_ip, kProtoTcp, out));
    return out;
}

std::optional<TcpView> parse_tcp(uint32_t src_ip, uint32_t dst_ip, ByteSpan seg) {
    if (seg.size() < 20) return std::nullopt;
    uint16_t off_flags = get_be16(seg.data() + 12);
    size_t hlen = static_cast<size_t>(off_flags >> 12) * 4;
    if (hlen < 20 || hlen > seg.size()) return std::nullopt;
    TcpView v;
    v.seg.src_port = get_be16(seg.data());
    v.seg.dst_port = get_be16(seg.data() + 2);
    v.seg.seq = get_be32(seg.data() + 4);
    v.seg.ack = get_be32(seg.data() + 8);
    v.seg.flags = off_flags & 0x1ff;
    v.seg.window = get_be16(seg.data() + 14);
    v.seg.payload = seg.subspan(hlen);
    v.checksum_ok = l4_checksum(src_ip, dst_ip, kProtoTcp, seg) == 0;
    return v;
}

}  // namespace aurora::wire
