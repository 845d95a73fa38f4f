#include "aurora/net_tss.hpp"

#include <algorithm>

namespace aurora::net_tss {

using channel::DeviceId;
using channel::OpCode;
using channel::Status;

const char* sock_err_name(SockErr e) {
    switch (e) {
        case SockErr::WouldBlock: return "WouldBlock";
        case SockErr::ConnRefused: return "ConnRefused";
        case SockErr::Timeout: return "Timeout";
        case SockErr::Closed: return "Closed";
        case SockErr::InvalidArg: return "InvalidArg";
        case SockErr::AddrInUse: return "AddrInUse";
        case SockErr::ProbeFailed: return "ProbeFailed";
        case SockErr::TagCollision: return "TagCollision";
        case SockErr::ChannelError: return "ChannelError";
        case SockErr::PoolExhausted: return "PoolExhausted";
    }
    return "?";
}

const char* tcp_state_name(TcpState s) {
    switch (s) {
        case TcpState::Closed: return "CLOSED";
        case TcpState::Listen: return "LISTEN";
        case TcpState::SynSent: return "SYN_SENT";
        case TcpState::SynRcvd: return "SYN_RCVD";
        case TcpState::Established: return "ESTABLISHED";
        case TcpState::FinWait1: return "FIN_WAIT_1";
        case TcpState::FinWait2: return "FIN_WAIT_2";
        case TcpState::CloseWait: return "CLOSE_WAIT";
        case TcpState::LastAck: return "LAST_ACK";
        case TcpState::TimeWait: return "TIME_WAIT";
    }
    return "?";
}

constexpr size_t kMss = 1456;          // 1500 - 24 (ip+options) - 20 (tcp)
constexpr size_t kMaxL4 = 1476;        // unfragmented l4 payload bound
constexpr size_t kFragUnit = 1472;     // largest 8-aligned fragment payload

NetStack::NetStack(channel::EnclaveEndpoint& ep, time_tss::TrustedClock& clock, Metrics& metrics,
                   StackConfig cfg)
    : ep_(ep), clock_(clock), metrics_(metrics), cfg_(cfg),
      rng_(cfg.entropy_seed), pool_(cfg.pool_frames) {
    arp_cache_[cfg_.ipv4] = cfg_.mac;
    // keep a sender's burst inside the channel ring so the SSV never has to
    // drop event frames on the floor; half the ring is left for responses
    uint32_t ring_bytes = ep_.fifo_capacity() / 2 * static_cast<uint32_t>(kMss);
    if (ring_bytes > 0 && cfg_.recv_window > ring_bytes)
        cfg_.recv_window = static_cast<uint16_t>(std::min<uint32_t>(ring_bytes, 65535));
}

Result<Unit, SockErr> NetStack::init(ssv::Ssv& ssv) {
    auto probe = ep_.request(DeviceId::Nic, OpCode::Probe, {});
    if (!probe.ok() || probe.value().status != static_cast<uint8_t>(Status::Ok))
        return SockErr::ProbeFailed;
    auto wire = ssv::NicProbeWire::parse(probe.value().payload);
    if (!wire || !wire->link_up) return SockErr::ProbeFailed;

    auto reg = ssv.register_flow(ep_.session_id(), cfg_.mac.b, cfg_.ipv4);
    if (!reg.ok()) {
        return reg.error() == ssv::Ssv::FlowErr::TagCollision ? SockErr::TagCollision
                                                              : SockErr::ProbeFailed;
    }
    flow_tag_ = reg.value();
    initialized_ = true;
    send_gratuitous_arp();
    return Unit{};
}

uint16_t NetStack::ephemeral_port() {
    for (int tries = 0; tries < 64; ++tries) {
        uint16_t p = static_cast<uint16_t>(49152 + rng_.uniform(0, 16383));
        bool used = false;
        for (auto& [fd, s] : socks_) {
            if (s.udp && s.udp->local_port == p) used = true;
            if (s.tcp && s.tcp->local_port == p) used = true;
        }
        if (!used) return p;
    }
    return 0;
}

std::array<uint8_t, 4> NetStack::tag_for_dst(uint32_t dst_ip) const {
    auto it = cfg_.peer_tags.find(dst_ip);
    return it != cfg_.peer_tags.end() ? it->second : flow_tag_;
}

Result<Unit, SockErr> NetStack::tx_frame(Bytes frame) {
    ++egress_frames_;
    ++metrics_.stack_tx_frames;
    auto& m = ep_.machine();
    m.advance(m.costs().stack_per_packet + frame.size() * m.costs().stack_per_byte);
    auto r = ep_.request(DeviceId::Nic, OpCode::Write, frame, cfg_.tx_mode);
    if (!r.ok())
        return r.error() == channel::ChanErr::Timeout ? SockErr::Timeout : SockErr::ChannelError;
    if (r.value().kind == channel::RequestOutcome::Kind::Response &&
        r.value().status != static_cast<uint8_t>(Status::Ok))
        return SockErr::ChannelError;
    return Unit{};
}

Result<Unit, SockErr> NetStack::resolve_and_send(uint32_t dst_ip, ByteSpan packet) {
    auto it = arp_cache_.find(dst_ip);
    if (it == arp_cache_.end()) {
        if (!pool_.acquire()) return SockErr::PoolExhausted;
        arp_pending_[dst_ip].emplace_back(packet.begin(), packet.end());
        send_arp_request(dst_ip);
        return Unit{};
    }
    return tx_frame(wire::build_ether(it->second, cfg_.mac, wire::kEtherIpv4, packet));
}

Result<Unit, SockErr> NetStack::send_ipv4(uint32_t dst_ip, uint8_t protocol, ByteSpan l4) {
    wire::Ipv4Header h;
    h.protocol = protocol;
    h.src = cfg_.ipv4;
    h.dst = dst_ip;
    h.ident = ident_++;
    h.options = tag_for_dst(dst_ip);

    if (l4.size() <= kMaxL4) {
        return resolve_and_send(dst_ip, wire::build_ipv4(h, l4));
    }
    // IPv4 fragmentation; the options (flow tag) ride in every fragment
    size_t off = 0;
    while (off < l4.size()) {
        size_t n = std::min(kFragUnit, l4.size() - off);
        h.more_fragments = off + n < l4.size();
        h.frag_offset_units = static_cast<uint16_t>(off / 8);
        auto r = resolve_and_send(dst_ip, wire::build_ipv4(h, l4.subspan(off, n)));
        if (!r.ok()) return r;
        off += n;
    }
    return Unit{};
}

void NetStack::send_arp_request(uint32_t ip) {
    wire::ArpPacket a;
    a.op = 1;
    a.sender_mac = cfg_.mac;
    a.sender_ip = cfg_.ipv4;
    a.target_ip = ip;
    tx_frame(wire::build_ether(MacAddr::broadcast(), cfg_.mac, wire::kEtherArp, wire::build_arp(a)));
}

void NetStack::send_gratuitous_arp() {
    wire::ArpPacket a;
    a.op = 1;
    a.sender_mac = cfg_.mac;
    a.sender_ip = cfg_.ipv4;
    a.target_ip = cfg_.ipv4;
    tx_frame(wire::build_ether(MacAddr::broadcast(), cfg_.mac, wire::kEtherArp, wire::build_arp(a)));
}

// --- sockets ---

Result<int, SockErr> NetStack::socket(Proto p) {
    int fd = next_fd_++;
    RawSock s;
    s.proto = p;
    switch (p) {
        case Proto::Udp: s.udp.emplace(); break;
        case Proto::Tcp: s.tcp.emplace(); break;
        case Proto::RawIcmp: s.icmp.emplace(); break;
    }
    socks_[fd] = std::move(s);
    return fd;
}

Result<Unit, SockErr> NetStack::bind(int fd, uint16_t port) {
    auto it = socks_.find(fd);
    if (it == socks_.end()) return SockErr::InvalidArg;
    for (auto& [ofd, s] : socks_) {
        if (ofd == fd) continue;
        if (it->second.udp && s.udp && s.udp->local_port == port) return SockErr::AddrInUse;
        if (it->second.tcp && s.tcp && s.tcp->local_port == port) return SockErr::AddrInUse;
    }
    if (it->second.udp) it->second.udp->local_port = port;
    if (it->second.tcp) it->second.tcp->local_port = port;
    return Unit{};
}

Result<Unit, SockErr> NetStack::listen(int fd) {
    TcpPcb* pcb = tcp_of(fd);
    if (!pcb || pcb->local_port == 0) return SockErr::InvalidArg;
    pcb->enter(TcpState::Listen);
    return Unit{};
}

Result<int, SockErr> NetStack::accept(int fd) {
    TcpPcb* pcb = tcp_of(fd);
    if (!pcb || pcb->state != TcpState::Listen) return SockErr::InvalidArg;
    if (pcb->accept_q.empty()) return SockErr::WouldBlock;
    int child = pcb->accept_q.front();
    pcb->accept_q.pop_front();
    return child;
}

Result<Unit, SockErr> NetStack::connect(int fd, uint32_t ip, uint16_t port) {
    TcpPcb* pcb = tcp_of(fd);
    if (!pcb || pcb->state != TcpState::Closed) return SockErr::InvalidArg;
    if (pcb->local_port == 0) pcb->local_port = ephemeral_port();
    pcb->remote_ip = ip;
    pcb->remote_port = port;
    pcb->iss = rng_.next_u32();
    pcb->snd_una = pcb->iss;
    pcb->snd_nxt = pcb->iss + 1;
    pcb->data_base = pcb->iss + 1;
    pcb->enter(TcpState::SynSent);
    tcp_send_segment(*pcb, wire::kTcpSyn, pcb->iss, {}, true);
    return Unit{};
}

Result<Unit, SockErr> NetStack::connect_status(int fd) const {
    const TcpPcb* pcb = tcp_of(fd);
    if (!pcb) return SockErr::InvalidArg;
    if (pcb->refused) return SockErr::ConnRefused;
    if (pcb->timed_out) return SockErr::Timeout;
    if (pcb->state == TcpState::Established) return Unit{};
    if (pcb->state == TcpState::SynSent) return SockErr::WouldBlock;
    return SockErr::Closed;
}

Result<size_t, SockErr> NetStack::send(int fd, ByteSpan data) {
    TcpPcb* pcb = tcp_of(fd);
    if (!pcb) return SockErr::InvalidArg;
    if (pcb->timed_out) return SockErr::Timeout;
    if (pcb->state != TcpState::Established && pcb->state != TcpState::CloseWait)
        return SockErr::Closed;
    pcb->tx_buf.insert(pcb->tx_buf.end(), data.begin(), data.end());
    tcp_output(fd, *pcb);
    return data.size();
}

Result<Bytes, SockErr> NetStack::recv(int fd, size_t max) {
    TcpPcb* pcb = tcp_of(fd);
    if (!pcb) return SockErr::InvalidArg;
    if (pcb->timed_out) return SockErr::Timeout;
    if (pcb->rx_stream.empty()) {
        if (pcb->peer_closed || pcb->state == TcpState::Closed) return SockErr::Closed;
        return SockErr::WouldBlock;
    }
    size_t n = max == 0 ? pcb->rx_stream.size() : std::min(max, pcb->rx_stream.size());
    Bytes out(pcb->rx_stream.begin(), pcb->rx_stream.begin() + n);
    pcb->rx_stream.erase(pcb->rx_stream.begin(), pcb->rx_stream.begin() + n);
    return out;
}

Result<Unit, SockErr> NetStack::sendto(int fd, uint32_t ip, uint16_t port, ByteSpan payload) {
    auto it = socks_.find(fd);
    if (it == socks_.end() || !it->second.udp) return SockErr::InvalidArg;
    if (it->second.udp->local_port == 0) it->second.udp->local_port = ephemeral_port();
    Bytes seg = wire::build_udp(cfg_.ipv4, ip, it->second.udp->local_port, port, payload);
    return send_ipv4(ip, wire::kProtoUdp, seg);
}

Result<NetStack::Datagram, SockErr> NetStack::recvfrom(int fd) {
    auto it = socks_.find(fd);
    if (it == socks_.end() || !it->second.udp) return SockErr::InvalidArg;
    if (it->second.udp->rx.empty()) return SockErr::WouldBlock;
    Datagram d = std::move(it->second.udp->rx.front());
    it->second.udp->rx.pop_front();
    pool_.release();
    return d;
}

Result<Unit, SockErr> NetStack::close(int fd) {
    auto it = socks_.find(fd);
    if (it == socks_.end()) return SockErr::InvalidArg;
    if (it->second.tcp) {
        TcpPcb& pcb = *it->second.tcp;
        switch (pcb.state) {
            case TcpState::Established:
            case TcpState::CloseWait:
                pcb.close_requested = true;
                tcp_output(fd, pcb);
                return Unit{};
            case TcpState::SynSent:
            case TcpState::Listen:
            case TcpState::Closed:
                pcb.enter(TcpState::Closed);
                return Unit{};
            default:
                return Unit{};
        }
    }
    socks_.erase(it);
    return Unit{};
}

TcpState NetStack::tcp_state(int fd) const {
    const TcpPcb* pcb = tcp_of(fd);
    return pcb ? pcb->state : TcpState::Closed;
}

std::vector<TcpState> NetStack::tcp_state_trace(int fd) const {
    const TcpPcb* pcb = tcp_of(fd);
    return pcb ? pcb->trace : std::vector<TcpState>{};
}

size_t NetStack::tcp_unacked(int fd) const {
    const TcpPcb* pcb = tcp_of(fd);
    return pcb ? pcb->tx_buf.size() : 0;
}

NetStack::TcpPcb* NetStack::tcp_of(int fd) {
    auto it = socks_.find(fd);
    return it != socks_.end() && it->second.tcp ? &*it->second.tcp : nullptr;
}

const NetStack::TcpPcb* NetStack::tcp_of(int fd) const {
    auto it = socks_.find(fd);
    return it != socks_.end() && it->second.tcp ? &*it->second.tcp : nullptr;
}

// --- icmp ---

Result<NetStack::EchoResult, SockErr> NetStack::icmp_echo(uint32_t dst, ByteSpan payload,
                                                          int count, std::function<void()> yield,
                                                          VirtNs per_probe_timeout) {
    if (!initialized_) return SockErr::ProbeFailed;
    auto sockr = socket(Proto::RawIcmp);
    if (!sockr.ok()) return sockr.error();
    int fd = sockr.value();
    uint16_t ident = static_cast<uint16_t>(++icmp_ident_);
    EchoResult result;

    for (int i = 0; i < count; ++i) {
        wire::IcmpEcho echo;
        echo.type = 8;
        echo.ident = ident;
        echo.seq = static_cast<uint16_t>(i);
        echo.payload = payload;
        VirtNs t0 = vnow();  // the transmit leg is part of the measured RTT
        auto sent = send_ipv4(dst, wire::kProtoIcmp, wire::build_icmp_echo(echo));
        if (!sent.ok()) {
            socks_.erase(fd);
            return sent.error();
        }
        bool got = false;
        while (vnow() - t0 < per_probe_timeout) {
            step();
            auto& rx = socks_[fd].icmp->rx;
            while (!rx.empty()) {
                auto rec = std::move(rx.front());
                rx.pop_front();
                if (rec.ident == ident && rec.seq == i) {
                    result.rtts.push_back(vnow() - t0);
                    result.reply_seqs.push_back(rec.seq);
                    got = true;
                }
            }
            if (got) break;
            if (yield) yield();
            ep_.machine().advance(ep_.machine().costs().poll_quantum);
        }
        if (!got) ++result.timeouts;
    }
    socks_.erase(fd);
    return result;
}

// --- rx path ---

NetStack::Events NetStack::poll_events() {
    Events e;
    if (cfg_.notify_mode) {
        while (ep_.machine().pop_notify(ep_.enclave_id())) {
            ++e.tokens;
            ++metrics_.notify_tokens_consumed;
        }
        if (e.tokens == 0 && ep_.queued_events() == 0) {
            ++metrics_.empty_polls;
            return e;
        }
    }
    ep_.pump();
    while (auto ev = ep_.next_event()) {
        if (ev->device == static_cast<uint8_t>(DeviceId::Nic) &&
            ev->status == static_cast<uint8_t>(Status::Event)) {
            ++e.frames;
            process_frame(ev->payload);
        }
    }
    if (e.frames == 0 && !cfg_.notify_mode) ++metrics_.empty_polls;
    return e;
}

void NetStack::step() {
    poll_events();
    run_timers();
    for (auto& [fd, s] : socks_)
        if (s.tcp) tcp_output(fd, *s.tcp);
}

void NetStack::process_frame(ByteSpan frame) {
    auto ev = wire::parse_ether(frame);
    if (!ev) return;
    if (ev->src == cfg_.mac) return;  // hairpin copy of our own frame
    if (!ev->dst.is_broadcast() && ev->dst != cfg_.mac) return;
    ++ingress_frames_;
    ++metrics_.stack_rx_frames;
    auto& m = ep_.machine();
    m.advance(m.costs().stack_per_packet + frame.size() * m.costs().stack_per_byte);
    if (ev->ethertype == wire::kEtherArp)
        process_arp(*ev);
    else if (ev->ethertype == wire::kEtherIpv4)
        process_ipv4(ev->payload);
}

void NetStack::process_arp(const wire::EtherView& ev) {
    auto arp = wire::parse_arp(ev.payload);
    if (!arp) return;
    arp_cache_[arp->sender_ip] = arp->sender_mac;
    flush_arp_pending(arp->sender_ip);
    if (arp->op == 1 && arp->target_ip == cfg_.ipv4 && arp->sender_ip != cfg_.ipv4) {
        wire::ArpPacket reply;
        reply.op = 2;
        reply.sender_mac = cfg_.mac;
        reply.sender_ip = cfg_.ipv4;
        reply.target_mac = arp->sender_mac;
        reply.target_ip = arp->sender_ip;
        tx_frame(wire::build_ether(arp->sender_mac, cfg_.mac, wire::kEtherArp,
                                   wire::build_arp(reply)));
    }
}

void NetStack::flush_arp_pending(uint32_t ip) {
    auto it = arp_pending_.find(ip);
    if (it == arp_pending_.end()) return;
    auto queued = std::move(it->second);
    arp_pending_.erase(it);
    for (auto& pkt : queued) {
        pool_.release();
        resolve_and_send(ip, pkt);
    }
}

void NetStack::process_ipv4(ByteSpan packet) {
    auto v = wire::parse_ipv4(packet);
    if (!v || !v->checksum_ok) {
        ++checksum_drops_;
        return;
    }
    if (v->hdr.dst != cfg_.ipv4) return;
    // accepted ingress must carry this stack's tag (the SSV routed it here)
    if (v->hdr.options != flow_tag_) {
        ++checksum_drops_;
        return;
    }

    if (v->hdr.more_fragments || v->hdr.frag_offset_units > 0) {
        FragKey key{v->hdr.src, v->hdr.ident};
        FragBuf& buf = frags_[key];
        if (buf.parts.empty()) {
            buf.first_seen = vnow();
            buf.protocol = v->hdr.protocol;
        }
        buf.parts[v->hdr.frag_offset_units] = Bytes(v->payload.begin(), v->payload.end());
        if (!v->hdr.more_fragments) {
            buf.have_last = true;
            buf.total = static_cast<size_t>(v->hdr.frag_offset_units) * 8 + v->payload.size();
        }
        if (buf.have_last) {
            Bytes whole(buf.total);
            size_t covered = 0;
            for (auto& [off, part] : buf.parts) {
                size_t byte_off = static_cast<size_t>(off) * 8;
                if (byte_off + part.size() > buf.total) break;
                std::copy(part.begin(), part.end(), whole.begin() + byte_off);
                covered += part.size();
            }
            if (covered == buf.total) {
                uint8_t proto = buf.protocol;
                uint32_t src = key.src;
                frags_.erase(key);
                deliver_l4(proto, src, whole);
            }
        }
        return;
    }
    deliver_l4(v->hdr.protocol, v->hdr.src, v->payload);
}

void NetStack::deliver_l4(uint8_t protocol, uint32_t src_ip, ByteSpan payload) {
    switch (protocol) {
        case wire::kProtoIcmp: process_icmp(src_ip, payload); break;
        case wire::kProtoUdp: process_udp(src_ip, payload); break;
        case wire::kProtoTcp: process_tcp(src_ip, payload); break;
        default: break;
    }
}

void NetStack::process_icmp(uint32_t src_ip, ByteSpan data) {
    auto echo = wire::parse_icmp_echo(data);
    if (!echo) {
        ++checksum_drops_;
        return;
    }
    if (echo->type == 8) {
        wire::IcmpEcho reply;
        reply.type = 0;
        reply.ident = echo->ident;
        reply.seq = echo->seq;
        reply.payload = echo->payload;
        send_ipv4(src_ip, wire::kProtoIcmp, wire::build_icmp_echo(reply));
        return;
    }
    if (echo->type == 0) {
        for (auto& [fd, s] : socks_) {
            if (s.icmp) {
                s.icmp->rx.push_back(
                    IcmpReplyRec{echo->ident, echo->seq, Bytes(echo->payload.begin(), echo->payload.end())});
            }
        }
    }
}

void NetStack::process_udp(uint32_t src_ip, ByteSpan seg) {
    auto v = wire::parse_udp(src_ip, cfg_.ipv4, seg);
    if (!v || !v->checksum_ok) {
        ++checksum_drops_;
        return;
    }
    for (auto& [fd, s] : socks_) {
        if (s.udp && s.udp->local_port == v->dst_port) {
            if (!pool_.acquire()) return;  // pool pressure: drop, UDP is lossy
            s.udp->rx.push_back(Datagram{src_ip, v->src_port,
                                         Bytes(v->payload.begin(), v->payload.end())});
            return;
        }
    }
}

void NetStack::tcp_send_segment(TcpPcb& pcb, uint16_t flags, uint32_t seq, ByteSpan payload,
                                bool retransmittable) {
    wire::TcpSegment seg;
    seg.src_port = pcb.local_port;
    seg.dst_port = pcb.remote_port;
    seg.seq = seq;
    seg.ack = pcb.rcv_nxt;
    seg.flags = flags;
    seg.window = cfg_.recv_window;
    seg.payload = payload;
    Bytes raw = wire::build_tcp(cfg_.ipv4, pcb.remote_ip, seg);
    send_ipv4(pcb.remote_ip, wire::kProtoTcp, raw);
    if (retransmittable) {
        if (pool_.acquire())
            pcb.rtx.push_back(Segment{seq, flags, Bytes(payload.begin(), payload.end()),
                                      vnow(), 0});
    }
}

void NetStack::tcp_send_rst(uint32_t dst_ip, uint16_t dst_port, uint16_t src_port, uint32_t seq,
                            uint32_t ack, bool with_ack) {
    wire::TcpSegment seg;
    seg.src_port = src_port;
    seg.dst_port = dst_port;
    seg.seq = seq;
    seg.ack = ack;
    seg.flags = static_cast<uint16_t>(wire::kTcpRst | (with_ack ? wire::kTcpAck : 0));
    seg.window = 0;
    Bytes raw = wire::build_tcp(cfg_.ipv4, dst_ip, seg);
    send_ipv4(dst_ip, wire::kProtoTcp, raw);
}

static uint32_t seg_seqlen(uint16_t flags, size_t payload) {
    return static_cast<uint32_t>(payload + ((flags & wire::kTcpSyn) ? 1 : 0) +
                                 ((flags & wire::kTcpFin) ? 1 : 0));
}

void NetStack::process_tcp(uint32_t src_ip, ByteSpan seg) {
    auto v = wire::parse_tcp(src_ip, cfg_.ipv4, seg);
    if (!v || !v->checksum_ok) {
        ++checksum_drops_;
        return;
    }
    const wire::TcpSegment& s = v->seg;

    // exact connection match first, then a listener
    int fd = -1;
    int listener = -1;
    for (auto& [cfd, sk] : socks_) {
        if (!sk.tcp) continue;
        TcpPcb& p = *sk.tcp;
        if (p.local_port != s.dst_port) continue;
        if (p.state == TcpState::Listen) {
            listener = cfd;
            continue;
        }
        if (p.remote_ip == src_ip && p.remote_port == s.src_port && p.state != TcpState::Closed) {
            fd = cfd;
            break;
        }
    }

    if (fd < 0 && listener >= 0 && (s.flags & wire::kTcpSyn) && !(s.flags & wire::kTcpAck)) {
        auto childr = socket(Proto::Tcp);
        if (!childr.ok()) return;
        int cfd = childr.value();
        TcpPcb& child = *socks_[cfd].tcp;
        TcpPcb& lp = *socks_[listener].tcp;
        child.local_port = lp.local_port;
        child.remote_ip = src_ip;
        child.remote_port = s.src_port;
        child.rcv_nxt = s.seq + 1;
        child.peer_window = s.window;
        child.iss = rng_.next_u32();
        child.snd_una = child.iss;
        child.snd_nxt = child.iss + 1;
        child.data_base = child.iss + 1;
        child.parent = listener;
        child.enter(TcpState::SynRcvd);
        tcp_send_segment(child, wire::kTcpSyn | wire::kTcpAck, child.iss, {}, true);
        return;
    }
    if (fd < 0) {
        // no socket: refuse with RST (unless it already is one)
        if (!(s.flags & wire::kTcpRst))
            tcp_send_rst(src_ip, s.src_port, s.dst_port, s.ack, s.seq + seg_seqlen(s.flags, s.payload.size()),
                         !(s.flags & wire::kTcpAck));
        return;
    }

    TcpPcb& pcb = *socks_[fd].tcp;
    pcb.peer_window = s.window;

    if (s.flags & wire::kTcpRst) {
        if (pcb.state == TcpState::SynSent) pcb.refused = true;
        pcb.rtx.clear();
        pcb.enter(TcpState::Closed);
        return;
    }

    if (s.flags & wire::kTcpAck) {
        uint32_t a = s.ack;
        if (static_cast<int32_t>(a - pcb.snd_una) > 0 &&
            static_cast<int32_t>(a - pcb.snd_nxt) <= 0) {
            // trim acked data from the buffer
            if (static_cast<int32_t>(a - pcb.data_base) > 0) {
                uint32_t acked = std::min<uint32_t>(a - pcb.data_base,
                                               static_cast<uint32_t>(pcb.tx_buf.size()));
                pcb.tx_buf.erase(pcb.tx_buf.begin(), pcb.tx_buf.begin() + acked);
                pcb.data_base += acked;
                pcb.unsent_off = pcb.unsent_off > acked ? pcb.unsent_off - acked : 0;
            }
            if (pcb.fin_sent && static_cast<int32_t>(a - pcb.fin_seq) > 0) pcb.fin_acked = true;
            pcb.snd_una = a;
            // drop fully acked retransmission entries
            auto& q = pcb.rtx;
            for (size_t i = 0; i < q.size();) {
                if (static_cast<int32_t>(q[i].seq + seg_seqlen(q[i].flags, q[i].payload.size()) - a) <= 0) {
                    pool_.release();
                    q.erase(q.begin() + i);
                } else {
                    ++i;
                }
            }
        }
        switch (pcb.state) {
            case TcpState::SynRcvd:
                if (pcb.snd_una == pcb.snd_nxt) {
                    pcb.enter(TcpState::Established);
                    if (pcb.parent >= 0) {
                        TcpPcb* lp = tcp_of(pcb.parent);
                        if (lp) lp->accept_q.push_back(fd);
                    }
                }
                break;
            case TcpState::FinWait1:
                if (pcb.fin_acked) pcb.enter(TcpState::FinWait2);
                break;
            case TcpState::LastAck:
                if (pcb.fin_acked) pcb.enter(TcpState::Closed);
                break;
            default: break;
        }
    }

    if (pcb.state == TcpState::SynSent && (s.flags & wire::kTcpSyn) && (s.flags & wire::kTcpAck)) {
        if (s.ack == pcb.snd_nxt) {
            pcb.rcv_nxt = s.seq + 1;
            pcb.snd_una = s.ack;
            pcb.rtx.clear();
            pcb.enter(TcpState::Established);
            tcp_send_segment(pcb, wire::kTcpAck, pcb.snd_nxt, {}, false);
        }
        return;
    }

    // in-order data
    bool acked_something = false;
    if (!s.payload.empty()) {
        if (s.seq == pcb.rcv_nxt &&
            (pcb.state == TcpState::Established || pcb.state == TcpState::FinWait1 ||
             pcb.state == TcpState::FinWait2)) {
            pcb.rx_stream.insert(pcb.rx_stream.end(), s.payload.begin(), s.payload.end());
            pcb.rcv_nxt += static_cast<uint32_t>(s.payload.size());
            acked_something = true;
        } else {
            // out-of-order or duplicate: re-ACK what we have
            tcp_send_segment(pcb, wire::kTcpAck, pcb.snd_nxt, {}, false);
            return;
        }
    }

    if (s.flags & wire::kTcpFin) {
        uint32_t fin_seq = s.seq + static_cast<uint32_t>(s.payload.size());
        if (fin_seq == pcb.rcv_nxt) {
            pcb.rcv_nxt += 1;
            pcb.peer_closed = true;
            acked_something = true;
            switch (pcb.state) {
                case TcpState::Established: pcb.enter(TcpState::CloseWait); break;
                case TcpState::FinWait1:
                    pcb.enter(TcpState::TimeWait);
                    pcb.time_wait_until = vnow() + cfg_.time_wait;
                    break;
                case TcpState::FinWait2:
                    pcb.enter(TcpState::TimeWait);
                    pcb.time_wait_until = vnow() + cfg_.time_wait;
                    break;
                default: break;
            }
        }
    }
    if (acked_something) tcp_send_segment(pcb, wire::kTcpAck, pcb.snd_nxt, {}, false);
}

void NetStack::tcp_output(int fd, TcpPcb& pcb) {
    (void)fd;
    if (pcb.state != TcpState::Established && pcb.state != TcpState::CloseWait &&
        pcb.state != TcpState::FinWait1)
        return;

    while (pcb.unsent_off < pcb.tx_buf.size()) {
        uint32_t inflight = pcb.snd_nxt - pcb.snd_una;
        uint32_t wnd = std::max<uint32_t>(pcb.peer_window, 1);
        if (inflight >= wnd) break;
        size_t n = std::min({kMss, pcb.tx_buf.size() - pcb.unsent_off,
                             static_cast<size_t>(wnd - inflight)});
        if (n == 0) break;
        Bytes chunk(pcb.tx_buf.begin() + pcb.unsent_off,
                    pcb.tx_buf.begin() + pcb.unsent_off + n);
        tcp_send_segment(pcb, wire::kTcpAck | wire::kTcpPsh, pcb.snd_nxt, chunk, true);
        pcb.snd_nxt += static_cast<uint32_t>(n);
        pcb.unsent_off += static_cast<uint32_t>(n);
    }

    if (pcb.close_requested && !pcb.fin_sent && pcb.unsent_off == pcb.tx_buf.size()) {
        pcb.fin_seq = pcb.snd_nxt;
        tcp_send_segment(pcb, wire::kTcpFin | wire::kTcpAck, pcb.snd_nxt, {}, true);
        pcb.snd_nxt += 1;
        pcb.fin_sent = true;
        pcb.enter(pcb.state == TcpState::CloseWait ? TcpState::LastAck : TcpState::FinWait1);
    }
}

void NetStack::run_timers() {
    VirtNs now = vnow();
    for (auto& [fd, s] : socks_) {
        if (!s.tcp) continue;
        TcpPcb& pcb = *s.tcp;
        if (pcb.state == TcpState::TimeWait && now >= pcb.time_wait_until) {
            pcb.enter(TcpState::Closed);
            continue;
        }
        for (auto& seg : pcb.rtx) {
            VirtNs backoff = cfg_.rto << std::min<uint32_t>(seg.retries, 10);
            if (now - seg.sent_at < backoff) continue;
            if (seg.retries >= cfg_.max_retries) {
                pcb.timed_out = true;
                pcb.rtx.clear();
                pcb.enter(TcpState::Closed);
                break;
            }
            ++seg.retries;
            seg.sent_at = now;
            tcp_send_segment(pcb, seg.flags, seg.seq, seg.payload, false);
        }
    }
    for (auto it = frags_.begin(); it != frags_.end();) {
        if (now - it->second.first_seen > cfg_.frag_timeout)
            it = frags_.erase(it);
        else
            ++it;
    }
    if (cfg_.tx_mode.kind == channel::RequestMode::Kind::Batched && ep_.batch_pending() > 0 &&
        now - last_batch_flush_ > 1 * kMs) {
        ep_.flush_batch();
        last_batch_flush_ = now;
    }
}

void NetStack::fuzz_corrupt(DetRng& rng) {
    // scrambles protocol state wholesale; the stack stays inside its own
    // identity (src ip/mac are stamped from config on every egress path)
    for (auto& [fd, s] : socks_) {
        if (s.tcp) {
            TcpPcb& p = *s.tcp;
            p.state = static_cast<TcpState>(rng.uniform(0, 9));
            p.snd_una = rng.next_u32();
            p.snd_nxt = rng.next_u32();
            p.rcv_nxt = rng.next_u32();
            p.data_base = rng.next_u32();
            p.unsent_off = 0;
            p.remote_port = static_cast<uint16_t>(rng.uniform(1, 65535));
            p.peer_window = static_cast<uint16_t>(rng.uniform(0, 65535));
            p.rtx.clear();
        }
        if (s.udp) s.udp->local_port = static_cast<uint16_t>(rng.uniform(1, 65535));
    }
    for (auto& [ip, mac] : arp_cache_) rng.fill(mac.b.data(), mac.b.size());
}

}  // namespace aurora::net_tss
