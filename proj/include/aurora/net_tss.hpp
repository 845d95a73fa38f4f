#pragma once

#include "aurora/channel.hpp"
#include "aurora/time_tss.hpp"
#include "aurora/wire.hpp"

namespace aurora::net_tss {

using wire::MacAddr;

enum class SockErr : uint8_t {
    WouldBlock,
    ConnRefused,
    Timeout,
    Closed,
    InvalidArg,
    AddrInUse,
    ProbeFailed,
    TagCollision,
    ChannelError,
    PoolExhausted,
};
const char* sock_err_name(SockErr e);

enum class Proto : uint8_t { Udp, Tcp, RawIcmp };

enum class TcpState : uint8_t {
    Closed,
    Listen,
    SynSent,
    SynRcvd,
    Established,
    FinWait1,
    FinWait2,
    CloseWait,
    LastAck,
    TimeWait,
};
const char* tcp_state_name(TcpState s);

struct StackConfig {
    MacAddr mac;
    uint32_t ipv4 = 0;
    bool notify_mode = true;
    channel::RequestMode tx_mode = channel::RequestMode::immediate();
    uint16_t recv_window = 65535;
    VirtNs rto = 200 * kMs;
    uint32_t max_retries = 5;
    VirtNs time_wait = 500 * kMs;
    VirtNs frag_timeout = 1 * kSec;
    size_t pool_frames = 256;  // fixed-size packet pool, no general heap
    uint64_t entropy_seed = 1;
    // destination ip -> that enclave stack's flow tag (static per scenario)
    std::map<uint32_t, std::array<uint8_t, 4>> peer_tags;
};

// Fixed-count buffer pool backing queued packets.
class FramePool {
public:
    explicit FramePool(size_t capacity) : capacity_(capacity) {}
    bool acquire() {
        if (in_use_ >= capacity_) {
            ++exhausted_;
            return false;
        }
        ++in_use_;
        return true;
    }
    void release() {
        if (in_use_ > 0) --in_use_;
    }
    uint64_t exhausted() const { return exhausted_; }
    size_t in_use() const { return in_use_; }

private:
    size_t capacity_;
    size_t in_use_ = 0;
    uint64_t exhausted_ = 0;
};

// In-enclave user-level stack: Ethernet, ARP, IPv4 (+ mandatory flow-tag
// option, fragmentation), ICMP echo, UDP and a minimal TCP subset bound to
// the secure channel as its link layer. One instance per enclave thread;
// no path to the NIC exists except seal()/FIFO/SSV.
class NetStack {
public:
    NetStack(channel::EnclaveEndpoint& ep, time_tss::TrustedClock& clock, Metrics& metrics,
             StackConfig cfg);

    Result<Unit, SockErr> init(ssv::Ssv& ssv);
    bool initialized() const { return initialized_; }
    const std::array<uint8_t, 4>& flow_tag() const { return flow_tag_; }
    uint32_t ip() const { return cfg_.ipv4; }
    const MacAddr& mac() const { return cfg_.mac; }

    // socket surface
    Result<int, SockErr> socket(Proto p);
    Result<Unit, SockErr> bind(int fd, uint16_t port);
    Result<Unit, SockErr> listen(int fd);
    Result<int, SockErr> accept(int fd);  // WouldBlock while no pending child
    // Emits the SYN and returns; progress is observed via connect_status().
    Result<Unit, SockErr> connect(int fd, uint32_t ip, uint16_t port);
    Result<Unit, SockErr> connect_status(int fd) const;
    Result<size_t, SockErr> send(int fd, ByteSpan data);
    Result<Bytes, SockErr> recv(int fd, size_t max = 0);
    Result<Unit, SockErr> sendto(int fd, uint32_t ip, uint16_t port, ByteSpan payload);
    struct Datagram {
        uint32_t src_ip;
        uint16_t src_port;
        Bytes payload;
    };
    Result<Datagram, SockErr> recvfrom(int fd);
    Result<Unit, SockErr> close(int fd);

    TcpState tcp_state(int fd) const;
    std::vector<TcpState> tcp_state_trace(int fd) const;
    size_t tcp_unacked(int fd) const;  // bytes buffered but not yet acked

    struct EchoResult {
        std::vector<VirtNs> rtts;            // per successful reply, in probe order
        std::vector<uint16_t> reply_seqs;
        uint32_t timeouts = 0;
    };
    // `yield` lets the cooperative harness run the other actors while a
    // probe is outstanding.
    Result<EchoResult, SockErr> icmp_echo(uint32_t dst, ByteSpan payload, int count,
                                          std::function<void()> yield = {},
                                          VirtNs per_probe_timeout = 100 * kMs);

    struct Events {
        size_t frames = 0;
        size_t tokens = 0;
    };
    // Notify mode consumes the enclave notification queue first; poll mode
    // drains the rx FIFO directly. Both deliver identical frame sequences.
    Events poll_events();
    void step();  // pump events, run timers, retransmit

    // Deliberately corrupts this stack's own pcb tables (isolation testing);
    // the stack keeps running on garbage state but stays within its identity.
    void fuzz_corrupt(DetRng& rng);

    uint64_t egress_frames() const { return egress_frames_; }
    uint64_t ingress_frames() const { return ingress_frames_; }
    bool entropy_tainted() const { return entropy_tainted_; }
    const FramePool& pool() const { return pool_; }
    uint64_t checksum_drops() const { return checksum_drops_; }

private:
    struct UdpPcb {
        uint16_t local_port = 0;
        std::deque<Datagram> rx;
    };
    struct Segment {
        uint32_t seq;
        uint16_t flags;
        Bytes payload;
        VirtNs sent_at;
        uint32_t retries = 0;
    };
    struct TcpPcb {
        TcpState state = TcpState::Closed;
        std::vector<TcpState> trace{TcpState::Closed};
        uint16_t local_port = 0;
        uint32_t remote_ip = 0;
        uint16_t remote_port = 0;
        uint32_t iss = 0;
        uint32_t snd_una = 0;
        uint32_t snd_nxt = 0;
        uint32_t rcv_nxt = 0;
        uint16_t peer_window = 0;
        bool fin_sent = false;
        bool fin_acked = false;
        uint32_t fin_seq = 0;
        std::deque<uint8_t> tx_buf;  // unacked + unsent
        uint32_t unsent_off = 0;     // tx_buf offset of first unsent byte
        uint32_t data_base = 0;      // sequence number of tx_buf.front()
        bool close_requested = false;
        bool refused = false;
        bool timed_out = false;
        std::vector<Segment> rtx;
        std::deque<uint8_t> rx_stream;
        bool peer_closed = false;
        VirtNs time_wait_until = 0;
        int parent = -1;
        std::deque<int> accept_q;

        void enter(TcpState s) {
            state = s;
            trace.push_back(s);
        }
    };
    struct IcmpReplyRec {
        uint16_t ident;
        uint16_t seq;
        Bytes payload;
    };
    struct IcmpPcb {
        std::deque<IcmpReplyRec> rx;
    };
    struct RawSock {
        Proto proto;
        std::optional<UdpPcb> udp;
        std::optional<TcpPcb> tcp;
        std::optional<IcmpPcb> icmp;
    };
    struct FragKey {
        uint32_t src;
        uint16_t ident;
        auto operator<=>(const FragKey&) const = default;
    };
    struct FragBuf {
        std::map<uint16_t, Bytes> parts;  // offset-units -> bytes
        bool have_last = false;
        size_t total = 0;
        uint8_t protocol = 0;
        VirtNs first_seen = 0;
    };

    VirtNs vnow() { return ep_.machine().now(); }
    uint16_t ephemeral_port();
    std::array<uint8_t, 4> tag_for_dst(uint32_t dst_ip) const;
    Result<Unit, SockErr> tx_frame(Bytes frame);
    Result<Unit, SockErr> send_ipv4(uint32_t dst_ip, uint8_t protocol, ByteSpan l4);
    Result<Unit, SockErr> resolve_and_send(uint32_t dst_ip, ByteSpan packet);
    void send_arp_request(uint32_t ip);
    void send_gratuitous_arp();
    void process_frame(ByteSpan frame);
    void process_arp(const wire::EtherView& ev);
    void process_ipv4(ByteSpan packet);
    void deliver_l4(uint8_t protocol, uint32_t src_ip, ByteSpan payload);
    void process_icmp(uint32_t src_ip, ByteSpan data);
    void process_udp(uint32_t src_ip, ByteSpan seg);
    void process_tcp(uint32_t src_ip, ByteSpan seg);
    void tcp_output(int fd, TcpPcb& pcb);
    void tcp_send_segment(TcpPcb& pcb, uint16_t flags, uint32_t seq, ByteSpan payload,
                          bool retransmittable);
    void tcp_send_rst(uint32_t dst_ip, uint16_t dst_port, uint16_t src_port, uint32_t seq,
                      uint32_t ack, bool with_ack);
    void run_timers();
    void flush_arp_pending(uint32_t ip);
    TcpPcb* tcp_of(int fd);
    const TcpPcb* tcp_of(int fd) const;

    channel::EnclaveEndpoint& ep_;
    time_tss::TrustedClock& clock_;
    Metrics& metrics_;
    StackConfig cfg_;
    bool initialized_ = false;
    std::array<uint8_t, 4> flow_tag_{};
    DetRng rng_;
    bool entropy_tainted_ = false;
    FramePool pool_;

    std::map<uint32_t, MacAddr> arp_cache_;
    std::map<uint32_t, std::vector<Bytes>> arp_pending_;  // ip -> queued packets
    std::map<int, RawSock> socks_;
    int next_fd_ = 3;
    uint16_t ident_ = 0;
    std::map<FragKey, FragBuf> frags_;
    uint16_t icmp_ident_ = 0;

    uint64_t egress_frames_ = 0;
    uint64_t ingress_frames_ = 0;
    uint64_t checksum_drops_ = 0;
    VirtNs last_batch_flush_ = 0;
};

}  // namespace aurora::net_tss
