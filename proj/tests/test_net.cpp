#include <doctest.h>

#include "aurora/harness.hpp"

using namespace aurora;
using namespace aurora::net_tss;
using harness::Scenario;
using harness::World;
using harness::WorkloadConfig;

namespace {

Scenario two_stacks(uint32_t n = 2) {
    Scenario sc;
    sc.name = "net_test";
    sc.key_scan = false;
    for (uint32_t i = 0; i < n; ++i) {
        harness::EnclaveSpec e;
        e.id = i;
        e.epid = 0x5000 + i;
        e.ip = 0x0a000001 + i;
        e.networked = true;
        e.workload.kind = WorkloadConfig::Kind::NetIdle;
        sc.enclaves.push_back(e);
    }
    return sc;
}

struct Driver {
    World& w;
    void pump(int rounds = 6) {
        for (int r = 0; r < rounds; ++r) {
            for (size_t i = 0; i < w.node_count(); ++i) {
                w.machine().set_context(platform::Context::enclave_ctx(w.node(i).spec.id));
                if (w.node(i).stack) w.node(i).stack->step();
            }
            w.machine().advance(w.machine().costs().poll_quantum);
        }
    }
};

}  // namespace

TEST_CASE("two stacks register distinct flow tags") {
    World w(two_stacks());
    CHECK(w.node(0).stack->flow_tag() != w.node(1).stack->flow_tag());
    CHECK(w.ssv().flow_table_contains(Epid::from_u64(0x5000)));
    CHECK(w.ssv().flow_table_contains(Epid::from_u64(0x5001)));
}

TEST_CASE("stack init fails cleanly when the nic probe fails") {
    Metrics metrics;
    platform::Machine m{platform::MachineConfig{}};
    m.add_epc(0);
    devices::ClockBank clocks{m, {}};
    ssv::Ssv ssv{m, clocks, nullptr, metrics, Bytes{'i'}};  // no NIC registered
    ssv.attach();
    channel::CertificateAuthority ca{DetRng(3)};
    ca.set_ssv_image(Bytes{'i'});
    channel::EnclaveCredential cred;
    cred.epid = Epid::from_u64(1);
    ca.register_enclave(cred);
    channel::SharedAllocator alloc{m};
    channel::EnclaveEndpoint ep{m, 0, cred.epid, metrics};
    m.set_context(platform::Context::enclave_ctx(0));
    REQUIRE(ep.establish(cred, ssv.genuine_token(), ca, ssv, alloc).ok());
    time_tss::TrustedClock clock{ep, metrics};
    StackConfig cfg;
    cfg.ipv4 = 0x0a000001;
    NetStack stack{ep, clock, metrics, cfg};
    auto r = stack.init(ssv);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error() == SockErr::ProbeFailed);
}

TEST_CASE("gratuitous arp from init is observable on the fabric") {
    auto sc = two_stacks(1);
    // capture fabric traffic from the start: build the world with a tap via
    // a fresh scenario run, then assert over the frames
    std::vector<Bytes> frames;
    World w(sc);
    w.fabric().add_tap([&](VirtNs, ByteSpan f) { frames.emplace_back(f.begin(), f.end()); });
    // re-init is not possible; instead watch a fresh stack join dynamically:
    // the existing stack already announced during construction, so force a
    // second announce by sending to an unresolved address (ARP request).
    w.machine().set_context(platform::Context::enclave_ctx(0));
    auto fd = w.node(0).stack->socket(Proto::Udp).value();
    w.node(0).stack->sendto(fd, 0x0a0000aa, 5, Bytes{1});
    bool saw_arp = false;
    for (const auto& f : frames) {
        auto ev = wire::parse_ether(f);
        if (ev && ev->ethertype == wire::kEtherArp) saw_arp = true;
    }
    CHECK(saw_arp);
}

TEST_CASE("udp payload round-trips byte-exact between two enclave stacks") {
    World w(two_stacks());
    Driver d{w};
    auto& A = *w.node(0).stack;
    auto& B = *w.node(1).stack;

    w.machine().set_context(platform::Context::enclave_ctx(0));
    int srv = A.socket(Proto::Udp).value();
    REQUIRE(A.bind(srv, 7).ok());

    w.machine().set_context(platform::Context::enclave_ctx(1));
    int cli = B.socket(Proto::Udp).value();
    DetRng rng(21);
    Bytes payload = rng.bytes(300);
    REQUIRE(B.sendto(cli, w.node(0).spec.ip, 7, payload).ok());

    d.pump();
    w.machine().set_context(platform::Context::enclave_ctx(0));
    auto got = A.recvfrom(srv);
    REQUIRE(got.ok());
    CHECK(got.value().payload == payload);
    CHECK(got.value().src_ip == w.node(1).spec.ip);

    // echo it back
    REQUIRE(A.sendto(srv, got.value().src_ip, got.value().src_port, got.value().payload).ok());
    d.pump();
    w.machine().set_context(platform::Context::enclave_ctx(1));
    auto back = B.recvfrom(cli);
    REQUIRE(back.ok());
    CHECK(back.value().payload == payload);
}

TEST_CASE("udp datagrams above the mtu fragment and reassemble") {
    World w(two_stacks());
    Driver d{w};
    auto& A = *w.node(0).stack;
    auto& B = *w.node(1).stack;

    std::vector<Bytes> fabric_frames;
    w.fabric().add_tap([&](VirtNs, ByteSpan f) { fabric_frames.emplace_back(f.begin(), f.end()); });

    w.machine().set_context(platform::Context::enclave_ctx(0));
    int srv = A.socket(Proto::Udp).value();
    REQUIRE(A.bind(srv, 7).ok());

    w.machine().set_context(platform::Context::enclave_ctx(1));
    int cli = B.socket(Proto::Udp).value();
    DetRng rng(8);
    Bytes payload = rng.bytes(3000);
    REQUIRE(B.sendto(cli, w.node(0).spec.ip, 7, payload).ok());
    d.pump();

    w.machine().set_context(platform::Context::enclave_ctx(0));
    auto got = A.recvfrom(srv);
    REQUIRE(got.ok());
    CHECK(got.value().payload == payload);

    // every ipv4 fragment on the wire carried the destination's flow tag
    size_t fragments = 0;
    for (const auto& f : fabric_frames) {
        auto tag = wire::extract_flow_tag(f);
        auto ev = wire::parse_ether(f);
        if (!ev || ev->ethertype != wire::kEtherIpv4) continue;
        auto ip = wire::parse_ipv4(ev->payload);
        if (!ip || !(ip->hdr.more_fragments || ip->hdr.frag_offset_units)) continue;
        ++fragments;
        REQUIRE(tag.has_value());
        CHECK(*tag == A.flow_tag());
    }
    CHECK(fragments >= 3);  // 3000 + 8 bytes of udp over 1472-byte fragments
}

TEST_CASE("tcp three-way handshake, transfer and close traverse the state machine") {
    World w(two_stacks());
    Driver d{w};
    auto& A = *w.node(0).stack;  // server
    auto& B = *w.node(1).stack;  // client

    w.machine().set_context(platform::Context::enclave_ctx(0));
    int lst = A.socket(Proto::Tcp).value();
    REQUIRE(A.bind(lst, 9).ok());
    REQUIRE(A.listen(lst).ok());

    w.machine().set_context(platform::Context::enclave_ctx(1));
    int cli = B.socket(Proto::Tcp).value();
    REQUIRE(B.connect(cli, w.node(0).spec.ip, 9).ok());
    d.pump();
    REQUIRE(B.connect_status(cli).ok());

    w.machine().set_context(platform::Context::enclave_ctx(0));
    auto acc = A.accept(lst);
    REQUIRE(acc.ok());
    int srv = acc.value();
    CHECK(A.tcp_state(srv) == TcpState::Established);

    // client-side trace: CLOSED -> SYN_SENT -> ESTABLISHED
    auto btrace = B.tcp_state_trace(cli);
    REQUIRE(btrace.size() >= 3);
    CHECK(btrace[0] == TcpState::Closed);
    CHECK(btrace[1] == TcpState::SynSent);
    CHECK(btrace[2] == TcpState::Established);
    // server child: CLOSED -> SYN_RCVD -> ESTABLISHED
    auto strace = A.tcp_state_trace(srv);
    REQUIRE(strace.size() >= 3);
    CHECK(strace[1] == TcpState::SynRcvd);
    CHECK(strace[2] == TcpState::Established);

    // 64 KiB transfer, hash-equal end to end
    DetRng rng(31);
    Bytes data = rng.bytes(64 * 1024);
    w.machine().set_context(platform::Context::enclave_ctx(1));
    REQUIRE(B.send(cli, data).ok());
    Bytes received;
    for (int round = 0; round < 400 && received.size() < data.size(); ++round) {
        d.pump(1);
        w.machine().set_context(platform::Context::enclave_ctx(0));
        auto r = A.recv(srv);
        if (r.ok()) received.insert(received.end(), r.value().begin(), r.value().end());
    }
    REQUIRE(received.size() == data.size());
    CHECK(crypto::sha256(received) == crypto::sha256(data));

    // close from the client side; both ends run the teardown handshake
    w.machine().set_context(platform::Context::enclave_ctx(1));
    REQUIRE(B.close(cli).ok());
    for (int round = 0; round < 50; ++round) {
        d.pump(1);
        w.machine().set_context(platform::Context::enclave_ctx(0));
        auto r = A.recv(srv);
        if (!r.ok() && r.error() == SockErr::Closed) break;
    }
    w.machine().set_context(platform::Context::enclave_ctx(0));
    A.close(srv);
    d.pump(10);
    auto fin_trace = B.tcp_state_trace(cli);
    bool saw_fin_wait = false, saw_time_wait_or_closed = false;
    for (auto st : fin_trace) {
        if (st == TcpState::FinWait1 || st == TcpState::FinWait2) saw_fin_wait = true;
        if (st == TcpState::TimeWait || st == TcpState::Closed) saw_time_wait_or_closed = true;
    }
    CHECK(saw_fin_wait);
    CHECK(saw_time_wait_or_closed);
    auto srv_trace = A.tcp_state_trace(srv);
    bool saw_close_wait = false;
    for (auto st : srv_trace)
        if (st == TcpState::CloseWait) saw_close_wait = true;
    CHECK(saw_close_wait);
}

TEST_CASE("connect to a non-listening port is refused via rst") {
    World w(two_stacks());
    Driver d{w};
    auto& B = *w.node(1).stack;
    w.machine().set_context(platform::Context::enclave_ctx(1));
    int cli = B.socket(Proto::Tcp).value();
    REQUIRE(B.connect(cli, w.node(0).spec.ip, 4242).ok());
    d.pump();
    auto st = B.connect_status(cli);
    REQUIRE_FALSE(st.ok());
    CHECK(st.error() == SockErr::ConnRefused);
}

TEST_CASE("icmp echo: three probes, sequence numbers and payload echoed") {
    World w(two_stacks());
    auto& B = *w.node(1).stack;
    w.machine().set_context(platform::Context::enclave_ctx(1));
    DetRng rng(6);
    Bytes payload = rng.bytes(56);
    auto r = B.icmp_echo(w.node(0).spec.ip, payload, 3,
                         [&w] { w.step_other_stacks(1); });
    REQUIRE(r.ok());
    CHECK(r.value().timeouts == 0);
    REQUIRE(r.value().rtts.size() == 3);
    CHECK(r.value().reply_seqs == std::vector<uint16_t>{0, 1, 2});
}

TEST_CASE("icmp rtt scales with payload size per the cost table") {
    auto sc = two_stacks();
    Scenario fast = sc;
    World w(fast);
    w.machine().costs().poll_quantum = 100;  // tighten the wait quantization
    auto& B = *w.node(1).stack;
    w.machine().set_context(platform::Context::enclave_ctx(1));
    DetRng rng(6);

    auto probe = [&](size_t size) {
        Bytes payload = rng.bytes(size);
        auto r = B.icmp_echo(w.node(0).spec.ip, payload, 1, [&w] { w.step_other_stacks(1); });
        REQUIRE(r.ok());
        REQUIRE(r.value().rtts.size() == 1);
        return r.value().rtts[0];
    };
    probe(8);  // warm the arp caches so the measured probes share one path
    VirtNs small = probe(56);
    VirtNs large = probe(968);  // +912 payload bytes

    // sum-of-costs oracle: each extra byte crosses the wire twice and is
    // processed by a stack on egress and ingress in both directions
    const auto& c = w.machine().costs();
    VirtNs expected_delta = 2 * 912 * (c.wire_per_byte + 2 * c.stack_per_byte);
    VirtNs measured_delta = large - small;
    VirtNs slack = 8 * w.machine().costs().poll_quantum;
    CHECK(measured_delta + slack >= expected_delta);
    CHECK(measured_delta <= expected_delta + slack);
}

TEST_CASE("notify and poll modes deliver identical frame sequences") {
    auto run_mode = [](bool notify) {
        auto sc = two_stacks();
        sc.enclaves[0].notify_mode = notify;
        World w(sc);
        Driver d{w};
        auto& A = *w.node(0).stack;
        auto& B = *w.node(1).stack;
        w.machine().set_context(platform::Context::enclave_ctx(0));
        int srv = A.socket(Proto::Udp).value();
        A.bind(srv, 7);
        std::vector<Bytes> delivered;
        DetRng rng(77);
        for (int i = 0; i < 20; ++i) {
            w.machine().set_context(platform::Context::enclave_ctx(1));
            int cli = B.socket(Proto::Udp).value();
            Bytes p = rng.bytes(rng.uniform(4, 600));
            B.sendto(cli, w.node(0).spec.ip, 7, p);
            d.pump(4);
            w.machine().set_context(platform::Context::enclave_ctx(0));
            while (true) {
                auto g = A.recvfrom(srv);
                if (!g.ok()) break;
                delivered.push_back(g.value().payload);
            }
        }
        return delivered;
    };
    auto with_notify = run_mode(true);
    auto with_poll = run_mode(false);
    CHECK(with_notify.size() == 20);
    CHECK(with_notify == with_poll);
}

TEST_CASE("empty poll in poll mode bumps the poll counter") {
    auto sc = two_stacks(1);
    sc.enclaves[0].notify_mode = false;
    World w(sc);
    w.machine().set_context(platform::Context::enclave_ctx(0));
    w.node(0).stack->poll_events();  // drains the hairpinned announce
    uint64_t before = w.metrics().empty_polls;
    auto ev = w.node(0).stack->poll_events();
    CHECK(ev.frames == 0);
    CHECK(w.metrics().empty_polls == before + 1);
}

TEST_CASE("no bypass: every stack frame went through the sealed channel") {
    World w(two_stacks());
    Driver d{w};
    auto& A = *w.node(0).stack;
    auto& B = *w.node(1).stack;
    w.machine().set_context(platform::Context::enclave_ctx(0));
    int srv = A.socket(Proto::Udp).value();
    A.bind(srv, 7);
    w.machine().set_context(platform::Context::enclave_ctx(1));
    int cli = B.socket(Proto::Udp).value();
    for (int i = 0; i < 10; ++i) B.sendto(cli, w.node(0).spec.ip, 7, Bytes{1, 2, 3});
    d.pump();
    // every egress frame maps to a sealed NIC write request; every ingress
    // frame arrived as an opened event frame
    CHECK(B.egress_frames() == w.node(1).ep->nic_write_requests());
    CHECK(A.egress_frames() == w.node(0).ep->nic_write_requests());
    CHECK(A.ingress_frames() <= w.node(0).ep->event_frames_received());
    CHECK_FALSE(A.entropy_tainted());
    CHECK_FALSE(B.entropy_tainted());
}

TEST_CASE("a fuzzed sibling stack cannot perturb a victim transfer") {
    World w(two_stacks(3));
    Driver d{w};
    auto& A = *w.node(0).stack;
    auto& B = *w.node(1).stack;
    auto& C = *w.node(2).stack;  // the corrupted sibling

    w.machine().set_context(platform::Context::enclave_ctx(0));
    int srv = A.socket(Proto::Udp).value();
    A.bind(srv, 7);

    DetRng fuzz_rng(99);
    DetRng data_rng(55);
    size_t received = 0;
    for (int i = 0; i < 30; ++i) {
        w.machine().set_context(platform::Context::enclave_ctx(2));
        C.fuzz_corrupt(fuzz_rng);
        w.machine().set_context(platform::Context::enclave_ctx(1));
        int cli = B.socket(Proto::Udp).value();
        Bytes p = data_rng.bytes(128);
        B.sendto(cli, w.node(0).spec.ip, 7, p);
        d.pump(4);
        w.machine().set_context(platform::Context::enclave_ctx(0));
        auto g = A.recvfrom(srv);
        if (g.ok() && g.value().payload == p) ++received;
    }
    CHECK(received == 30);
}

TEST_CASE("batched tx mode coalesces smis for bursts") {
    auto sc = two_stacks();
    sc.enclaves[1].tx_batch = 4;
    World w(sc);
    auto& B = *w.node(1).stack;
    w.machine().set_context(platform::Context::enclave_ctx(1));
    int cli = B.socket(Proto::Udp).value();
    // warm the arp cache first so data frames batch cleanly
    B.sendto(cli, w.node(0).spec.ip, 7, Bytes{0});
    Driver d{w};
    d.pump();
    uint64_t smis_before = w.machine().smi_count();
    for (int i = 0; i < 4; ++i) B.sendto(cli, w.node(0).spec.ip, 7, Bytes{static_cast<uint8_t>(i)});
    // four writes, one smi
    CHECK(w.machine().smi_count() - smis_before == 1);
}
