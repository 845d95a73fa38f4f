#include <doctest.h>

#include "aurora/devices.hpp"
#include "aurora/rng.hpp"

using namespace aurora;
using namespace aurora::devices;
using platform::Actor;
using platform::Machine;
using platform::MachineConfig;

namespace {

struct Rig {
    Machine m{MachineConfig{}};
    ClockBank clocks;
    Rig() : clocks(m, ClockConfig{}) {
        // keep mode transitions free so tick oracles stay exact
        m.costs().smm_switch = 0;
        m.costs().rsm_return = 0;
    }
};

struct SmmGuard {
    Machine& m;
    explicit SmmGuard(Machine& mm) : m(mm) { m.trigger_smi(); }
    ~SmmGuard() { m.rsm(); }
};

}  // namespace

TEST_CASE("clock reads require smm") {
    Rig rig;
    auto r = rig.clocks.read_counter(ClockSource::Hpet);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error().kind == platform::FaultKind::AccessViolation);
}

TEST_CASE("hpet counts virtual time at its period") {
    // oracle: 1 ms / 100 ns per tick = 10000 ticks
    Rig rig;
    rig.m.advance(1 * kMs);
    SmmGuard g(rig.m);
    auto r = rig.clocks.read_counter(ClockSource::Hpet);
    REQUIRE(r.ok());
    CHECK(r.value() == 10000);
}

TEST_CASE("rtc reads the calendar value at epoch") {
    Rig rig;
    SmmGuard g(rig.m);
    auto r = rig.clocks.read_rtc();
    REQUIRE(r.ok());
    CHECK(r.value().seconds == 1704067200);  // 2024-01-01T00:00:00Z
    CHECK_FALSE(r.value().update_in_progress);
}

TEST_CASE("rtc exposes the update-in-progress window before a rollover") {
    Rig rig;
    rig.m.advance(1 * kSec - 100 * kUs);  // inside the default 500 us window
    SmmGuard g(rig.m);
    auto r = rig.clocks.read_rtc();
    REQUIRE(r.ok());
    CHECK(r.value().update_in_progress);
    VirtNs wait = rig.clocks.rtc_uip_remaining();
    CHECK(wait > 0);
    rig.m.advance(wait);
    auto r2 = rig.clocks.read_rtc();
    REQUIRE(r2.ok());
    CHECK_FALSE(r2.value().update_in_progress);
    CHECK(r2.value().seconds == 1704067201);
}

TEST_CASE("pit and apic are down counters with documented wrap") {
    Rig rig;
    {
        SmmGuard g(rig.m);
        auto p0 = rig.clocks.read_counter(ClockSource::Pit).value();
        rig.m.advance(1 * kMs);
        auto p1 = rig.clocks.read_counter(ClockSource::Pit).value();
        // oracle: 1 ms at 1.193182 MHz = 1193 ticks elapsed
        uint32_t reload = 65536;
        uint64_t elapsed = (p0 + reload - p1) % reload;
        CHECK(elapsed == 1193);
    }
}

TEST_CASE("tsc advances at the configured frequency") {
    Rig rig;
    rig.m.advance(10 * kUs);
    SmmGuard g(rig.m);
    // oracle: 10 us at 2.8 GHz = 28000 ticks
    CHECK(rig.clocks.read_counter(ClockSource::Tsc).value() == 28000);
}

TEST_CASE("monotonic without tampering across random sampling") {
    Rig rig;
    DetRng rng(11);
    uint64_t prev_hpet = 0, prev_tsc = 0;
    uint64_t prev_rtc = 0;
    for (int i = 0; i < 200; ++i) {
        rig.m.advance(rng.uniform(10 * kUs, 40 * kMs));
        SmmGuard g(rig.m);
        auto hpet = rig.clocks.read_counter(ClockSource::Hpet).value();
        auto tsc = rig.clocks.read_counter(ClockSource::Tsc).value();
        auto rtc = rig.clocks.read_rtc().value().seconds;
        CHECK(hpet > prev_hpet);
        CHECK(tsc > prev_tsc);
        CHECK(rtc >= prev_rtc);
        prev_hpet = hpet;
        prev_tsc = tsc;
        prev_rtc = rtc;
    }
}

TEST_CASE("tamper: rtc set back, hpet freeze, tsc rate") {
    Rig rig;
    rig.m.advance(2 * kSec);
    uint64_t rtc0;
    {
        SmmGuard g(rig.m);
        rtc0 = rig.clocks.read_rtc().value().seconds;
    }
    VirtNs tamper_at = rig.m.now();
    rig.clocks.tamper_rtc_set_back(3600);
    rig.clocks.tamper_freeze(ClockSource::Hpet);
    rig.clocks.tamper_rate(ClockSource::Tsc, 2, 1);
    rig.m.advance(1 * kSec);
    {
        SmmGuard g(rig.m);
        auto rtc1 = rig.clocks.read_rtc().value().seconds;
        CHECK(rtc0 - rtc1 == 3600 - 1);  // one honest second elapsed on top

        // frozen: two reads separated by virtual time are equal
        auto h1 = rig.clocks.read_counter(ClockSource::Hpet).value();
        rig.m.advance(5 * kMs);
        auto h2 = rig.clocks.read_counter(ClockSource::Hpet).value();
        CHECK(h1 == h2);

        // doubled rate: elapsed ticks since the tamper instant count twice
        auto tsc = rig.clocks.read_counter(ClockSource::Tsc).value();
        uint64_t expected = ns_to_ticks(tamper_at, 2800000000ull) +
                            ns_to_ticks(2 * (rig.m.now() - tamper_at), 2800000000ull);
        CHECK(tsc == expected);
    }
}

// --- NIC ---

namespace {

struct NetRig {
    Machine m{MachineConfig{}};
    Fabric fabric;
    Nic nic_a{m, 0, NicConfig{0x2b, 0xfebc0000, 16, 1500}};
    Nic nic_b{m, 1, NicConfig{0x2c, 0xfebd0000, 16, 1500}};
    explicit NetRig(bool hairpin = true) : fabric(m, hairpin) {
        m.costs().smm_switch = 0;
        m.costs().rsm_return = 0;
        m.set_redirection(0x2b, {platform::IrqTargetKind::Os, 0});
        m.set_redirection(0x2c, {platform::IrqTargetKind::Os, 0});
        nic_a.attach(&fabric);
        nic_b.attach(&fabric);
        fabric.attach(&nic_a);
        fabric.attach(&nic_b);
    }
};

}  // namespace

TEST_CASE("tx lands verbatim in the peer rx ring with own flipped to host") {
    NetRig rig;
    DetRng rng(1);
    Bytes frame = rng.bytes(64);
    SmmGuard g(rig.m);
    REQUIRE(rig.nic_a.host_tx(frame).ok());
    auto scan = rig.nic_b.rx_scan();
    REQUIRE(scan.ok());
    REQUIRE(scan.value().size() == 1);
    CHECK(scan.value()[0].first == 0);
    CHECK(scan.value()[0].second == frame);
    CHECK(rig.nic_b.rx_ring().slots[0].own == Own::Host);
}

TEST_CASE("oversized frame is rejected") {
    NetRig rig;
    Bytes too_big(1519, 0);
    SmmGuard g(rig.m);
    auto r = rig.nic_a.host_tx(too_big);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error().kind == NicErrorKind::FrameTooLarge);
}

TEST_CASE("tx ring fills up when the link is down") {
    NetRig rig;
    rig.nic_a.set_link_up(false);
    Bytes frame(64, 0xab);
    SmmGuard g(rig.m);
    for (int i = 0; i < 16; ++i) REQUIRE(rig.nic_a.host_tx(frame).ok());
    auto r = rig.nic_a.host_tx(frame);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error().kind == NicErrorKind::RingFull);
}

TEST_CASE("consumed rx slots vanish from subsequent scans") {
    NetRig rig;
    rig.fabric.inject(Bytes(60, 0x11));
    rig.fabric.inject(Bytes(60, 0x22));
    SmmGuard g(rig.m);
    auto scan = rig.nic_a.rx_scan().value();
    REQUIRE(scan.size() == 2);
    REQUIRE(rig.nic_a.rx_consume(scan[0].first).ok());
    CHECK(rig.nic_a.rx_scan().value().size() == 1);
}

TEST_CASE("empty rx ring scans empty") {
    NetRig rig;
    SmmGuard g(rig.m);
    CHECK(rig.nic_a.rx_scan().value().empty());
}

TEST_CASE("injected frames appear in the scan") {
    NetRig rig;
    DetRng rng(2);
    Bytes crafted = rng.bytes(128);
    rig.nic_a.tamper_inject_rx(crafted);
    SmmGuard g(rig.m);
    auto scan = rig.nic_a.rx_scan().value();
    REQUIRE(scan.size() == 1);
    CHECK(scan[0].second == crafted);
}

TEST_CASE("registers are bit-identical after a guideline write path") {
    NetRig rig(false);  // no hairpin: no concurrent rx event on the sender
    SmmGuard g(rig.m);
    // no concurrent rx: the full register file must compare equal
    auto snap = rig.nic_b.snapshot_regs().value();
    rig.nic_b.write_reg_irq_enable(0);
    rig.nic_b.latch_tx_ring_counter();
    REQUIRE(rig.nic_b.host_tx(Bytes(60, 1)).ok());
    rig.nic_b.ack_tx();
    rig.nic_b.restore_regs(snap);
    auto post = rig.nic_b.snapshot_regs().value();
    CHECK(post == snap);
}

TEST_CASE("frame bytes survive the fabric checksummed over many random frames") {
    NetRig rig;
    DetRng rng(33);
    SmmGuard g(rig.m);
    for (int i = 0; i < 2000; ++i) {
        size_t len = rng.uniform(60, 1518);
        Bytes frame = rng.bytes(len);
        REQUIRE(rig.nic_a.host_tx(frame).ok());
        auto scan = rig.nic_b.rx_scan().value();
        REQUIRE(scan.size() == 1);
        CHECK(scan[0].second == frame);
        rig.nic_b.rx_consume(scan[0].first);
        // hairpin copy arrives at the sender as well; drain it
        auto own = rig.nic_a.rx_scan().value();
        for (auto& [slot, f] : own) rig.nic_a.rx_consume(slot);
    }
}

TEST_CASE("wire costs advance virtual time") {
    NetRig rig;
    VirtNs t0 = rig.m.now();
    SmmGuard g(rig.m);
    rig.nic_a.host_tx(Bytes(1000, 7));
    // wire_latency (1 us) + 1000 bytes * 8 ns
    CHECK(rig.m.now() - t0 >= 1 * kUs + 8000);
}
