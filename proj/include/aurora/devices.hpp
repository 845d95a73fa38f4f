#pragma once

#include <functional>

#include "aurora/platform.hpp"

namespace aurora::devices {

using platform::Fault;
using platform::FaultKind;
using platform::Machine;

enum class ClockSource : uint8_t { Rtc, Hpet, Pit, Tsc, ApicTimer };
constexpr size_t kClockSourceCount = 5;
const char* clock_source_name(ClockSource s);

struct ClockConfig {
    // 2024-01-01T00:00:00Z
    uint64_t rtc_epoch_seconds = 1704067200;
    VirtNs rtc_uip_window = 500 * kUs;  // update-in-progress window before each rollover
    uint64_t hpet_period_fs = 100000000;  // 100 ns/tick -> 10 MHz
    uint64_t pit_hz = 1193182;
    uint32_t pit_reload = 65536;
    uint64_t tsc_hz = 2800000000ull;  // testbed-class CPU
    uint64_t apic_bus_hz = 100000000;
    uint32_t apic_divisor = 16;
    uint32_t apic_init = 0xffffffffu;
    bool present[kClockSourceCount] = {true, true, true, true, true};

    uint64_t hpet_hz() const { return 1000000000000000ull / hpet_period_fs; }
    uint64_t apic_tick_hz() const { return apic_bus_hz / apic_divisor; }
    uint64_t source_hz(ClockSource s) const;
};

struct RtcReading {
    uint64_t seconds;
    bool update_in_progress;
};

// Five simulated timer/clock sources. Absent tampering every counter is a
// pure function of virtual time; the adversary may freeze a source, scale
// its rate or set the RTC back at any instant (devices are hardware).
class ClockBank {
public:
    ClockBank(Machine& m, ClockConfig cfg = {});

    const ClockConfig& config() const { return cfg_; }
    bool present(ClockSource s) const { return cfg_.present[static_cast<size_t>(s)]; }

    // Register-level reads; callable only from SMM.
    Result<RtcReading, Fault> read_rtc();
    Result<uint64_t, Fault> read_counter(ClockSource s);
    // Remaining time until the in-progress RTC update completes (the cost a
    // driver pays spinning on the UIP bit). Zero when no update is pending.
    VirtNs rtc_uip_remaining() const;

    // Adversary tampering; unchecked, allowed at any time.
    void tamper_rtc_set_back(uint64_t seconds);
    void tamper_freeze(ClockSource s);
    void tamper_rate(ClockSource s, uint32_t num, uint32_t den);

private:
    struct SourceModel {
        VirtNs t0 = 0;
        unsigned __int128 ticks_at_t0 = 0;
        uint32_t rate_num = 1;
        uint32_t rate_den = 1;
        bool frozen = false;

        unsigned __int128 ticks_at(VirtNs vt, uint64_t hz) const;
        void rebase(VirtNs vt, uint64_t hz);
    };

    uint64_t rtc_ns_now() const;
    SourceModel& model(ClockSource s) { return models_[static_cast<size_t>(s)]; }
    const SourceModel& model(ClockSource s) const { return models_[static_cast<size_t>(s)]; }

    Machine& m_;
    ClockConfig cfg_;
    SourceModel models_[kClockSourceCount];
    int64_t rtc_offset_seconds_ = 0;
};

// --- NIC ---

constexpr size_t kMaxFrame = 1518;

enum class NicErrorKind : uint8_t { AccessViolation, RingFull, FrameTooLarge, BadSlot };

struct NicError {
    NicErrorKind kind;
};

enum class Own : uint8_t { Device, Host };

struct Descriptor {
    Own own = Own::Host;
    uint16_t len = 0;
    std::array<uint8_t, kMaxFrame> buf{};
};

struct DescriptorRing {
    std::vector<Descriptor> slots;
    size_t head = 0;  // device-internal next-slot index

    explicit DescriptorRing(size_t n, Own initial) : slots(n, Descriptor{initial, 0, {}}) {}
    size_t size() const { return slots.size(); }
    void advance() { head = (head + 1) % slots.size(); }
};

// Control registers visible to a driver. `ring_probe` is a latched scratch
// window the driver commands the device to fill; the authoritative ring
// position is device-internal so restoring a snapshot leaves the data path
// intact while the register file reads back bit-identical.
struct NicRegs {
    uint8_t irq_enable = 1;
    uint8_t promiscuous = 1;
    uint32_t irq_status = 0;  // bit0 = rx, bit1 = tx-complete; sticky event state
    uint32_t ring_probe = 0;

    auto operator<=>(const NicRegs&) const = default;
    // Comparison over configuration registers only: irq_status accrues
    // events (e.g. a concurrent rx) and is not part of the saved context.
    bool config_equal(const NicRegs& o) const {
        return irq_enable == o.irq_enable && promiscuous == o.promiscuous &&
               ring_probe == o.ring_probe;
    }
};

class Fabric;

struct NicConfig {
    uint8_t vector = 0x2b;
    uint64_t mmio_base = 0xfebc0000;
    size_t ring_len = 16;
    size_t mtu = 1500;
};

class Nic {
public:
    Nic(Machine& m, uint32_t id, NicConfig cfg = {});

    uint32_t id() const { return id_; }
    uint8_t vector() const { return cfg_.vector; }
    uint64_t mmio_base() const { return cfg_.mmio_base; }
    size_t mtu() const { return cfg_.mtu; }
    void attach(Fabric* f) { fabric_ = f; }
    void set_link_up(bool up) { link_up_ = up; }

    // Driver surface; every call below requires SMM.
    Result<NicRegs, NicError> snapshot_regs();
    Result<Unit, NicError> restore_regs(const NicRegs& snap);
    Result<Unit, NicError> write_reg_irq_enable(uint8_t v);
    Result<uint32_t, NicError> latch_tx_ring_counter();
    Result<Unit, NicError> host_tx(ByteSpan frame);
    Result<std::vector<std::pair<size_t, Bytes>>, NicError> rx_scan();
    Result<Unit, NicError> rx_consume(size_t slot);
    Result<Unit, NicError> ack_irq();
    Result<Unit, NicError> ack_tx();  // clear only the tx-complete bit

    // Hardware side: fabric delivery and adversary tampering, any time.
    void deliver_from_fabric(ByteSpan frame);
    void tamper_inject_rx(ByteSpan frame) { deliver_from_fabric(frame); }

    const DescriptorRing& tx_ring() const { return tx_; }
    const DescriptorRing& rx_ring() const { return rx_; }
    uint64_t rx_dropped() const { return rx_dropped_; }
    uint64_t tx_count() const { return tx_count_; }

private:
    bool check_smm() const { return m_.in_smm(); }
    void flush_pending_tx();

    Machine& m_;
    uint32_t id_;
    NicConfig cfg_;
    DescriptorRing tx_;
    DescriptorRing rx_;
    NicRegs regs_;
    Fabric* fabric_ = nullptr;
    bool link_up_ = true;
    uint64_t rx_dropped_ = 0;
    uint64_t tx_count_ = 0;
};

// A virtual L2 hub. Frames transmitted by one port are delivered verbatim to
// every attached port; with hairpin on (default) that includes the sender,
// so multiple enclave stacks behind one NIC can reach each other.
class Fabric {
public:
    explicit Fabric(Machine& m, bool hairpin = true) : m_(m), hairpin_(hairpin) {}

    void attach(Nic* nic) { ports_.push_back(nic); }
    void transmit(const Nic* from, ByteSpan frame);
    // Test/adversary injection from outside the host.
    void inject(ByteSpan frame);

    using Tap = std::function<void(VirtNs, ByteSpan)>;
    void add_tap(Tap t) { taps_.push_back(std::move(t)); }

    uint64_t frames_carried() const { return frames_carried_; }

private:
    void deliver(const Nic* from, ByteSpan frame);

    Machine& m_;
    bool hairpin_;
    std::vector<Nic*> ports_;
    std::vector<Tap> taps_;
    uint64_t frames_carried_ = 0;
};

}  // namespace aurora::devices
