#include "aurora/devices.hpp"

namespace aurora::devices {

const char* clock_source_name(ClockSource s) {
    switch (s) {
        case ClockSource::Rtc: return "rtc";
        case ClockSource::Hpet: return "hpet";
        case ClockSource::Pit: return "pit";
        case ClockSource::Tsc: return "tsc";
        case ClockSource::ApicTimer: return "apic";
    }
    return "?";
}

uint64_t ClockConfig::source_hz(ClockSource s) const {
    switch (s) {
        case ClockSource::Rtc: return 1000000000ull;  // internal ns rate
        case ClockSource::Hpet: return hpet_hz();
        case ClockSource::Pit: return pit_hz;
        case ClockSource::Tsc: return tsc_hz;
        case ClockSource::ApicTimer: return apic_tick_hz();
    }
    return 1;
}

unsigned __int128 ClockBank::SourceModel::ticks_at(VirtNs vt, uint64_t hz) const {
    if (frozen || vt <= t0) return ticks_at_t0;
    unsigned __int128 d = vt - t0;
    return ticks_at_t0 + d * hz * rate_num / (static_cast<unsigned __int128>(rate_den) * 1000000000ull);
}

void ClockBank::SourceModel::rebase(VirtNs vt, uint64_t hz) {
    ticks_at_t0 = ticks_at(vt, hz);
    t0 = vt;
}

ClockBank::ClockBank(Machine& m, ClockConfig cfg) : m_(m), cfg_(cfg) {}

uint64_t ClockBank::rtc_ns_now() const {
    return static_cast<uint64_t>(model(ClockSource::Rtc).ticks_at(m_.now(), 1000000000ull));
}

Result<RtcReading, Fault> ClockBank::read_rtc() {
    if (!m_.in_smm()) return Fault{FaultKind::AccessViolation, "rtc read outside SMM"};
    uint64_t ns = rtc_ns_now();
    bool uip = false;
    if (!model(ClockSource::Rtc).frozen && cfg_.rtc_uip_window > 0) {
        uint64_t frac = ns % kSec;
        uip = frac >= kSec - cfg_.rtc_uip_window;
    }
    uint64_t secs = static_cast<uint64_t>(
        static_cast<int64_t>(cfg_.rtc_epoch_seconds) + rtc_offset_seconds_ +
        static_cast<int64_t>(ns / kSec));
    return RtcReading{secs, uip};
}

VirtNs ClockBank::rtc_uip_remaining() const {
    if (model(ClockSource::Rtc).frozen || cfg_.rtc_uip_window == 0) return 0;
    uint64_t frac = rtc_ns_now() % kSec;
    if (frac < kSec - cfg_.rtc_uip_window) return 0;
    // remaining virtual time until the rollover, corrected for a scaled rate
    uint64_t remaining_source_ns = kSec - frac;
    const auto& mdl = model(ClockSource::Rtc);
    return remaining_source_ns * mdl.rate_den / mdl.rate_num + 1;
}

Result<uint64_t, Fault> ClockBank::read_counter(ClockSource s) {
    if (!m_.in_smm()) return Fault{FaultKind::AccessViolation, "clock read outside SMM"};
    uint64_t hz = cfg_.source_hz(s);
    unsigned __int128 ticks = model(s).ticks_at(m_.now(), hz);
    switch (s) {
        case ClockSource::Rtc: {
            auto r = read_rtc();
            return r.ok() ? Result<uint64_t, Fault>(r.value().seconds)
                          : Result<uint64_t, Fault>(r.error());
        }
        case ClockSource::Hpet:
        case ClockSource::Tsc:
            return static_cast<uint64_t>(ticks);
        case ClockSource::Pit: {
            uint64_t reload = cfg_.pit_reload;
            uint64_t cnt = (reload - static_cast<uint64_t>(ticks % reload)) % reload;
            return cnt;
        }
        case ClockSource::ApicTimer: {
            uint64_t init = cfg_.apic_init;
            uint64_t cnt = (init - static_cast<uint64_t>(ticks % init)) % init;
            return cnt;
        }
    }
    return Fault{FaultKind::AccessViolation, "unknown source"};
}

void ClockBank::tamper_rtc_set_back(uint64_t seconds) {
    rtc_offset_seconds_ -= static_cast<int64_t>(seconds);
    m_.log_event("tamper rtc set back " + std::to_string(seconds) + "s");
}

void ClockBank::tamper_freeze(ClockSource s) {
    auto& mdl = model(s);
    mdl.rebase(m_.now(), cfg_.source_hz(s));
    mdl.frozen = true;
    m_.log_event(std::string("tamper freeze ") + clock_source_name(s));
}

void ClockBank::tamper_rate(ClockSource s, uint32_t num, uint32_t den) {
    auto& mdl = model(s);
    mdl.rebase(m_.now(), cfg_.source_hz(s));
    mdl.rate_num = num;
    mdl.rate_den = den == 0 ? 1 : den;
    mdl.frozen = false;
    m_.log_event(std::string("tamper rate ") + clock_source_name(s) + " x" +
                 std::to_string(num) + "/" + std::to_string(den));
}

// --- NIC ---

Nic::Nic(Machine& m, uint32_t id, NicConfig cfg)
    : m_(m), id_(id), cfg_(cfg), tx_(cfg.ring_len, Own::Host), rx_(cfg.ring_len, Own::Device) {}

Result<NicRegs, NicError> Nic::snapshot_regs() {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    return regs_;
}

Result<Unit, NicError> Nic::restore_regs(const NicRegs& snap) {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    bool was_disabled = regs_.irq_enable == 0;
    uint32_t accrued = regs_.irq_status;
    regs_ = snap;
    // irq_status is sticky event state (write-1-to-clear), not configuration;
    // events accrued while masked survive the restore and fire on unmask
    regs_.irq_status = accrued | snap.irq_status;
    if (was_disabled && regs_.irq_enable && regs_.irq_status)
        m_.raise_interrupt(cfg_.vector);
    return Unit{};
}

Result<Unit, NicError> Nic::write_reg_irq_enable(uint8_t v) {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    regs_.irq_enable = v;
    return Unit{};
}

Result<uint32_t, NicError> Nic::latch_tx_ring_counter() {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    regs_.ring_probe = static_cast<uint32_t>(tx_.head);
    return regs_.ring_probe;
}

Result<Unit, NicError> Nic::host_tx(ByteSpan frame) {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    if (frame.size() > kMaxFrame) return NicError{NicErrorKind::FrameTooLarge};
    Descriptor& slot = tx_.slots[tx_.head];
    if (slot.own != Own::Host) return NicError{NicErrorKind::RingFull};
    slot.len = static_cast<uint16_t>(frame.size());
    std::copy(frame.begin(), frame.end(), slot.buf.begin());
    slot.own = Own::Device;
    tx_.advance();
    flush_pending_tx();
    return Unit{};
}

void Nic::flush_pending_tx() {
    if (!link_up_ || !fabric_) return;
    for (size_t i = 0; i < tx_.size(); ++i) {
        Descriptor& slot = tx_.slots[i];
        if (slot.own != Own::Device) continue;
        Bytes frame(slot.buf.begin(), slot.buf.begin() + slot.len);
        slot.own = Own::Host;
        slot.len = 0;
        ++tx_count_;
        fabric_->transmit(this, frame);
        regs_.irq_status |= 0x2;
        if (regs_.irq_enable) m_.raise_interrupt(cfg_.vector);
    }
}

Result<std::vector<std::pair<size_t, Bytes>>, NicError> Nic::rx_scan() {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    std::vector<std::pair<size_t, Bytes>> out;
    for (size_t i = 0; i < rx_.size(); ++i) {
        const Descriptor& slot = rx_.slots[i];
        if (slot.own == Own::Host && slot.len > 0)
            out.emplace_back(i, Bytes(slot.buf.begin(), slot.buf.begin() + slot.len));
    }
    return out;
}

Result<Unit, NicError> Nic::rx_consume(size_t slot) {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    if (slot >= rx_.size() || rx_.slots[slot].own != Own::Host)
        return NicError{NicErrorKind::BadSlot};
    rx_.slots[slot].own = Own::Device;
    rx_.slots[slot].len = 0;
    rx_.slots[slot].buf.fill(0);
    return Unit{};
}

Result<Unit, NicError> Nic::ack_tx() {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    regs_.irq_status &= ~0x2u;
    return Unit{};
}

Result<Unit, NicError> Nic::ack_irq() {
    if (!check_smm()) return NicError{NicErrorKind::AccessViolation};
    regs_.irq_status = 0;
    return Unit{};
}

void Nic::deliver_from_fabric(ByteSpan frame) {
    if (frame.size() > kMaxFrame) return;
    for (size_t i = 0; i < rx_.size(); ++i) {
        size_t idx = (rx_.head + i) % rx_.size();
        Descriptor& slot = rx_.slots[idx];
        if (slot.own != Own::Device) continue;
        slot.len = static_cast<uint16_t>(frame.size());
        std::copy(frame.begin(), frame.end(), slot.buf.begin());
        slot.own = Own::Host;
        rx_.head = (idx + 1) % rx_.size();
        regs_.irq_status |= 0x1;
        if (regs_.irq_enable) m_.raise_interrupt(cfg_.vector);
        return;
    }
    ++rx_dropped_;
    m_.log_event("nic" + std::to_string(id_) + " rx ring full, frame dropped");
}

void Fabric::transmit(const Nic* from, ByteSpan frame) {
    m_.advance(m_.costs().wire_latency + frame.size() * m_.costs().wire_per_byte);
    deliver(from, frame);
}

void Fabric::inject(ByteSpan frame) {
    deliver(nullptr, frame);
}

void Fabric::deliver(const Nic* from, ByteSpan frame) {
    ++frames_carried_;
    for (auto& tap : taps_) tap(m_.now(), frame);
    for (Nic* nic : ports_) {
        if (nic == from && !hairpin_) continue;
        nic->deliver_from_fabric(frame);
    }
}

}  // namespace aurora::devices
