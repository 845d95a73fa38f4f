#pragma once

#include "aurora/channel.hpp"
#include "aurora/devices.hpp"

namespace aurora::adversary {

using channel::FifoRegion;
using platform::Actor;
using platform::DomainRef;
using platform::Machine;

struct ObsRecord {
    VirtNs at;
    std::string kind;
    std::string detail;
};

// Append-only record of everything the adversary did and saw.
class ObservationTrace {
public:
    void append(VirtNs at, std::string kind, std::string detail) {
        records_.push_back({at, std::move(kind), std::move(detail)});
    }
    const std::vector<ObsRecord>& records() const { return records_; }
    size_t size() const { return records_.size(); }

private:
    std::vector<ObsRecord> records_;
};

struct ClockMutation {
    enum class Kind : uint8_t { RtcSetBack, Freeze, RateMultiply } kind = Kind::RtcSetBack;
    devices::ClockSource source = devices::ClockSource::Rtc;
    uint64_t seconds = 0;   // RtcSetBack
    uint32_t rate_num = 2;  // RateMultiply
    uint32_t rate_den = 1;
};

// The man-in-the-kernel. Every operation goes through interfaces the real
// adversary has: OS-privilege memory access to SharedRam/UntrustedRam, port
// writes (SMIs), device tampering and raw frames on the host network path.
// Attempts against SMRAM/EPC produce platform faults which are themselves
// recorded in the observation trace.
class Adversary {
public:
    Adversary(Machine& m, Metrics& metrics) : m_(m), metrics_(metrics) {}

    void bind_devices(devices::ClockBank* clocks, devices::Fabric* fabric) {
        clocks_ = clocks;
        fabric_ = fabric;
    }

    // --- observation ---
    Bytes snoop_shared(size_t offset, size_t len);
    std::string snoop_shared_digest();  // whole-domain read, digest recorded
    std::optional<platform::FaultKind> try_read(DomainRef d, size_t offset, size_t len);

    // --- FIFO-level frame attacks (SharedRam structural edits) ---
    size_t fifo_pending(const FifoRegion& r);
    Bytes capture_frame(const FifoRegion& r, uint32_t nth);
    void tamper_frame(const FifoRegion& r, uint32_t nth, size_t byte_offset);
    void inject_fifo_frame(const FifoRegion& r, ByteSpan frame);
    void replay_frame(const FifoRegion& r, const Bytes& captured) {
        inject_fifo_frame(r, captured);
    }
    void drop_frame(const FifoRegion& r, uint32_t nth);
    void reorder(const FifoRegion& r, uint32_t i, uint32_t j);

    // --- control-flow attacks ---
    void fake_smi(const FifoRegion& victim_to_ssv, ByteSpan forged);
    void delay(VirtNs duration, bool infinite = false);

    // --- device attacks ---
    void clock_tamper(const ClockMutation& mut);
    void inject_nic_frame(ByteSpan frame);

    ObservationTrace& trace() { return trace_; }

private:
    std::pair<uint32_t, uint32_t> indices(const FifoRegion& r);
    void set_producer(const FifoRegion& r, uint32_t p);
    Bytes read_slot(const FifoRegion& r, uint32_t abs_index);
    void write_slot(const FifoRegion& r, uint32_t abs_index, ByteSpan data);

    Machine& m_;
    Metrics& metrics_;
    devices::ClockBank* clocks_ = nullptr;
    devices::Fabric* fabric_ = nullptr;
    ObservationTrace trace_;
};

// --- declarative attack scripts ---

struct Trigger {
    enum class Kind : uint8_t { AtTime, OnWindow, AfterTimeSamples } kind = Kind::AtTime;
    VirtNs at = 0;
    channel::Window window = channel::Window::PostEnqueuePreSmi;
    uint32_t occurrence = 1;  // fire on the nth occurrence of the window
    uint32_t samples = 0;     // AfterTimeSamples
};

struct Action {
    enum class Kind : uint8_t {
        Snoop,
        TamperFrame,
        ReplayFrame,
        DropFrame,
        Reorder,
        FakeSmi,
        FakeSsvHandshake,
        FakeEnclaveHandshake,
        ClockTamper,
        InjectNicFrame,
        InjectFifoFrame,
        Delay,
    } kind = Kind::Snoop;
    // which fifo of the target enclave: 0 = to_ssv (requests), 1 = from_ssv
    uint8_t fifo = 1;
    uint32_t target_enclave = 0;
    uint32_t index = 0;
    uint32_t index2 = 0;
    ClockMutation clock;
    VirtNs duration = 0;
    bool infinite = false;
};

struct ExpectedOutcome {
    enum class Kind : uint8_t { DetectedAs, DegradedToDoS, NoEffect } kind = Kind::DetectedAs;
    // DetectedAs payload, e.g. "ReplayOrReorder", "AuthFail", "AuthFailSsv",
    // "AuthFailEnclave", "TimeViolation:rtc", "DroppedWithCounter"
    std::string detected;
};

struct AttackStep {
    Trigger trigger;
    Action action;
};

struct AttackScript {
    std::string name;
    std::vector<AttackStep> steps;
    ExpectedOutcome expected;
};

const char* action_kind_name(Action::Kind k);
const char* outcome_kind_name(ExpectedOutcome::Kind k);

std::string script_to_json(const AttackScript& s);
std::optional<AttackScript> script_from_json(const std::string& text);

// The twelve shipped scripts.
std::vector<AttackScript> builtin_scripts();
std::optional<AttackScript> find_builtin_script(const std::string& name);

}  // namespace aurora::adversary
