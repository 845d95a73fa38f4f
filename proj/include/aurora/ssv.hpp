#pragma once

#include "aurora/channel.hpp"
#include "aurora/devices.hpp"

namespace aurora::ssv {

using channel::ChanErr;
using channel::DeviceId;
using channel::OpCode;
using channel::PlainFrame;
using channel::Status;
using platform::Machine;
using platform::PendingSmi;

// Sanity-checked dynamic heap inside SMRAM. Blocks never leave the arena and
// the live list must be empty again by the time the SSV executes RSM.
class SecureHeap {
public:
    enum class Err : uint8_t { OutOfMemory, BoundaryViolation, BadBlock };

    struct Block {
        uint32_t offset = 0;  // absolute offset into SMRAM
        uint32_t len = 0;
    };

    SecureHeap(Machine& m, uint32_t arena_base, uint32_t arena_size, Metrics& metrics)
        : m_(m), base_(arena_base), size_(arena_size), metrics_(metrics) {}

    Result<Block, Err> alloc(uint32_t n);
    void free(const Block& b);
    void reset();
    bool live_empty() const { return live_.empty(); }
    size_t live_count() const { return live_.size(); }
    uint32_t arena_base() const { return base_; }
    uint32_t arena_size() const { return size_; }

    // Boundary-checked driver accessors; a stray access is recorded and the
    // write suppressed.
    Result<Unit, Err> write(const Block& b, uint32_t off, ByteSpan data);
    Result<Bytes, Err> read(const Block& b, uint32_t off, uint32_t len);

private:
    Machine& m_;
    uint32_t base_;
    uint32_t size_;
    Metrics& metrics_;
    uint32_t bump_ = 0;
    std::vector<Block> live_;
};

// Raw multi-source clock reading assembled inside one SMM invocation.
struct ClockReadingWire {
    uint8_t present_mask = 0;
    uint64_t rtc_seconds = 0;
    uint8_t rtc_read_count = 1;
    uint8_t boundary_observed = 0;
    uint32_t boundary_offset_ns = 0;
    uint64_t hpet = 0;
    uint16_t pit = 0;
    uint64_t tsc = 0;
    uint32_t apic = 0;
    uint32_t offsets_ns[devices::kClockSourceCount] = {0, 0, 0, 0, 0};

    Bytes serialize() const;
    static std::optional<ClockReadingWire> parse(ByteSpan raw);
};

struct ClockProbeWire {
    uint8_t present_mask = 0;
    uint64_t hpet_period_fs = 0;
    uint64_t pit_hz = 0;
    uint32_t pit_reload = 0;
    uint64_t tsc_hz = 0;
    uint64_t apic_tick_hz = 0;
    uint32_t apic_init = 0;

    Bytes serialize() const;
    static std::optional<ClockProbeWire> parse(ByteSpan raw);
};

struct NicProbeWire {
    uint64_t mmio_base = 0;
    uint32_t ring_len = 0;
    uint32_t mtu = 0;
    uint8_t link_up = 0;

    Bytes serialize() const;
    static std::optional<NicProbeWire> parse(ByteSpan raw);
};

// Driver entry points per the three-call specification; nothing else is
// dispatchable.
struct DriverSpec {
    uint8_t device_id = 0;
    std::function<Result<Bytes, Status>()> probe;
    std::function<Result<Bytes, Status>(ByteSpan)> read;
    std::function<Result<Bytes, Status>(ByteSpan)> write;
};

struct FlowEntry {
    uint32_t session_id = 0;
    std::array<uint8_t, 4> tag{};
    bool tag_set = false;
    std::array<uint8_t, 6> mac{};
    uint32_t ipv4 = 0;
};

// Builds the per-enclave IPv4 options tag: type 0x88 (copy flag set),
// length 4, epid low 16 bits.
std::array<uint8_t, 4> flow_tag_for(const Epid& epid);

// The SMM Supervisor: SMI dispatch, driver registry, secure heap, flow
// multiplexing and the secure-session server side. Executes only while the
// machine is in SMM.
struct SsvConfig {
    uint32_t scratch_base = 0;
    uint32_t scratch_size = 4096;
    uint32_t heap_base = 4096;
    uint32_t heap_size = 64 * 1024;
    uint32_t key_table_base = 4096 + 64 * 1024;
    bool notify_mode = true;
};

class Ssv {
public:
    using Config = SsvConfig;

    Ssv(Machine& m, devices::ClockBank& clocks, devices::Nic* nic, Metrics& metrics,
        Bytes image, Config cfg = Config());

    // Wire into the platform: machine.set_smi_handler(...) -> dispatch_smi.
    void attach();

    const Bytes& image() const { return image_; }
    channel::SsvToken genuine_token() const;

    // Session lifecycle (out-of-band provisioning path).
    Result<Unit, ChanErr> install_session(uint32_t session_id, uint32_t enclave_id,
                                          const Epid& epid, const crypto::Key& key,
                                          channel::FifoRegion to_ssv,
                                          channel::FifoRegion from_ssv);
    Result<Unit, ChanErr> rekey_session(uint32_t old_session_id, uint32_t new_session_id,
                                        const crypto::Key& key);
    void remove_session(uint32_t session_id, channel::SharedAllocator* alloc);
    size_t session_count() const { return sessions_.size(); }
    bool flow_table_contains(const Epid& epid) const { return flows_.count(epid) > 0; }

    // Network-TSS flow registration; tags must be unique per live stack.
    enum class FlowErr : uint8_t { UnknownSession, TagCollision };
    Result<std::array<uint8_t, 4>, FlowErr> register_flow(uint32_t session_id,
                                                          const std::array<uint8_t, 6>& mac,
                                                          uint32_t ipv4);

    void dispatch_smi(PendingSmi first);

    struct Hygiene {
        bool heap_live_empty = true;
        bool scratch_zeroed = true;
        bool device_ctx_restored = true;
        uint64_t dispatches = 0;
        bool ok() const { return heap_live_empty && scratch_zeroed && device_ctx_restored; }
    };
    const Hygiene& hygiene() const { return hygiene_; }

    SecureHeap& heap() { return heap_; }
    devices::Nic* nic() { return nic_; }
    std::optional<Bytes> pop_os_rx();  // modeled OS-side delivery queue
    size_t os_rx_count() const { return os_rx_.size(); }
    uint64_t smis_handled() const { return hygiene_.dispatches; }

    using PostDispatchHook = std::function<void(const Hygiene&)>;
    void set_post_dispatch_hook(PostDispatchHook h) { post_hook_ = std::move(h); }

private:
    struct SessionState {
        channel::SessionEnd end;  // tx_dir = 1 (SSV -> enclave)
        uint32_t enclave_id = 0;
        channel::FifoView to_ssv;
        channel::FifoView from_ssv;
        channel::FifoRegion to_ssv_region, from_ssv_region;
        uint32_t key_slot = 0;
    };

    void handle_software_smi();
    void handle_device_smi(uint8_t vector);
    void service_session_fifo(SessionState& s);
    PlainFrame service_request(const PlainFrame& req);
    Result<Bytes, Status> clock_probe();
    Result<Bytes, Status> clock_read();
    Result<Bytes, Status> nic_probe();
    Result<Bytes, Status> nic_read(ByteSpan);
    Result<Bytes, Status> nic_write(ByteSpan frame);
    // Classifies host-owned rx frames: tagged flows are sealed into their
    // session FIFO, everything else goes to the OS path.
    size_t classify_rx();
    SessionState* session_for_frame(ByteSpan ether_frame);
    void stage_plaintext(ByteSpan plain);
    void zero_scratch();
    void post_dispatch();
    void write_key_slot(uint32_t slot, const crypto::Key& key);

    Machine& m_;
    devices::ClockBank& clocks_;
    devices::Nic* nic_;
    Metrics& metrics_;
    Bytes image_;
    Config cfg_;
    SecureHeap heap_;
    std::map<uint32_t, SessionState> sessions_;
    std::map<Epid, FlowEntry> flows_;
    std::map<uint8_t, DriverSpec> drivers_;
    std::deque<Bytes> os_rx_;
    Hygiene hygiene_;
    PostDispatchHook post_hook_;
    std::optional<platform::IrqTarget> saved_nic_target_;
    uint32_t next_key_slot_ = 0;
    bool in_dispatch_ = false;
};

}  // namespace aurora::ssv
