#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "aurora/common.hpp"

namespace aurora::platform {

enum class ActorKind : uint8_t { Os, Adversary, Ssv, Enclave, Device };

struct Actor {
    ActorKind kind;
    uint32_t id = 0;  // enclave index or device id

    static Actor os() { return {ActorKind::Os}; }
    static Actor adversary() { return {ActorKind::Adversary}; }
    static Actor ssv() { return {ActorKind::Ssv}; }
    static Actor enclave(uint32_t e) { return {ActorKind::Enclave, e}; }
    static Actor device(uint32_t d) { return {ActorKind::Device, d}; }

    std::string label() const;
    auto operator<=>(const Actor&) const = default;
};

enum class DomainKind : uint8_t { Smram, Epc, SharedRam, UntrustedRam };

struct DomainRef {
    DomainKind kind;
    uint32_t enclave = 0;  // meaningful for Epc only

    static DomainRef smram() { return {DomainKind::Smram}; }
    static DomainRef shared() { return {DomainKind::SharedRam}; }
    static DomainRef untrusted() { return {DomainKind::UntrustedRam}; }
    static DomainRef epc(uint32_t e) { return {DomainKind::Epc, e}; }

    std::string label() const;
    auto operator<=>(const DomainRef&) const = default;
};

enum class FaultKind : uint8_t {
    AccessViolation,
    OutOfBounds,
    Reentrancy,
    NotInSmm,
    UnknownVector,
};

struct Fault {
    FaultKind kind;
    std::string detail;
};

const char* fault_name(FaultKind k);

enum class AccessOp : uint8_t { Read, Write };

// Protected-mode execution context: the OS or one enclave.
struct Context {
    bool is_enclave = false;
    uint32_t enclave = 0;

    static Context os() { return {}; }
    static Context enclave_ctx(uint32_t e) { return {true, e}; }
    auto operator<=>(const Context&) const = default;
};

struct PendingSmi {
    enum class Kind : uint8_t { Software, Device } kind = Kind::Software;
    uint8_t vector = 0;

    static PendingSmi software() { return {Kind::Software, 0}; }
    static PendingSmi device(uint8_t v) { return {Kind::Device, v}; }
};

enum class IrqTargetKind : uint8_t { Ssv, Os, EnclaveNotify };

struct IrqTarget {
    IrqTargetKind kind = IrqTargetKind::Os;
    uint32_t enclave = 0;
};

// Virtual-time costs per modeled action, nanoseconds. The workflow entries
// default to the observed per-step magnitudes so breakdown reports are
// qualitatively comparable; all values are modeled, none asserted.
struct CostTable {
    VirtNs epc_encrypt = 2 * kUs;
    VirtNs copy_to_shared = 2 * kUs;
    VirtNs smm_switch = 13 * kUs;
    VirtNs copy_to_smram = 0;
    VirtNs smram_decrypt = 3 * kUs;
    VirtNs smram_encrypt = 3 * kUs;
    VirtNs copy_from_smram = 0;
    VirtNs rsm_return = 12 * kUs;
    VirtNs copy_to_epc = 3 * kUs;
    VirtNs epc_decrypt = 2 * kUs;

    VirtNs rtc_read = 14 * kUs;
    VirtNs hpet_read = 2500;
    VirtNs pit_read = 2500;
    VirtNs tsc_read = 2500;
    VirtNs apic_read = 2500;
    VirtNs clock_assemble = 20 * kUs;

    VirtNs nic_ctx_save_restore = 400 * kUs;
    VirtNs nic_tx_action = 100 * kUs;
    VirtNs nic_rx_scan = 200 * kUs;
    VirtNs wire_per_byte = 8;
    VirtNs wire_latency = 1 * kUs;
    VirtNs stack_per_packet = 5 * kUs;
    VirtNs stack_per_byte = 1;

    VirtNs poll_quantum = 10 * kUs;
    VirtNs response_timeout = 10 * kMs;
};

// Step labels of the request workflow; also the row labels of the per-step
// breakdown report. Step 6 is the device service and is labeled per device.
namespace step {
inline constexpr const char* kEpcEncrypt = "EPC encryption";
inline constexpr const char* kCopyToShared = "Copy to shared RAM";
inline constexpr const char* kSwitchToSmm = "Switch to SMM";
inline constexpr const char* kCopyToSmram = "Copy to SMRAM";
inline constexpr const char* kSmramDecrypt = "SMRAM decryption";
inline constexpr const char* kClockService = "Clock Service";
inline constexpr const char* kNicService = "NIC Service";
inline constexpr const char* kSmramEncrypt = "SMRAM encryption";
inline constexpr const char* kCopyToShared2 = "Copy to shared RAM";
inline constexpr const char* kReturnToSgx = "Return and enter SGX";
inline constexpr const char* kCopyToEpc = "Copy to EPC";
inline constexpr const char* kEpcDecrypt = "EPC decryption";
}  // namespace step

struct TraceEvent {
    VirtNs at;
    std::string label;
    VirtNs cost = 0;
};

struct AccessRecord {
    Actor actor;
    DomainRef domain;
    size_t offset;
    size_t len;
    AccessOp op;
    bool permitted;
};

struct MachineConfig {
    size_t smram_size = 256 * 1024;
    size_t shared_size = 1024 * 1024;  // 1 MiB contiguous shared region
    size_t untrusted_size = 64 * 1024;
    CostTable costs;
};

// The single logical machine: isolation domains with enforced access rules,
// the Protected/SMM mode machine with context save/restore, the interrupt
// redirection fabric and the global virtual clock. Single-threaded; all
// actors are cooperatively scheduled and every action funnels through here.
class Machine {
public:
    using Config = MachineConfig;

    explicit Machine(Config cfg = Config());

    void add_epc(uint32_t enclave_id, size_t size = 64 * 1024);
    bool has_epc(uint32_t enclave_id) const { return epcs_.count(enclave_id) > 0; }
    size_t domain_size(DomainRef d) const;

    // Access-checked memory operations. Faults are returned as values and
    // additionally appended to the event log; memory is left unchanged on a
    // forbidden or out-of-range access.
    Result<Bytes, Fault> read(Actor actor, DomainRef d, size_t offset, size_t len);
    Result<Unit, Fault> write(Actor actor, DomainRef d, size_t offset, ByteSpan data);

    // Trusted provisioning path for the modeled out-of-band channel
    // (key agreement, boot-time setup). Not reachable from attack scripts.
    void oob_write(DomainRef d, size_t offset, ByteSpan data);
    Bytes oob_read(DomainRef d, size_t offset, size_t len) const;
    // zero-copy instrumentation view (harness scans); empty span if absent
    ByteSpan domain_view(DomainRef d) const;

    // --- mode machine ---
    bool in_smm() const { return smm_; }
    Context context() const { return ctx_; }
    void set_context(Context c) { ctx_ = c; }
    std::array<uint8_t, 64>& cpu_context() { return cpu_context_; }

    Result<Unit, Fault> trigger_smi(PendingSmi source = PendingSmi::software());
    Result<Unit, Fault> rsm();
    std::optional<PendingSmi> take_pending();

    using SmiHandler = std::function<void(PendingSmi)>;
    void set_smi_handler(SmiHandler h) { smi_handler_ = std::move(h); }

    // --- interrupt redirection ---
    void set_redirection(uint8_t vector, IrqTarget target);
    std::optional<IrqTarget> redirection(uint8_t vector) const;
    Result<Unit, Fault> raise_interrupt(uint8_t vector);
    // Direct OS-queue delivery, used by the SSV to re-forward interrupts it
    // intercepted but does not own.
    void deliver_os_irq(uint8_t vector);
    std::optional<uint8_t> pop_os_irq();
    size_t os_irq_count() const { return os_irqs_.size(); }
    // EnclaveNotify event tokens (the UIO-relay analogue).
    void push_notify(uint32_t enclave);
    bool pop_notify(uint32_t enclave);
    size_t notify_count(uint32_t enclave) const;

    // --- virtual time ---
    VirtNs now() const { return vt_; }
    void advance(VirtNs ns);
    const CostTable& costs() const { return cfg_.costs; }
    CostTable& costs() { return cfg_.costs; }
    // advance + workflow trace entry in one step
    void charge_step(const char* label, VirtNs cost);

    using AdvanceHook = std::function<void(VirtNs now)>;
    void add_advance_hook(AdvanceHook h) { advance_hooks_.push_back(std::move(h)); }

    using WriteObserver = std::function<void(const AccessRecord&, ByteSpan data)>;
    void add_write_observer(WriteObserver o) { write_observers_.push_back(std::move(o)); }

    // --- SMI suppression (modeled delay-style DoS) ---
    // release_at == max() suppresses forever.
    void set_smi_suppression(VirtNs release_at);
    void clear_smi_suppression();
    uint64_t suppressed_smi_count() const { return suppressed_smis_; }

    // --- logs ---
    void trace_step(std::string label, VirtNs cost = 0);
    const std::vector<TraceEvent>& trace() const { return trace_; }
    void log_event(const std::string& line);
    const std::string& event_log() const { return event_log_; }
    uint64_t fault_count() const { return fault_count_; }
    uint64_t smi_count() const { return smi_count_; }

private:
    Bytes* storage(DomainRef d);
    const Bytes* storage(DomainRef d) const;
    std::optional<FaultKind> permission(Actor actor, DomainRef d) const;
    Result<Unit, Fault> fault(FaultKind k, std::string detail);

    Config cfg_;
    Bytes smram_;
    Bytes shared_;
    Bytes untrusted_;
    std::map<uint32_t, Bytes> epcs_;

    bool smm_ = false;
    Context ctx_ = Context::os();
    std::array<uint8_t, 64> cpu_context_{};
    struct SavedContext {
        Context ctx;
        std::array<uint8_t, 64> cpu;
    };
    std::optional<SavedContext> saved_;

    std::map<uint8_t, IrqTarget> redirection_;
    std::deque<uint8_t> os_irqs_;
    std::map<uint32_t, std::deque<uint8_t>> notify_;
    std::deque<PendingSmi> pending_;
    SmiHandler smi_handler_;

    VirtNs vt_ = 0;
    std::vector<AdvanceHook> advance_hooks_;
    std::vector<WriteObserver> write_observers_;
    bool in_advance_ = false;

    std::optional<VirtNs> suppress_until_;
    std::deque<PendingSmi> suppressed_queue_;
    uint64_t suppressed_smis_ = 0;

    std::vector<TraceEvent> trace_;
    std::string event_log_;
    uint64_t fault_count_ = 0;
    uint64_t smi_count_ = 0;
};

}  // namespace aurora::platform
