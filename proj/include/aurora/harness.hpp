#pragma once

#include <memory>
#include <set>

#include "aurora/adversary.hpp"
#include "aurora/net_tss.hpp"
#include "aurora/time_tss.hpp"

namespace aurora::harness {

struct WorkloadConfig {
    enum class Kind : uint8_t {
        Idle,
        NetIdle,   // drives its stack, runs no application logic
        TimePoll,
        BatchedWrites,
        UdpEchoServer,
        UdpEchoClient,
        TcpServer,
        TcpClient,
        IcmpPing,
        FloodSink,
    } kind = Kind::Idle;
    uint32_t count = 100;
    VirtNs min_interval = 500 * kUs;
    VirtNs max_interval = 2 * kMs;
    uint16_t port = 7;
    uint32_t peer_ip = 0;
    uint32_t total_bytes = 1 << 20;
    uint32_t chunk = 32 * 1024;
    uint32_t batch = 8;
    uint32_t min_size = 8;
    uint32_t max_size = 1200;
    uint32_t icmp_payload = 56;
};

struct EnclaveSpec {
    uint32_t id = 0;
    uint64_t epid = 1;
    uint32_t ip = 0x0a000001;  // 10.0.0.1
    bool networked = false;
    bool notify_mode = true;
    uint32_t tx_batch = 0;  // 0 = immediate SMM calls
    WorkloadConfig workload;
};

struct FloodSpec {
    uint32_t count = 0;
    VirtNs interval = 50 * kUs;
    uint16_t port = 9999;
};

struct Scenario {
    std::string name = "scenario";
    uint64_t seed = 42;
    VirtNs duration = 5 * kSec;
    platform::Machine::Config platform_cfg;
    devices::ClockConfig clock_cfg;
    devices::NicConfig nic_cfg;
    bool nic_present = true;
    uint32_t fifo_capacity = 32;
    bool key_scan = true;
    std::vector<EnclaveSpec> enclaves;
    std::vector<adversary::AttackScript> attacks;
    FloodSpec flood;
    bool export_time_history = false;

    std::string to_json() const;
    static Result<Scenario, std::string> from_json(const std::string& text);
    static std::optional<Scenario> builtin(const std::string& name);
    static std::vector<std::string> builtin_names();
};

struct BreakdownRow {
    std::string label;
    uint64_t total_ns = 0;
    uint64_t count = 0;
    uint64_t mean_ns() const { return count ? total_ns / count : 0; }
};

struct AttackVerdictRow {
    std::string script;
    std::string expected;
    std::string observed;
    bool pass = false;
};

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

struct Report {
    std::string scenario;
    uint64_t seed = 0;
    std::map<std::string, uint64_t> counters;
    std::vector<BreakdownRow> breakdown;
    std::vector<AttackVerdictRow> verdicts;
    std::vector<std::vector<std::string>> workflow_traces;
    std::vector<Series> series;
    std::vector<std::string> observations;
    bool expectations_hold = true;
    bool conservation_holds = true;
    uint64_t hygiene_violations = 0;
    uint64_t audit_violations = 0;
    std::string event_log_digest;
    std::string event_log;  // not part of the JSON emission
    std::string time_history;

    std::string to_json() const;
    static std::optional<Report> from_json(const std::string& text);
    std::string to_table() const;
    bool all_verdicts_pass() const;
};

// One enclave's runtime: channel endpoint, trusted clock, optional stack,
// plus the workload state machine the scheduler drives.
struct EnclaveNode {
    EnclaveSpec spec;
    channel::EnclaveCredential cred;
    std::unique_ptr<channel::EnclaveEndpoint> ep;
    std::unique_ptr<time_tss::TrustedClock> clock;
    std::unique_ptr<net_tss::NetStack> stack;
    DetRng rng{0};

    bool done = false;
    VirtNs next_at = 0;
    uint32_t iter = 0;
    int fd = -1;
    int child_fd = -1;
    int phase = 0;
    uint32_t inflight_size = 0;
    Bytes tx_accum, rx_accum;
    Bytes await_payload;
    uint64_t echoes_ok = 0;
    uint64_t corruptions = 0;
    uint64_t flood_received = 0;
    uint64_t flood_misdelivered = 0;
    VirtNs probe_sent_at = 0;
    std::vector<VirtNs> icmp_rtts;
    std::vector<std::string> observations;
    struct VerdictFailure {
        uint64_t sample_index;
        time_tss::TimeVerdict verdict;
    };
    std::vector<VerdictFailure> verdict_failures;
};

// Fully wired simulation instance. Construction establishes every session;
// run() executes the cooperative schedule and the attack scripts.
class World {
public:
    explicit World(Scenario sc);

    void run();
    Report report();

    platform::Machine& machine() { return machine_; }
    devices::ClockBank& clocks() { return clocks_; }
    devices::Fabric& fabric() { return fabric_; }
    devices::Nic* nic() { return nic_.get(); }
    ssv::Ssv& ssv() { return *ssv_; }
    channel::CertificateAuthority& ca() { return ca_; }
    channel::SharedAllocator& alloc() { return alloc_; }
    adversary::Adversary& adversary_actor() { return adv_; }
    Metrics& metrics() { return metrics_; }
    EnclaveNode& node(size_t i) { return *nodes_[i]; }
    size_t node_count() const { return nodes_.size(); }
    const Scenario& scenario() const { return sc_; }
    uint64_t hygiene_violations() const { return hygiene_violations_; }
    uint64_t audit_violations() const { return audit_violations_; }
    const std::vector<std::string>& audit_log() const { return audit_log_; }
    const std::set<std::string>& slot_digests() const { return slot_digests_; }
    uint64_t slot_writes() const { return slot_writes_; }
    bool key_scan_clean() const { return key_scan_clean_; }

    // single cooperative step of every other node's stack (used as the
    // yield callback inside blocking helpers)
    void step_other_stacks(uint32_t self_id);
    void run_key_scan();

    static std::vector<std::vector<std::string>> slice_workflow_traces(
        const std::vector<platform::TraceEvent>& trace);
    static std::vector<BreakdownRow> positional_breakdown(
        const std::vector<platform::TraceEvent>& trace);

private:
    struct PendingStep {
        size_t script;
        adversary::AttackStep step;
        bool fired = false;
        uint32_t window_seen = 0;
        uint64_t samples_at_fire = 0;
    };

    void install_audit_hooks();
    void install_attacks();
    void setup_enclaves();
    void step_node(EnclaveNode& n);
    void fire_window(uint32_t enclave_id, channel::Window w);
    void check_time_triggers(VirtNs now);
    void check_sample_triggers();
    void execute_action(PendingStep& ps);
    std::string observed_outcome(const adversary::AttackScript& script,
                                 const Metrics& before) const;
    void evaluate_attacks(Report& r);

    // workload steps
    void wl_time_poll(EnclaveNode& n);
    void wl_batched(EnclaveNode& n);
    void wl_udp_server(EnclaveNode& n);
    void wl_udp_client(EnclaveNode& n);
    void wl_tcp_server(EnclaveNode& n);
    void wl_tcp_client(EnclaveNode& n);
    void wl_icmp_ping(EnclaveNode& n);
    void wl_flood_sink(EnclaveNode& n);

    Scenario sc_;
    Metrics metrics_;
    platform::Machine machine_;
    devices::ClockBank clocks_;
    devices::Fabric fabric_;
    std::unique_ptr<devices::Nic> nic_;
    std::unique_ptr<ssv::Ssv> ssv_;
    channel::CertificateAuthority ca_;
    channel::SharedAllocator alloc_;
    adversary::Adversary adv_;
    std::vector<std::unique_ptr<EnclaveNode>> nodes_;
    std::vector<PendingStep> pending_steps_;
    std::vector<std::string> world_observations_;
    Metrics metrics_before_attacks_;

    // flood injector state
    uint32_t flood_sent_ = 0;
    VirtNs flood_next_ = 0;

    // audit state
    uint64_t hygiene_violations_ = 0;
    uint64_t audit_violations_ = 0;
    std::vector<std::string> audit_log_;
    std::set<std::string> slot_digests_;
    std::set<std::string> staged_plaintext_digests_;
    uint64_t slot_writes_ = 0;
    bool key_scan_clean_ = true;
};

Report run_scenario(const Scenario& sc);
Report bench_time(uint32_t samples, VirtNs interval, uint64_t seed);
Report bench_net(const std::vector<uint32_t>& payload_sizes, uint32_t count, uint64_t seed);
Report bench_overhead(const std::vector<VirtNs>& intervals, const std::vector<VirtNs>& durations);

}  // namespace aurora::harness
