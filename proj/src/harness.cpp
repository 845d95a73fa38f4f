#include "aurora/harness.hpp"

#include "aurora/aead.hpp"
#include "aurora/wire.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>

namespace aurora::harness {

using nlohmann::json;
using channel::ChanErr;
using channel::DeviceId;
using channel::OpCode;
using channel::Window;
using wire::MacAddr;

namespace {

const char* workload_kind_name(WorkloadConfig::Kind k) {
    switch (k) {
        case WorkloadConfig::Kind::Idle: return "idle";
        case WorkloadConfig::Kind::NetIdle: return "net_idle";
        case WorkloadConfig::Kind::TimePoll: return "time_poll";
        case WorkloadConfig::Kind::BatchedWrites: return "batched_writes";
        case WorkloadConfig::Kind::UdpEchoServer: return "udp_echo_server";
        case WorkloadConfig::Kind::UdpEchoClient: return "udp_echo_client";
        case WorkloadConfig::Kind::TcpServer: return "tcp_server";
        case WorkloadConfig::Kind::TcpClient: return "tcp_client";
        case WorkloadConfig::Kind::IcmpPing: return "icmp_ping";
        case WorkloadConfig::Kind::FloodSink: return "flood_sink";
    }
    return "?";
}

WorkloadConfig::Kind workload_kind_from(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(WorkloadConfig::Kind::FloodSink); ++i)
        if (s == workload_kind_name(static_cast<WorkloadConfig::Kind>(i)))
            return static_cast<WorkloadConfig::Kind>(i);
    return WorkloadConfig::Kind::Idle;
}

bool is_background(WorkloadConfig::Kind k) {
    switch (k) {
        case WorkloadConfig::Kind::Idle:
        case WorkloadConfig::Kind::NetIdle:
        case WorkloadConfig::Kind::UdpEchoServer:
        case WorkloadConfig::Kind::TcpServer:
        case WorkloadConfig::Kind::FloodSink:
            return true;
        default:
            return false;
    }
}

MacAddr mac_for(uint32_t enclave_id) {
    MacAddr m;
    m.b = {0x02, 0x00, 0x00, 0x00, 0x00, static_cast<uint8_t>(enclave_id)};
    return m;
}

// 20-byte IPv4 header without the options area, for non-Aurora traffic.
Bytes build_plain_ipv4(uint8_t protocol, uint32_t src, uint32_t dst, ByteSpan payload) {
    Bytes out(20 + payload.size());
    out[0] = 0x45;
    wire::put_be16(out.data() + 2, static_cast<uint16_t>(out.size()));
    out[8] = 64;
    out[9] = protocol;
    wire::put_be32(out.data() + 12, src);
    wire::put_be32(out.data() + 16, dst);
    uint16_t csum = wire::checksum16(ByteSpan(out.data(), 20));
    wire::put_be16(out.data() + 10, csum);
    std::copy(payload.begin(), payload.end(), out.begin() + 20);
    return out;
}

Bytes ssv_image() {
    const char* text = "aurora ssv image r1";
    return Bytes(text, text + 19);
}

std::array<uint8_t, 32> credential_measurement(uint64_t epid) {
    Bytes seed(8);
    put_u64(seed.data(), epid);
    seed.push_back('c');
    return crypto::sha256(seed);
}

}  // namespace

// --- scenario json ---

std::string Scenario::to_json() const {
    json j;
    j["name"] = name;
    j["seed"] = seed;
    j["duration_ms"] = duration / kMs;
    j["fifo_capacity"] = fifo_capacity;
    j["nic"] = nic_present;
    j["key_scan"] = key_scan;
    j["platform"] = {{"smram_kib", platform_cfg.smram_size / 1024},
                     {"shared_kib", platform_cfg.shared_size / 1024},
                     {"untrusted_kib", platform_cfg.untrusted_size / 1024}};
    j["devices"] = {{"rtc_epoch", clock_cfg.rtc_epoch_seconds},
                    {"uip_window_us", clock_cfg.rtc_uip_window / kUs},
                    {"hpet_period_fs", clock_cfg.hpet_period_fs},
                    {"tsc_hz", clock_cfg.tsc_hz},
                    {"ring_len", nic_cfg.ring_len},
                    {"mtu", nic_cfg.mtu}};
    json encl = json::array();
    for (const auto& e : enclaves) {
        json w;
        w["kind"] = workload_kind_name(e.workload.kind);
        w["count"] = e.workload.count;
        w["min_interval_us"] = e.workload.min_interval / kUs;
        w["max_interval_us"] = e.workload.max_interval / kUs;
        w["port"] = e.workload.port;
        w["peer_ip"] = e.workload.peer_ip;
        w["total_bytes"] = e.workload.total_bytes;
        w["batch"] = e.workload.batch;
        w["min_size"] = e.workload.min_size;
        w["max_size"] = e.workload.max_size;
        w["icmp_payload"] = e.workload.icmp_payload;
        encl.push_back({{"id", e.id},
                        {"epid", e.epid},
                        {"ip", e.ip},
                        {"networked", e.networked},
                        {"notify_mode", e.notify_mode},
                        {"tx_batch", e.tx_batch},
                        {"workload", w}});
    }
    j["enclaves"] = encl;
    json atk = json::array();
    for (const auto& a : attacks) atk.push_back(json::parse(adversary::script_to_json(a)));
    j["attacks"] = atk;
    if (flood.count) {
        j["flood"] = {{"count", flood.count},
                      {"interval_us", flood.interval / kUs},
                      {"port", flood.port}};
    }
    return j.dump(2);
}

Result<Scenario, std::string> Scenario::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) return std::string("invalid JSON");
    Scenario sc;
    sc.name = j.value("name", "scenario");
    sc.seed = j.value("seed", 42ull);
    sc.duration = j.value("duration_ms", 5000ull) * kMs;
    sc.fifo_capacity = j.value("fifo_capacity", 32u);
    sc.nic_present = j.value("nic", true);
    sc.key_scan = j.value("key_scan", true);
    if (j.contains("platform")) {
        auto& p = j["platform"];
        sc.platform_cfg.smram_size = p.value("smram_kib", 256ull) * 1024;
        sc.platform_cfg.shared_size = p.value("shared_kib", 1024ull) * 1024;
        sc.platform_cfg.untrusted_size = p.value("untrusted_kib", 64ull) * 1024;
    }
    if (j.contains("devices")) {
        auto& d = j["devices"];
        sc.clock_cfg.rtc_epoch_seconds = d.value("rtc_epoch", sc.clock_cfg.rtc_epoch_seconds);
        sc.clock_cfg.rtc_uip_window = d.value("uip_window_us", 500ull) * kUs;
        sc.clock_cfg.hpet_period_fs = d.value("hpet_period_fs", sc.clock_cfg.hpet_period_fs);
        sc.clock_cfg.tsc_hz = d.value("tsc_hz", sc.clock_cfg.tsc_hz);
        sc.nic_cfg.ring_len = d.value("ring_len", sc.nic_cfg.ring_len);
        sc.nic_cfg.mtu = d.value("mtu", sc.nic_cfg.mtu);
    }
    for (const auto& e : j.value("enclaves", json::array())) {
        EnclaveSpec spec;
        spec.id = e.value("id", 0u);
        spec.epid = e.value("epid", static_cast<uint64_t>(spec.id + 1));
        spec.ip = e.value("ip", 0x0a000001u + spec.id);
        spec.networked = e.value("networked", false);
        spec.notify_mode = e.value("notify_mode", true);
        spec.tx_batch = e.value("tx_batch", 0u);
        auto w = e.value("workload", json::object());
        spec.workload.kind = workload_kind_from(w.value("kind", "idle"));
        spec.workload.count = w.value("count", 100u);
        spec.workload.min_interval = w.value("min_interval_us", 500ull) * kUs;
        spec.workload.max_interval = w.value("max_interval_us", 2000ull) * kUs;
        spec.workload.port = w.value("port", static_cast<uint16_t>(7));
        spec.workload.peer_ip = w.value("peer_ip", 0u);
        spec.workload.total_bytes = w.value("total_bytes", 1u << 20);
        spec.workload.batch = w.value("batch", 8u);
        spec.workload.min_size = w.value("min_size", 8u);
        spec.workload.max_size = w.value("max_size", 1200u);
        spec.workload.icmp_payload = w.value("icmp_payload", 56u);
        sc.enclaves.push_back(spec);
    }
    for (const auto& a : j.value("attacks", json::array())) {
        auto parsed = adversary::script_from_json(a.dump());
        if (parsed) sc.attacks.push_back(*parsed);
    }
    if (j.contains("flood")) {
        sc.flood.count = j["flood"].value("count", 0u);
        sc.flood.interval = j["flood"].value("interval_us", 50ull) * kUs;
        sc.flood.port = j["flood"].value("port", static_cast<uint16_t>(9999));
    }
    return sc;
}

// --- builtins ---

static Scenario base_time_scenario(const std::string& name, uint32_t count, VirtNs min_i,
                                   VirtNs max_i) {
    Scenario sc;
    sc.name = name;
    sc.duration = 30 * kSec;
    EnclaveSpec e;
    e.id = 0;
    e.epid = 0x1001;
    e.workload.kind = WorkloadConfig::Kind::TimePoll;
    e.workload.count = count;
    e.workload.min_interval = min_i;
    e.workload.max_interval = max_i;
    sc.enclaves.push_back(e);
    return sc;
}

static Scenario two_stack_scenario(const std::string& name) {
    Scenario sc;
    sc.name = name;
    sc.duration = 120 * kSec;
    sc.key_scan = false;
    EnclaveSpec a;
    a.id = 0;
    a.epid = 0x2001;
    a.ip = 0x0a000001;
    a.networked = true;
    EnclaveSpec b;
    b.id = 1;
    b.epid = 0x2002;
    b.ip = 0x0a000002;
    b.networked = true;
    sc.enclaves = {a, b};
    return sc;
}

std::optional<Scenario> Scenario::builtin(const std::string& name) {
    if (name == "honest_time") {
        Scenario sc = base_time_scenario(name, 200, 200 * kUs, 2 * kMs);
        return sc;
    }
    if (name == "workflow") {
        Scenario sc = base_time_scenario(name, 20, 500 * kUs, 500 * kUs);
        return sc;
    }
    if (name == "batched") {
        Scenario sc;
        sc.name = name;
        sc.duration = 10 * kSec;
        EnclaveSpec e;
        e.id = 0;
        e.epid = 0x3001;
        e.workload.kind = WorkloadConfig::Kind::BatchedWrites;
        e.workload.count = 8;
        e.workload.batch = 8;
        e.workload.min_interval = 100 * kUs;
        sc.enclaves.push_back(e);
        return sc;
    }
    if (name == "udp_echo") {
        Scenario sc = two_stack_scenario(name);
        sc.enclaves[0].workload.kind = WorkloadConfig::Kind::UdpEchoServer;
        sc.enclaves[0].workload.port = 7;
        sc.enclaves[0].workload.min_interval = 100 * kUs;
        sc.enclaves[1].workload.kind = WorkloadConfig::Kind::UdpEchoClient;
        sc.enclaves[1].workload.count = 100;
        sc.enclaves[1].workload.port = 7;
        sc.enclaves[1].workload.peer_ip = sc.enclaves[0].ip;
        sc.enclaves[1].workload.min_interval = 100 * kUs;
        return sc;
    }
    if (name == "tcp_transfer") {
        Scenario sc = two_stack_scenario(name);
        sc.enclaves[0].workload.kind = WorkloadConfig::Kind::TcpServer;
        sc.enclaves[0].workload.port = 9;
        sc.enclaves[0].workload.min_interval = 100 * kUs;
        sc.enclaves[1].workload.kind = WorkloadConfig::Kind::TcpClient;
        sc.enclaves[1].workload.port = 9;
        sc.enclaves[1].workload.peer_ip = sc.enclaves[0].ip;
        sc.enclaves[1].workload.total_bytes = 1 << 20;
        sc.enclaves[1].workload.min_interval = 100 * kUs;
        return sc;
    }
    if (name == "icmp_ping") {
        Scenario sc = two_stack_scenario(name);
        sc.enclaves[0].workload.kind = WorkloadConfig::Kind::NetIdle;
        sc.enclaves[0].workload.min_interval = 50 * kUs;
        sc.enclaves[1].workload.kind = WorkloadConfig::Kind::IcmpPing;
        sc.enclaves[1].workload.count = 3;
        sc.enclaves[1].workload.peer_ip = sc.enclaves[0].ip;
        sc.enclaves[1].workload.icmp_payload = 56;
        return sc;
    }
    if (name == "multiplex") {
        Scenario sc = two_stack_scenario(name);
        sc.enclaves[0].workload.kind = WorkloadConfig::Kind::FloodSink;
        sc.enclaves[0].workload.port = 9999;
        sc.enclaves[0].workload.min_interval = 50 * kUs;
        sc.enclaves[1].workload.kind = WorkloadConfig::Kind::FloodSink;
        sc.enclaves[1].workload.port = 9999;
        sc.enclaves[1].workload.min_interval = 50 * kUs;
        sc.flood.count = 1000;
        sc.flood.interval = 30 * kUs;
        return sc;
    }
    if (name.rfind("attack_", 0) == 0) {
        std::string script_name = name.substr(7);
        auto script = adversary::find_builtin_script(script_name);
        if (!script) return std::nullopt;
        Scenario sc;
        if (script_name == "reorder") {
            sc.name = name;
            sc.duration = 10 * kSec;
            EnclaveSpec e;
            e.id = 0;
            e.epid = 0x4001;
            e.workload.kind = WorkloadConfig::Kind::BatchedWrites;
            e.workload.count = 8;
            e.workload.batch = 2;
            e.workload.min_interval = 200 * kUs;
            sc.enclaves.push_back(e);
        } else {
            sc = base_time_scenario(name, 50, 300 * kUs, 800 * kUs);
        }
        sc.attacks.push_back(*script);
        return sc;
    }
    return std::nullopt;
}

std::vector<std::string> Scenario::builtin_names() {
    std::vector<std::string> names = {"honest_time", "workflow",   "batched",  "udp_echo",
                                      "tcp_transfer", "icmp_ping", "multiplex"};
    for (const auto& s : adversary::builtin_scripts()) names.push_back("attack_" + s.name);
    return names;
}

// --- world ---

World::World(Scenario sc)
    : sc_(std::move(sc)),
      machine_(sc_.platform_cfg),
      clocks_(machine_, sc_.clock_cfg),
      fabric_(machine_, true),
      ca_(DetRng(sc_.seed).fork("ca")),
      alloc_(machine_),
      adv_(machine_, metrics_) {
    if (sc_.nic_present) {
        nic_ = std::make_unique<devices::Nic>(machine_, 0, sc_.nic_cfg);
        nic_->attach(&fabric_);
        fabric_.attach(nic_.get());
        machine_.set_redirection(nic_->vector(), {platform::IrqTargetKind::Os, 0});
    }
    ssv_ = std::make_unique<ssv::Ssv>(machine_, clocks_, nic_.get(), metrics_, ssv_image());
    ssv_->attach();
    ca_.set_ssv_image(ssv_image());
    adv_.bind_devices(&clocks_, &fabric_);
    install_audit_hooks();
    setup_enclaves();
    install_attacks();
}

void World::install_audit_hooks() {
    ssv_->set_post_dispatch_hook([this](const ssv::Ssv::Hygiene& h) {
        if (!h.ok()) {
            ++hygiene_violations_;
            audit_log_.push_back("hygiene violation at dispatch " + std::to_string(h.dispatches));
        }
    });

    machine_.add_write_observer([this](const platform::AccessRecord& rec, ByteSpan data) {
        using platform::ActorKind;
        using platform::DomainKind;
        // record plaintext staged inside SMRAM (the SSV scratch area)
        if (rec.actor.kind == ActorKind::Ssv && rec.domain.kind == DomainKind::Smram) {
            if (rec.len > 64) staged_plaintext_digests_.insert(to_hex(crypto::sha256(data)));
            return;
        }
        if (rec.domain.kind != DomainKind::SharedRam) return;
        if (rec.actor.kind != ActorKind::Ssv && rec.actor.kind != ActorKind::Enclave) return;
        // every write outside SMRAM is either FIFO control traffic or one
        // full sealed frame; anything else breaks obliviousness
        if (rec.len == 4 || rec.len == 12) return;
        if (rec.len != kFrameSize) {
            ++audit_violations_;
            audit_log_.push_back(rec.actor.label() + " wrote " + std::to_string(rec.len) +
                                 " bytes to shared RAM");
            return;
        }
        ++slot_writes_;
        std::string digest = to_hex(crypto::sha256(data));
        if (!slot_digests_.insert(digest).second) {
            ++audit_violations_;
            audit_log_.push_back("duplicate ciphertext frame written to shared RAM");
        }
        if (staged_plaintext_digests_.count(to_hex(crypto::sha256(data.subspan(
                crypto::kNonceLen, channel::kCipherSize))))) {
            ++audit_violations_;
            audit_log_.push_back("plaintext bytes escaped to shared RAM");
        }
        if (rec.actor.kind == ActorKind::Ssv) {
            // SSV frame writes must authenticate under the owning session key
            channel::SealedFrame f;
            std::copy(data.begin(), data.end(), f.bytes.begin());
            uint64_t seq = get_u64(f.bytes.data() + 4);
            bool opens = false;
            for (auto& n : nodes_) {
                channel::PlainFrame out;
                if (n->ep && channel::open_raw(n->ep->key(), 1, seq, f, out)) {
                    opens = true;
                    break;
                }
            }
            if (!opens) {
                ++audit_violations_;
                audit_log_.push_back("ssv shared-RAM frame does not authenticate");
            }
        }
    });

    machine_.add_advance_hook([this](VirtNs now) { check_time_triggers(now); });
}

void World::setup_enclaves() {
    for (const auto& spec : sc_.enclaves) {
        auto n = std::make_unique<EnclaveNode>();
        n->spec = spec;
        n->rng = DetRng(sc_.seed).fork("enclave" + std::to_string(spec.id));
        machine_.add_epc(spec.id);

        n->cred.epid = Epid::from_u64(spec.epid);
        n->cred.measurement = credential_measurement(spec.epid);
        ca_.register_enclave(n->cred);

        n->ep = std::make_unique<channel::EnclaveEndpoint>(machine_, spec.id,
                                                           Epid::from_u64(spec.epid), metrics_);
        uint32_t id = spec.id;
        n->ep->set_window_hook([this, id](Window w) { fire_window(id, w); });

        machine_.set_context(platform::Context::enclave_ctx(spec.id));
        auto est = n->ep->establish(n->cred, ssv_->genuine_token(), ca_, *ssv_, alloc_,
                                    sc_.fifo_capacity);
        if (!est.ok()) {
            n->observations.push_back(channel::chan_err_name(est.error()));
            n->done = true;
            nodes_.push_back(std::move(n));
            continue;
        }

        // register the node before issuing any request so the audit
        // observer can already see its session key
        nodes_.push_back(std::move(n));
        EnclaveNode* node = nodes_.back().get();

        node->clock = std::make_unique<time_tss::TrustedClock>(*node->ep, metrics_);
        auto ci = node->clock->init();
        if (!ci.ok()) node->observations.push_back("ClockProbeFailed");

        if (spec.networked && nic_) {
            net_tss::StackConfig cfg;
            cfg.mac = mac_for(spec.id);
            cfg.ipv4 = spec.ip;
            cfg.notify_mode = spec.notify_mode;
            cfg.tx_mode = spec.tx_batch > 0 ? channel::RequestMode::batched(spec.tx_batch)
                                            : channel::RequestMode::immediate();
            cfg.entropy_seed = DetRng(sc_.seed).fork("stack" + std::to_string(spec.id)).next_u64();
            for (const auto& other : sc_.enclaves) {
                if (other.id != spec.id && other.networked)
                    cfg.peer_tags[other.ip] = ssv::flow_tag_for(Epid::from_u64(other.epid));
            }
            node->stack = std::make_unique<net_tss::NetStack>(*node->ep, *node->clock, metrics_, cfg);
            auto si = node->stack->init(*ssv_);
            if (!si.ok()) node->observations.push_back(net_tss::sock_err_name(si.error()));
        }
    }
    machine_.set_context(platform::Context::os());
}

void World::install_attacks() {
    for (size_t i = 0; i < sc_.attacks.size(); ++i)
        for (const auto& step : sc_.attacks[i].steps)
            pending_steps_.push_back(PendingStep{i, step, false, 0, 0});
}

void World::fire_window(uint32_t enclave_id, Window w) {
    for (auto& ps : pending_steps_) {
        if (ps.fired || ps.step.trigger.kind != adversary::Trigger::Kind::OnWindow) continue;
        if (ps.step.action.target_enclave != enclave_id) continue;
        if (ps.step.trigger.window != w) continue;
        if (++ps.window_seen == ps.step.trigger.occurrence) execute_action(ps);
    }
}

void World::check_time_triggers(VirtNs now) {
    if (machine_.in_smm()) return;  // the OS-level adversary is paused in SMM
    for (auto& ps : pending_steps_) {
        if (ps.fired || ps.step.trigger.kind != adversary::Trigger::Kind::AtTime) continue;
        if (now >= ps.step.trigger.at) execute_action(ps);
    }
}

void World::check_sample_triggers() {
    for (auto& ps : pending_steps_) {
        if (ps.fired || ps.step.trigger.kind != adversary::Trigger::Kind::AfterTimeSamples)
            continue;
        if (metrics_.time_samples >= ps.step.trigger.samples) execute_action(ps);
    }
}

void World::execute_action(PendingStep& ps) {
    ps.fired = true;
    ps.samples_at_fire = metrics_.time_samples;
    const adversary::Action& a = ps.step.action;
    EnclaveNode* target =
        a.target_enclave < nodes_.size() ? nodes_[a.target_enclave].get() : nullptr;
    auto region = [&](uint8_t which) {
        return which == 0 ? target->ep->to_ssv_region() : target->ep->from_ssv_region();
    };

    switch (a.kind) {
        case adversary::Action::Kind::Snoop:
            adv_.snoop_shared_digest();
            break;
        case adversary::Action::Kind::TamperFrame:
            if (target) adv_.tamper_frame(region(a.fifo), a.index, 100);
            break;
        case adversary::Action::Kind::ReplayFrame:
            if (target) {
                Bytes f = adv_.capture_frame(region(a.fifo), a.index);
                if (!f.empty()) adv_.replay_frame(region(a.fifo), f);
            }
            break;
        case adversary::Action::Kind::DropFrame:
            if (target) adv_.drop_frame(region(a.fifo), a.index);
            break;
        case adversary::Action::Kind::Reorder:
            if (target) adv_.reorder(region(a.fifo), a.index, a.index2);
            break;
        case adversary::Action::Kind::FakeSmi:
            if (target) {
                Bytes garbage = nodes_[0]->rng.bytes(kFrameSize);
                adv_.fake_smi(target->ep->to_ssv_region(), garbage);
            }
            break;
        case adversary::Action::Kind::FakeSsvHandshake: {
            // the privileged software emulates an SSV with a forged image
            channel::SsvToken forged;
            forged.image_hash = crypto::sha256(Bytes{0xde, 0xad});
            auto r = ca_.broker(nodes_.empty() ? channel::EnclaveCredential{} : nodes_[0]->cred,
                                forged);
            adv_.trace().append(machine_.now(), "fake_ssv_handshake",
                                r.ok() ? "accepted" : channel::chan_err_name(r.error()));
            if (!r.ok()) world_observations_.push_back(channel::chan_err_name(r.error()));
            break;
        }
        case adversary::Action::Kind::FakeEnclaveHandshake: {
            channel::EnclaveCredential rogue;
            rogue.epid = Epid::from_u64(0xbadbadull);
            rogue.measurement = crypto::sha256(Bytes{0x66});
            auto r = ca_.broker(rogue, ssv_->genuine_token());
            adv_.trace().append(machine_.now(), "fake_enclave_handshake",
                                r.ok() ? "accepted" : channel::chan_err_name(r.error()));
            if (!r.ok()) world_observations_.push_back(channel::chan_err_name(r.error()));
            break;
        }
        case adversary::Action::Kind::ClockTamper:
            adv_.clock_tamper(a.clock);
            break;
        case adversary::Action::Kind::InjectNicFrame: {
            // untagged foreign traffic from the host network path
            Bytes marker = {'f', 'o', 'r', 'e', 'i', 'g', 'n'};
            Bytes udp = wire::build_udp(0x0a0000fe, 0x0a0000ff, 4444, 5555, marker);
            Bytes ip = build_plain_ipv4(wire::kProtoUdp, 0x0a0000fe, 0x0a0000ff, udp);
            MacAddr src;
            src.b = {0xaa, 0xbb, 0xcc, 0x00, 0x00, 0x01};
            adv_.inject_nic_frame(wire::build_ether(MacAddr::broadcast(), src, wire::kEtherIpv4, ip));
            break;
        }
        case adversary::Action::Kind::InjectFifoFrame: {
            // sealed under a guessed key: carries the victim's flow tag inside
            if (target) {
                channel::SessionEnd guess;
                guess.session_id = target->ep->session_id();
                guess.tx_dir = 1;
                guess.state = channel::SessionState::Active;
                nodes_[0]->rng.fill(guess.key.data(), guess.key.size());
                channel::PlainFrame ev;
                ev.device = static_cast<uint8_t>(DeviceId::Nic);
                ev.operation = static_cast<uint8_t>(OpCode::Read);
                ev.status = static_cast<uint8_t>(channel::Status::Event);
                ev.payload = {0x45, 0x00};
                auto sealed = channel::seal(guess, ev);
                if (sealed.ok()) {
                    adv_.inject_fifo_frame(region(1), sealed.value().bytes);
                }
            }
            break;
        }
        case adversary::Action::Kind::Delay:
            adv_.delay(a.duration, a.infinite);
            break;
    }
}

void World::step_other_stacks(uint32_t self_id) {
    for (auto& n : nodes_) {
        if (n->spec.id == self_id || !n->stack) continue;
        machine_.set_context(platform::Context::enclave_ctx(n->spec.id));
        n->stack->step();
    }
    machine_.set_context(platform::Context::enclave_ctx(self_id));
}

void World::run_key_scan() {
    auto contains = [](ByteSpan hay, ByteSpan needle) {
        return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
    };
    for (auto& n : nodes_) {
        if (!n->ep || n->ep->state() != channel::SessionState::Active) continue;
        ByteSpan key(n->ep->key().data(), crypto::kKeyLen);
        if (contains(machine_.domain_view(platform::DomainRef::shared()), key) ||
            contains(machine_.domain_view(platform::DomainRef::untrusted()), key)) {
            key_scan_clean_ = false;
            audit_log_.push_back("session key found in unprotected memory");
        }
    }
}

void World::step_node(EnclaveNode& n) {
    machine_.set_context(platform::Context::enclave_ctx(n.spec.id));
    switch (n.spec.workload.kind) {
        case WorkloadConfig::Kind::Idle:
            n.done = true;
            break;
        case WorkloadConfig::Kind::NetIdle:
            if (n.stack) n.stack->step();
            n.next_at = machine_.now() + n.spec.workload.min_interval;
            break;
        case WorkloadConfig::Kind::TimePoll: wl_time_poll(n); break;
        case WorkloadConfig::Kind::BatchedWrites: wl_batched(n); break;
        case WorkloadConfig::Kind::UdpEchoServer: wl_udp_server(n); break;
        case WorkloadConfig::Kind::UdpEchoClient: wl_udp_client(n); break;
        case WorkloadConfig::Kind::TcpServer: wl_tcp_server(n); break;
        case WorkloadConfig::Kind::TcpClient: wl_tcp_client(n); break;
        case WorkloadConfig::Kind::IcmpPing: wl_icmp_ping(n); break;
        case WorkloadConfig::Kind::FloodSink: wl_flood_sink(n); break;
    }
    machine_.set_context(platform::Context::os());
}

void World::run() {
    metrics_before_attacks_ = metrics_;
    while (machine_.now() < sc_.duration) {
        // pick the next actor: a workload node or the flood injector
        EnclaveNode* pick = nullptr;
        VirtNs pick_at = ~0ull;
        bool foreground_left = false;
        for (auto& n : nodes_) {
            if (n->done) continue;
            if (!is_background(n->spec.workload.kind)) foreground_left = true;
            if (n->next_at < pick_at) {
                pick = n.get();
                pick_at = n->next_at;
            }
        }
        bool flood_left = flood_sent_ < sc_.flood.count;
        if (flood_left) {
            foreground_left = true;
            if (flood_next_ < pick_at) {
                pick = nullptr;
                pick_at = flood_next_;
            }
        }
        if (!foreground_left) break;
        if (pick_at == ~0ull) break;
        if (pick_at > machine_.now()) machine_.advance(pick_at - machine_.now());

        if (!pick && flood_left) {
            // inject one flood frame from the host network path
            uint32_t i = flood_sent_++;
            flood_next_ = machine_.now() + sc_.flood.interval;
            std::vector<EnclaveNode*> sinks;
            for (auto& n : nodes_)
                if (n->stack) sinks.push_back(n.get());
            uint32_t pick_mod = i % 3;
            std::string marker;
            Bytes frame;
            MacAddr src;
            src.b = {0xaa, 0xbb, 0xcc, 0x00, 0x00, 0x02};
            if (pick_mod == 0 || sinks.empty()) {
                marker = "F:os:" + std::to_string(i);
                Bytes udp = wire::build_udp(0x0a0000fe, 0x0a0000f0, 4444, sc_.flood.port,
                                            Bytes(marker.begin(), marker.end()));
                Bytes ip = build_plain_ipv4(wire::kProtoUdp, 0x0a0000fe, 0x0a0000f0, udp);
                frame = wire::build_ether(MacAddr::broadcast(), src, wire::kEtherIpv4, ip);
            } else {
                EnclaveNode* sink = sinks[(pick_mod - 1) % sinks.size()];
                marker = "F:" + std::to_string(sink->spec.id) + ":" + std::to_string(i);
                Bytes udp = wire::build_udp(0x0a0000fe, sink->spec.ip, 4444, sc_.flood.port,
                                            Bytes(marker.begin(), marker.end()));
                wire::Ipv4Header h;
                h.protocol = wire::kProtoUdp;
                h.src = 0x0a0000fe;
                h.dst = sink->spec.ip;
                h.ident = static_cast<uint16_t>(i);
                h.options = sink->stack->flow_tag();
                Bytes ip = wire::build_ipv4(h, udp);
                frame = wire::build_ether(sink->stack->mac(), src, wire::kEtherIpv4, ip);
            }
            fabric_.inject(frame);
            continue;
        }
        if (!pick) break;
        step_node(*pick);
        if (sc_.key_scan) run_key_scan();
        check_sample_triggers();
    }
    // grace period: background sinks drain whatever is still queued
    for (int round = 0; round < 40; ++round) {
        bool anything = false;
        for (auto& n : nodes_) {
            if (n->done || !is_background(n->spec.workload.kind)) continue;
            anything = true;
            step_node(*n);
        }
        if (!anything) break;
        machine_.advance(machine_.costs().poll_quantum);
    }
    metrics_.frames_in_flight = 0;
    for (auto& n : nodes_)
        if (n->ep) metrics_.frames_in_flight += n->ep->frames_in_flight();
}

// --- workloads ---

void World::wl_time_poll(EnclaveNode& n) {
    if (n.iter >= n.spec.workload.count) {
        n.done = true;
        return;
    }
    auto r = n.clock->now();
    ++n.iter;
    if (!r.ok()) {
        if (r.error().kind == time_tss::TimeError::Kind::Channel)
            n.observations.push_back(channel::chan_err_name(r.error().chan));
        else
            n.observations.push_back("SourceUnavailable");
    } else if (!r.value().second.ok()) {
        n.verdict_failures.push_back({metrics_.time_samples, r.value().second});
    }
    n.next_at =
        machine_.now() + n.rng.uniform(n.spec.workload.min_interval, n.spec.workload.max_interval);
}

void World::wl_batched(EnclaveNode& n) {
    if (n.iter >= n.spec.workload.count) {
        if (n.ep->batch_pending() > 0) {
            auto f = n.ep->flush_batch();
            if (!f.ok()) n.observations.push_back(channel::chan_err_name(f.error()));
        }
        n.done = true;
        return;
    }
    // payload: a small untagged broadcast frame, destined for the OS path
    Bytes junk = n.rng.bytes(64);
    Bytes ip = build_plain_ipv4(wire::kProtoUdp, 0x0a0000fd, 0x0a0000fc,
                                wire::build_udp(0x0a0000fd, 0x0a0000fc, 1, 2, junk));
    MacAddr src = mac_for(n.spec.id);
    Bytes frame = wire::build_ether(MacAddr::broadcast(), src, wire::kEtherIpv4, ip);
    auto r = n.ep->request(DeviceId::Nic, OpCode::Write, frame,
                           channel::RequestMode::batched(n.spec.workload.batch));
    if (!r.ok()) n.observations.push_back(channel::chan_err_name(r.error()));
    ++n.iter;
    n.next_at = machine_.now() + n.spec.workload.min_interval;
}

void World::wl_udp_server(EnclaveNode& n) {
    if (!n.stack || !n.stack->initialized()) {
        n.done = true;
        return;
    }
    if (n.phase == 0) {
        auto s = n.stack->socket(net_tss::Proto::Udp);
        n.fd = s.value();
        n.stack->bind(n.fd, n.spec.workload.port);
        n.phase = 1;
    }
    n.stack->step();
    while (true) {
        auto d = n.stack->recvfrom(n.fd);
        if (!d.ok()) break;
        n.stack->sendto(n.fd, d.value().src_ip, d.value().src_port, d.value().payload);
        ++n.echoes_ok;
    }
    n.next_at = machine_.now() + n.spec.workload.min_interval;
}

void World::wl_udp_client(EnclaveNode& n) {
    if (!n.stack || !n.stack->initialized()) {
        n.done = true;
        return;
    }
    auto send_next = [&] {
        size_t size = n.rng.uniform(n.spec.workload.min_size, n.spec.workload.max_size);
        n.await_payload = n.rng.bytes(size);
        n.stack->sendto(n.fd, n.spec.workload.peer_ip, n.spec.workload.port, n.await_payload);
        n.probe_sent_at = machine_.now();
    };
    if (n.phase == 0) {
        auto s = n.stack->socket(net_tss::Proto::Udp);
        n.fd = s.value();
        n.stack->bind(n.fd, 30000);
        n.phase = 1;
        send_next();
    }
    n.stack->step();
    auto d = n.stack->recvfrom(n.fd);
    if (d.ok()) {
        if (d.value().payload == n.await_payload)
            ++n.echoes_ok;
        else
            ++n.corruptions;
        ++n.iter;
        if (n.iter >= n.spec.workload.count) {
            n.done = true;
            return;
        }
        send_next();
    } else if (machine_.now() - n.probe_sent_at > 500 * kMs) {
        n.observations.push_back("EchoTimeout");
        ++n.iter;
        if (n.iter >= n.spec.workload.count) {
            n.done = true;
            return;
        }
        send_next();
    }
    n.next_at = machine_.now() + n.spec.workload.min_interval;
}

void World::wl_tcp_server(EnclaveNode& n) {
    if (!n.stack || !n.stack->initialized()) {
        n.done = true;
        return;
    }
    if (n.phase == 0) {
        auto s = n.stack->socket(net_tss::Proto::Tcp);
        n.fd = s.value();
        n.stack->bind(n.fd, n.spec.workload.port);
        n.stack->listen(n.fd);
        n.phase = 1;
    }
    n.stack->step();
    if (n.phase == 1) {
        auto c = n.stack->accept(n.fd);
        if (c.ok()) {
            n.child_fd = c.value();
            n.phase = 2;
        }
    }
    if (n.phase == 2) {
        while (true) {
            auto r = n.stack->recv(n.child_fd);
            if (r.ok()) {
                n.rx_accum.insert(n.rx_accum.end(), r.value().begin(), r.value().end());
            } else {
                if (r.error() == net_tss::SockErr::Closed) {
                    n.stack->close(n.child_fd);
                    n.phase = 3;
                }
                break;
            }
        }
    }
    n.next_at = machine_.now() + n.spec.workload.min_interval;
}

void World::wl_tcp_client(EnclaveNode& n) {
    if (!n.stack || !n.stack->initialized()) {
        n.done = true;
        return;
    }
    switch (n.phase) {
        case 0: {
            auto s = n.stack->socket(net_tss::Proto::Tcp);
            n.fd = s.value();
            auto c = n.stack->connect(n.fd, n.spec.workload.peer_ip, n.spec.workload.port);
            if (!c.ok()) {
                n.observations.push_back(net_tss::sock_err_name(c.error()));
                n.done = true;
                return;
            }
            n.phase = 1;
            break;
        }
        case 1: {
            n.stack->step();
            auto st = n.stack->connect_status(n.fd);
            if (st.ok()) {
                n.phase = 2;
            } else if (st.error() != net_tss::SockErr::WouldBlock) {
                n.observations.push_back(net_tss::sock_err_name(st.error()));
                n.done = true;
                return;
            }
            break;
        }
        case 2: {
            uint32_t remaining = n.spec.workload.total_bytes - static_cast<uint32_t>(n.tx_accum.size());
            uint32_t chunk = std::min(n.spec.workload.chunk, remaining);
            Bytes data = n.rng.bytes(chunk);
            n.tx_accum.insert(n.tx_accum.end(), data.begin(), data.end());
            n.stack->send(n.fd, data);
            if (n.tx_accum.size() >= n.spec.workload.total_bytes) n.phase = 3;
            break;
        }
        case 3: {
            n.stack->step();
            if (n.stack->tcp_unacked(n.fd) == 0) {
                n.stack->close(n.fd);
                n.phase = 4;
            }
            break;
        }
        case 4: {
            n.stack->step();
            auto st = n.stack->tcp_state(n.fd);
            if (st == net_tss::TcpState::TimeWait || st == net_tss::TcpState::Closed) {
                n.done = true;
                return;
            }
            break;
        }
    }
    n.next_at = machine_.now() + n.spec.workload.min_interval;
}

void World::wl_icmp_ping(EnclaveNode& n) {
    if (!n.stack || !n.stack->initialized()) {
        n.done = true;
        return;
    }
    Bytes payload = n.rng.bytes(n.spec.workload.icmp_payload);
    uint32_t self = n.spec.id;
    auto r = n.stack->icmp_echo(n.spec.workload.peer_ip, payload,
                                static_cast<int>(n.spec.workload.count),
                                [this, self] { step_other_stacks(self); });
    if (r.ok()) {
        n.icmp_rtts = r.value().rtts;
        if (r.value().timeouts > 0) n.observations.push_back("EchoTimeout");
    } else {
        n.observations.push_back(net_tss::sock_err_name(r.error()));
    }
    n.done = true;
}

void World::wl_flood_sink(EnclaveNode& n) {
    if (!n.stack || !n.stack->initialized()) {
        n.done = true;
        return;
    }
    if (n.phase == 0) {
        auto s = n.stack->socket(net_tss::Proto::Udp);
        n.fd = s.value();
        n.stack->bind(n.fd, n.spec.workload.port);
        n.phase = 1;
    }
    n.stack->step();
    while (true) {
        auto d = n.stack->recvfrom(n.fd);
        if (!d.ok()) break;
        std::string marker(d.value().payload.begin(), d.value().payload.end());
        std::string expect = "F:" + std::to_string(n.spec.id) + ":";
        if (marker.rfind(expect, 0) == 0)
            ++n.flood_received;
        else
            ++n.flood_misdelivered;
    }
    n.next_at = machine_.now() + n.spec.workload.min_interval;
}

// --- evaluation & report ---

std::string World::observed_outcome(const adversary::AttackScript& script,
                                    const Metrics& before) const {
    const std::string& want = script.expected.detected;
    auto delta = [&](uint64_t Metrics::*f) { return metrics_.*f - before.*f; };

    if (script.expected.kind == adversary::ExpectedOutcome::Kind::DegradedToDoS) {
        for (auto& n : nodes_)
            for (auto& o : n->observations)
                if (o == "Timeout") return "DegradedToDoS";
        if (machine_.suppressed_smi_count() > 0) return "DegradedToDoS";
        return "none";
    }
    if (script.expected.kind == adversary::ExpectedOutcome::Kind::NoEffect) {
        bool enclave_clean = true;
        for (auto& n : nodes_)
            if (!n->observations.empty() || n->flood_misdelivered) enclave_clean = false;
        if (enclave_clean && delta(&Metrics::frames_to_os_path) > 0) return "NoEffect";
        return enclave_clean ? "NoEffect(nothing observed)" : "enclave disturbed";
    }

    if (want == "ReplayOrReorder") {
        if (delta(&Metrics::enclave_replay_drops) > 0 || delta(&Metrics::ssv_replay_drops) > 0)
            return "ReplayOrReorder";
        return "none";
    }
    if (want == "AuthFail" || want == "DroppedWithCounter") {
        if (delta(&Metrics::enclave_auth_drops) > 0)
            return want;
        if (delta(&Metrics::ssv_auth_drops) > 0) return want;
        return "none";
    }
    if (want == "AuthFailSsv" || want == "AuthFailEnclave") {
        for (auto& o : world_observations_)
            if (o == want) return o;
        return "none";
    }
    if (want.rfind("TimeViolation:", 0) == 0) {
        std::string src_name = want.substr(14);
        devices::ClockSource src = devices::ClockSource::Rtc;
        for (int i = 0; i < 5; ++i)
            if (src_name == devices::clock_source_name(static_cast<devices::ClockSource>(i)))
                src = static_cast<devices::ClockSource>(i);
        uint64_t fired_at = 0;
        for (const auto& ps : pending_steps_)
            if (ps.fired && sc_.attacks[ps.script].name == script.name)
                fired_at = ps.samples_at_fire;
        for (auto& n : nodes_) {
            for (auto& vf : n->verdict_failures) {
                if (vf.sample_index > fired_at && vf.sample_index <= fired_at + 2 &&
                    vf.verdict.names(src))
                    return want;
            }
        }
        return "none";
    }
    return "unknown";
}

void World::evaluate_attacks(Report& r) {
    for (const auto& script : sc_.attacks) {
        AttackVerdictRow row;
        row.script = script.name;
        switch (script.expected.kind) {
            case adversary::ExpectedOutcome::Kind::DetectedAs:
                row.expected = script.expected.detected;
                break;
            case adversary::ExpectedOutcome::Kind::DegradedToDoS:
                row.expected = "DegradedToDoS";
                break;
            case adversary::ExpectedOutcome::Kind::NoEffect:
                row.expected = "NoEffect";
                break;
        }
        row.observed = observed_outcome(script, metrics_before_attacks_);
        row.pass = row.observed == row.expected ||
                   (script.expected.kind == adversary::ExpectedOutcome::Kind::NoEffect &&
                    row.observed.rfind("NoEffect", 0) == 0);
        r.verdicts.push_back(row);
    }
}

std::vector<std::vector<std::string>> World::slice_workflow_traces(
    const std::vector<platform::TraceEvent>& trace) {
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> cur;
    for (const auto& ev : trace) {
        if (cur.empty()) {
            if (ev.label == platform::step::kEpcEncrypt) cur.push_back(ev.label);
            continue;
        }
        cur.push_back(ev.label);
        if (cur.size() == 11) {
            out.push_back(cur);
            cur.clear();
        }
    }
    return out;
}

std::vector<BreakdownRow> World::positional_breakdown(
    const std::vector<platform::TraceEvent>& trace) {
    std::vector<BreakdownRow> rows(11);
    size_t pos = 0;
    bool in_group = false;
    for (const auto& ev : trace) {
        if (!in_group) {
            if (ev.label != platform::step::kEpcEncrypt) continue;
            in_group = true;
            pos = 0;
        }
        if (rows[pos].label.empty()) rows[pos].label = ev.label;
        rows[pos].total_ns += ev.cost;
        rows[pos].count += 1;
        ++pos;
        if (pos == 11) {
            in_group = false;
        }
    }
    return rows;
}

Report World::report() {
    Report r;
    r.scenario = sc_.name;
    r.seed = sc_.seed;
    r.counters = metrics_.as_map();
    r.counters["smis"] = machine_.smi_count();
    r.counters["smis_suppressed"] = machine_.suppressed_smi_count();
    r.counters["faults"] = machine_.fault_count();
    r.counters["os_irqs"] = machine_.os_irq_count();
    r.counters["ssv_dispatches"] = ssv_->hygiene().dispatches;
    r.counters["fabric_frames"] = fabric_.frames_carried();
    uint64_t echoes = 0, corruptions = 0, flood_rx = 0, flood_bad = 0;
    for (auto& n : nodes_) {
        echoes += n->echoes_ok;
        corruptions += n->corruptions;
        flood_rx += n->flood_received;
        flood_bad += n->flood_misdelivered;
        for (auto& o : n->observations) r.observations.push_back(
            "enclave" + std::to_string(n->spec.id) + ":" + o);
        r.counters["verdict_failures_e" + std::to_string(n->spec.id)] = n->verdict_failures.size();
    }
    for (auto& o : world_observations_) r.observations.push_back(o);
    r.counters["echoes_ok"] = echoes;
    r.counters["echo_corruptions"] = corruptions;
    r.counters["flood_received"] = flood_rx;
    r.counters["flood_misdelivered"] = flood_bad;

    r.workflow_traces = slice_workflow_traces(machine_.trace());
    r.breakdown = positional_breakdown(machine_.trace());
    evaluate_attacks(r);
    r.conservation_holds = metrics_.conservation_holds();
    r.hygiene_violations = hygiene_violations_;
    r.audit_violations = audit_violations_;

    std::ostringstream log;
    log << machine_.event_log() << "---trace---\n";
    for (const auto& ev : machine_.trace()) log << ev.at << ' ' << ev.label << '\n';
    r.event_log = log.str();
    r.event_log_digest = to_hex(crypto::sha256(
        ByteSpan(reinterpret_cast<const uint8_t*>(r.event_log.data()), r.event_log.size())));

    if (sc_.export_time_history && !nodes_.empty() && nodes_[0]->clock)
        r.time_history = nodes_[0]->clock->export_history_json();

    r.expectations_hold = r.conservation_holds && hygiene_violations_ == 0 &&
                          audit_violations_ == 0 && key_scan_clean_ && r.all_verdicts_pass();
    return r;
}

bool Report::all_verdicts_pass() const {
    return std::all_of(verdicts.begin(), verdicts.end(),
                       [](const AttackVerdictRow& v) { return v.pass; });
}

// --- report serialization ---

std::string Report::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["seed"] = seed;
    j["counters"] = counters;
    json rows = json::array();
    for (const auto& b : breakdown)
        rows.push_back({{"label", b.label}, {"total_ns", b.total_ns}, {"count", b.count}});
    j["breakdown"] = rows;
    json verd = json::array();
    for (const auto& v : verdicts)
        verd.push_back({{"script", v.script},
                        {"expected", v.expected},
                        {"observed", v.observed},
                        {"pass", v.pass}});
    j["verdicts"] = verd;
    j["workflow_traces"] = workflow_traces;
    json ser = json::array();
    for (const auto& s : series) {
        json pts = json::array();
        for (auto& [x, y] : s.points) pts.push_back({x, y});
        ser.push_back({{"name", s.name}, {"points", pts}});
    }
    j["series"] = ser;
    j["observations"] = observations;
    j["expectations_hold"] = expectations_hold;
    j["conservation_holds"] = conservation_holds;
    j["hygiene_violations"] = hygiene_violations;
    j["audit_violations"] = audit_violations;
    j["event_log_digest"] = event_log_digest;
    return j.dump(2);
}

std::optional<Report> Report::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    Report r;
    r.scenario = j.value("scenario", "");
    r.seed = j.value("seed", 0ull);
    json counters = j.value("counters", json::object());
    for (auto& [k, v] : counters.items()) r.counters[k] = v.get<uint64_t>();
    for (auto& b : j.value("breakdown", json::array())) {
        BreakdownRow row;
        row.label = b.value("label", "");
        row.total_ns = b.value("total_ns", 0ull);
        row.count = b.value("count", 0ull);
        r.breakdown.push_back(row);
    }
    for (auto& v : j.value("verdicts", json::array())) {
        AttackVerdictRow row;
        row.script = v.value("script", "");
        row.expected = v.value("expected", "");
        row.observed = v.value("observed", "");
        row.pass = v.value("pass", false);
        r.verdicts.push_back(row);
    }
    for (auto& t : j.value("workflow_traces", json::array())) {
        std::vector<std::string> labels;
        for (auto& l : t) labels.push_back(l.get<std::string>());
        r.workflow_traces.push_back(labels);
    }
    for (auto& s : j.value("series", json::array())) {
        Series ser;
        ser.name = s.value("name", "");
        for (auto& p : s.value("points", json::array()))
            ser.points.emplace_back(p[0].get<double>(), p[1].get<double>());
        r.series.push_back(ser);
    }
    for (auto& o : j.value("observations", json::array())) r.observations.push_back(o);
    r.expectations_hold = j.value("expectations_hold", true);
    r.conservation_holds = j.value("conservation_holds", true);
    r.hygiene_violations = j.value("hygiene_violations", 0ull);
    r.audit_violations = j.value("audit_violations", 0ull);
    r.event_log_digest = j.value("event_log_digest", "");
    return r;
}

std::string Report::to_table() const {
    std::ostringstream os;
    os << "scenario: " << scenario << " (seed " << seed << ")\n";
    os << "expectations_hold: " << (expectations_hold ? "yes" : "NO") << "\n";
    if (!breakdown.empty() && breakdown[0].count > 0) {
        os << "\nper-step breakdown (mean us over " << breakdown[0].count << " requests)\n";
        for (const auto& b : breakdown) {
            if (b.label.empty()) continue;
            os << "  " << b.label;
            for (size_t i = b.label.size(); i < 24; ++i) os << ' ';
            os << b.mean_ns() / 1000.0 << "\n";
        }
    }
    if (!verdicts.empty()) {
        os << "\nattack verdicts\n";
        for (const auto& v : verdicts)
            os << "  " << v.script << ": expected=" << v.expected << " observed=" << v.observed
               << (v.pass ? " [pass]" : " [FAIL]") << "\n";
    }
    if (!series.empty()) {
        for (const auto& s : series) {
            os << "\nseries " << s.name << "\n";
            for (auto& [x, y] : s.points) os << "  " << x << "\t" << y << "\n";
        }
    }
    os << "\ncounters\n";
    for (const auto& [k, v] : counters) os << "  " << k << " = " << v << "\n";
    if (!observations.empty()) {
        os << "\nobservations\n";
        for (const auto& o : observations) os << "  " << o << "\n";
    }
    return os.str();
}

// --- entry points ---

Report run_scenario(const Scenario& sc) {
    World w(sc);
    w.run();
    return w.report();
}

Report bench_time(uint32_t samples, VirtNs interval, uint64_t seed) {
    Scenario sc = *Scenario::builtin("honest_time");
    sc.name = "bench_time";
    sc.seed = seed;
    sc.enclaves[0].workload.count = samples;
    sc.enclaves[0].workload.min_interval = interval;
    sc.enclaves[0].workload.max_interval = interval;
    sc.duration = 600 * kSec;
    sc.key_scan = false;
    World w(sc);
    w.run();
    return w.report();
}

Report bench_net(const std::vector<uint32_t>& payload_sizes, uint32_t count, uint64_t seed) {
    Scenario sc = *Scenario::builtin("icmp_ping");
    sc.name = "bench_net";
    sc.seed = seed;
    sc.enclaves[1].workload.kind = WorkloadConfig::Kind::NetIdle;
    sc.duration = 600 * kSec;
    World w(sc);
    // drive the probes directly so every size shares one world
    Series rtt_series;
    rtt_series.name = "icmp_rtt_us_vs_payload";
    auto& pinger = w.node(1);
    w.machine().set_context(platform::Context::enclave_ctx(pinger.spec.id));
    {
        Bytes warm = pinger.rng.bytes(8);
        pinger.stack->icmp_echo(w.node(0).spec.ip, warm, 1,
                                [&w, &pinger] { w.step_other_stacks(pinger.spec.id); });
    }
    for (uint32_t size : payload_sizes) {
        Bytes payload = pinger.rng.bytes(size);
        auto r = pinger.stack->icmp_echo(w.node(0).spec.ip, payload, static_cast<int>(count),
                                         [&w, &pinger] { w.step_other_stacks(pinger.spec.id); });
        if (!r.ok() || r.value().rtts.empty()) continue;
        double mean = 0;
        for (auto rtt : r.value().rtts) mean += static_cast<double>(rtt);
        mean /= static_cast<double>(r.value().rtts.size()) * 1000.0;  // us
        rtt_series.points.emplace_back(static_cast<double>(size), mean);
    }
    Report rep = w.report();
    rep.scenario = "bench_net";
    rep.series.push_back(rtt_series);
    return rep;
}

Report bench_overhead(const std::vector<VirtNs>& intervals, const std::vector<VirtNs>& durations) {
    Report rep;
    rep.scenario = "bench_overhead";
    constexpr VirtNs kForeground = 10 * kSec;
    for (VirtNs d : durations) {
        Series s;
        s.name = "overhead_ratio_vs_interval_ms_dur" + std::to_string(d / kUs) + "us";
        for (VirtNs i : intervals) {
            uint64_t requests = kForeground / i;
            double ratio = static_cast<double>(requests * d) / static_cast<double>(kForeground);
            s.points.emplace_back(static_cast<double>(i) / static_cast<double>(kMs), ratio);
        }
        rep.series.push_back(s);
    }
    rep.expectations_hold = true;
    rep.conservation_holds = true;
    return rep;
}

}  // namespace aurora::harness
