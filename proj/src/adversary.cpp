#include "aurora/adversary.hpp"

#include "aurora/aead.hpp"

#include <json.hpp>

#include <limits>

namespace aurora::adversary {

using nlohmann::json;

Bytes Adversary::snoop_shared(size_t offset, size_t len) {
    auto r = m_.read(Actor::adversary(), DomainRef::shared(), offset, len);
    if (!r.ok()) {
        trace_.append(m_.now(), "snoop_shared",
                      std::string("fault ") + platform::fault_name(r.error().kind));
        return {};
    }
    trace_.append(m_.now(), "snoop_shared",
                  "off=" + std::to_string(offset) + " len=" + std::to_string(len) +
                      (len <= 64 ? " bytes=" + to_hex(r.value()) : ""));
    return r.value();
}

std::string Adversary::snoop_shared_digest() {
    size_t n = m_.domain_size(DomainRef::shared());
    auto r = m_.read(Actor::adversary(), DomainRef::shared(), 0, n);
    if (!r.ok()) return {};
    std::string digest = to_hex(crypto::sha256(r.value()));
    trace_.append(m_.now(), "snoop_shared", "digest=" + digest);
    return digest;
}

std::optional<platform::FaultKind> Adversary::try_read(DomainRef d, size_t offset, size_t len) {
    auto r = m_.read(Actor::adversary(), d, offset, len);
    if (r.ok()) {
        trace_.append(m_.now(), "read", d.label() + " ok");
        return std::nullopt;
    }
    trace_.append(m_.now(), "read",
                  d.label() + " fault " + platform::fault_name(r.error().kind));
    return r.error().kind;
}

std::pair<uint32_t, uint32_t> Adversary::indices(const FifoRegion& r) {
    auto v = m_.read(Actor::adversary(), DomainRef::shared(), r.base, 8);
    if (!v.ok()) return {0, 0};
    return {get_u32(v.value().data()), get_u32(v.value().data() + 4)};
}

void Adversary::set_producer(const FifoRegion& r, uint32_t p) {
    uint8_t buf[4];
    put_u32(buf, p);
    m_.write(Actor::adversary(), DomainRef::shared(), r.base, ByteSpan(buf, 4));
}

Bytes Adversary::read_slot(const FifoRegion& r, uint32_t abs_index) {
    auto v = m_.read(Actor::adversary(), DomainRef::shared(), r.slot_offset(abs_index), kFrameSize);
    return v.ok() ? v.value() : Bytes{};
}

void Adversary::write_slot(const FifoRegion& r, uint32_t abs_index, ByteSpan data) {
    m_.write(Actor::adversary(), DomainRef::shared(), r.slot_offset(abs_index), data);
}

size_t Adversary::fifo_pending(const FifoRegion& r) {
    auto [p, c] = indices(r);
    uint32_t n = p - c;
    return n > r.capacity ? 0 : n;
}

Bytes Adversary::capture_frame(const FifoRegion& r, uint32_t nth) {
    auto [p, c] = indices(r);
    Bytes f = read_slot(r, c + nth);
    trace_.append(m_.now(), "capture_frame", "slot=" + std::to_string(c + nth));
    return f;
}

void Adversary::tamper_frame(const FifoRegion& r, uint32_t nth, size_t byte_offset) {
    auto [p, c] = indices(r);
    Bytes f = read_slot(r, c + nth);
    if (f.empty()) return;
    f[byte_offset % f.size()] ^= 0x01;
    write_slot(r, c + nth, f);
    trace_.append(m_.now(), "tamper_frame",
                  "slot=" + std::to_string(c + nth) + " bit flipped at " +
                      std::to_string(byte_offset % f.size()));
}

void Adversary::inject_fifo_frame(const FifoRegion& r, ByteSpan frame) {
    auto [p, c] = indices(r);
    if (p - c >= r.capacity) return;  // no room; the attack fizzles
    Bytes padded(kFrameSize, 0);
    std::copy(frame.begin(), frame.end(), padded.begin());
    write_slot(r, p, padded);
    set_producer(r, p + 1);
    ++metrics_.frames_injected;
    trace_.append(m_.now(), "inject_fifo_frame", "slot=" + std::to_string(p));
}

void Adversary::drop_frame(const FifoRegion& r, uint32_t nth) {
    auto [p, c] = indices(r);
    uint32_t pending = p - c;
    if (pending == 0 || pending > r.capacity || nth >= pending) return;
    // shift everything behind the victim forward by one slot
    for (uint32_t i = c + nth; i + 1 < p; ++i) write_slot(r, i, read_slot(r, i + 1));
    set_producer(r, p - 1);
    ++metrics_.adversary_removed;
    trace_.append(m_.now(), "drop_frame", "nth=" + std::to_string(nth));
}

void Adversary::reorder(const FifoRegion& r, uint32_t i, uint32_t j) {
    auto [p, c] = indices(r);
    uint32_t pending = p - c;
    if (i >= pending || j >= pending || i == j) return;
    Bytes a = read_slot(r, c + i);
    Bytes b = read_slot(r, c + j);
    write_slot(r, c + i, b);
    write_slot(r, c + j, a);
    trace_.append(m_.now(), "reorder",
                  std::to_string(i) + "<->" + std::to_string(j));
}

void Adversary::fake_smi(const FifoRegion& victim_to_ssv, ByteSpan forged) {
    inject_fifo_frame(victim_to_ssv, forged);
    trace_.append(m_.now(), "fake_smi", "forged frame + port write");
    m_.trigger_smi(platform::PendingSmi::software());
}

void Adversary::delay(VirtNs duration, bool infinite) {
    if (infinite)
        m_.set_smi_suppression(std::numeric_limits<VirtNs>::max());
    else
        m_.set_smi_suppression(m_.now() + duration);
    trace_.append(m_.now(), "delay", infinite ? "infinite" : std::to_string(duration) + "ns");
}

void Adversary::clock_tamper(const ClockMutation& mut) {
    if (!clocks_) return;
    switch (mut.kind) {
        case ClockMutation::Kind::RtcSetBack:
            clocks_->tamper_rtc_set_back(mut.seconds);
            trace_.append(m_.now(), "clock_tamper", "rtc back " + std::to_string(mut.seconds) + "s");
            break;
        case ClockMutation::Kind::Freeze:
            clocks_->tamper_freeze(mut.source);
            trace_.append(m_.now(), "clock_tamper",
                          std::string("freeze ") + devices::clock_source_name(mut.source));
            break;
        case ClockMutation::Kind::RateMultiply:
            clocks_->tamper_rate(mut.source, mut.rate_num, mut.rate_den);
            trace_.append(m_.now(), "clock_tamper",
                          std::string("rate ") + devices::clock_source_name(mut.source) + " x" +
                              std::to_string(mut.rate_num) + "/" + std::to_string(mut.rate_den));
            break;
    }
}

void Adversary::inject_nic_frame(ByteSpan frame) {
    if (!fabric_) return;
    fabric_->inject(frame);
    trace_.append(m_.now(), "inject_nic_frame", "len=" + std::to_string(frame.size()));
}

// --- script serialization ---

const char* action_kind_name(Action::Kind k) {
    switch (k) {
        case Action::Kind::Snoop: return "snoop";
        case Action::Kind::TamperFrame: return "tamper_frame";
        case Action::Kind::ReplayFrame: return "replay_frame";
        case Action::Kind::DropFrame: return "drop_frame";
        case Action::Kind::Reorder: return "reorder";
        case Action::Kind::FakeSmi: return "fake_smi";
        case Action::Kind::FakeSsvHandshake: return "fake_ssv_handshake";
        case Action::Kind::FakeEnclaveHandshake: return "fake_enclave_handshake";
        case Action::Kind::ClockTamper: return "clock_tamper";
        case Action::Kind::InjectNicFrame: return "inject_nic_frame";
        case Action::Kind::InjectFifoFrame: return "inject_fifo_frame";
        case Action::Kind::Delay: return "delay";
    }
    return "?";
}

const char* outcome_kind_name(ExpectedOutcome::Kind k) {
    switch (k) {
        case ExpectedOutcome::Kind::DetectedAs: return "detected_as";
        case ExpectedOutcome::Kind::DegradedToDoS: return "degraded_to_dos";
        case ExpectedOutcome::Kind::NoEffect: return "no_effect";
    }
    return "?";
}

namespace {

Action::Kind action_kind_from(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(Action::Kind::Delay); ++i)
        if (s == action_kind_name(static_cast<Action::Kind>(i)))
            return static_cast<Action::Kind>(i);
    return Action::Kind::Snoop;
}

json trigger_to_json(const Trigger& t) {
    json j;
    switch (t.kind) {
        case Trigger::Kind::AtTime: j["at_us"] = t.at / kUs; break;
        case Trigger::Kind::OnWindow:
            j["window"] = t.window == channel::Window::PostEnqueuePreSmi ? "post_enqueue"
                          : t.window == channel::Window::PostSmiPreDequeue ? "post_smi"
                                                                           : "poll_tick";
            j["occurrence"] = t.occurrence;
            break;
        case Trigger::Kind::AfterTimeSamples: j["after_samples"] = t.samples; break;
    }
    return j;
}

Trigger trigger_from_json(const json& j) {
    Trigger t;
    if (j.contains("at_us")) {
        t.kind = Trigger::Kind::AtTime;
        t.at = j["at_us"].get<uint64_t>() * kUs;
    } else if (j.contains("window")) {
        t.kind = Trigger::Kind::OnWindow;
        std::string w = j["window"].get<std::string>();
        t.window = w == "post_enqueue" ? channel::Window::PostEnqueuePreSmi
                   : w == "post_smi"   ? channel::Window::PostSmiPreDequeue
                                       : channel::Window::PollTick;
        t.occurrence = j.value("occurrence", 1u);
    } else if (j.contains("after_samples")) {
        t.kind = Trigger::Kind::AfterTimeSamples;
        t.samples = j["after_samples"].get<uint32_t>();
    }
    return t;
}

const char* source_name(devices::ClockSource s) { return devices::clock_source_name(s); }

devices::ClockSource source_from(const std::string& s) {
    using CS = devices::ClockSource;
    if (s == "hpet") return CS::Hpet;
    if (s == "pit") return CS::Pit;
    if (s == "tsc") return CS::Tsc;
    if (s == "apic") return CS::ApicTimer;
    return CS::Rtc;
}

json action_to_json(const Action& a) {
    json j;
    j["op"] = action_kind_name(a.kind);
    j["target_enclave"] = a.target_enclave;
    if (a.kind == Action::Kind::TamperFrame || a.kind == Action::Kind::ReplayFrame ||
        a.kind == Action::Kind::DropFrame || a.kind == Action::Kind::Reorder ||
        a.kind == Action::Kind::InjectFifoFrame || a.kind == Action::Kind::FakeSmi) {
        j["fifo"] = a.fifo == 0 ? "to_ssv" : "from_ssv";
        j["index"] = a.index;
        if (a.kind == Action::Kind::Reorder) j["index2"] = a.index2;
    }
    if (a.kind == Action::Kind::ClockTamper) {
        switch (a.clock.kind) {
            case ClockMutation::Kind::RtcSetBack:
                j["mutation"] = "rtc_set_back";
                j["seconds"] = a.clock.seconds;
                break;
            case ClockMutation::Kind::Freeze:
                j["mutation"] = "freeze";
                j["source"] = source_name(a.clock.source);
                break;
            case ClockMutation::Kind::RateMultiply:
                j["mutation"] = "rate";
                j["source"] = source_name(a.clock.source);
                j["num"] = a.clock.rate_num;
                j["den"] = a.clock.rate_den;
                break;
        }
    }
    if (a.kind == Action::Kind::Delay) {
        if (a.infinite)
            j["infinite"] = true;
        else
            j["duration_us"] = a.duration / kUs;
    }
    return j;
}

Action action_from_json(const json& j) {
    Action a;
    a.kind = action_kind_from(j.value("op", "snoop"));
    a.target_enclave = j.value("target_enclave", 0u);
    if (j.contains("fifo")) a.fifo = j["fifo"] == "to_ssv" ? 0 : 1;
    a.index = j.value("index", 0u);
    a.index2 = j.value("index2", 0u);
    if (j.contains("mutation")) {
        std::string mu = j["mutation"];
        if (mu == "rtc_set_back") {
            a.clock.kind = ClockMutation::Kind::RtcSetBack;
            a.clock.seconds = j.value("seconds", 3600ull);
        } else if (mu == "freeze") {
            a.clock.kind = ClockMutation::Kind::Freeze;
            a.clock.source = source_from(j.value("source", "hpet"));
        } else {
            a.clock.kind = ClockMutation::Kind::RateMultiply;
            a.clock.source = source_from(j.value("source", "tsc"));
            a.clock.rate_num = j.value("num", 2u);
            a.clock.rate_den = j.value("den", 1u);
        }
    }
    a.infinite = j.value("infinite", false);
    if (j.contains("duration_us")) a.duration = j["duration_us"].get<uint64_t>() * kUs;
    return a;
}

}  // namespace

std::string script_to_json(const AttackScript& s) {
    json j;
    j["name"] = s.name;
    json steps = json::array();
    for (const auto& st : s.steps) {
        json step;
        step["trigger"] = trigger_to_json(st.trigger);
        step["action"] = action_to_json(st.action);
        steps.push_back(step);
    }
    j["steps"] = steps;
    json exp;
    exp["kind"] = outcome_kind_name(s.expected.kind);
    if (!s.expected.detected.empty()) exp["detected"] = s.expected.detected;
    j["expected"] = exp;
    return j.dump(2);
}

std::optional<AttackScript> script_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    AttackScript s;
    s.name = j.value("name", "unnamed");
    for (const auto& step : j.value("steps", json::array())) {
        AttackStep st;
        st.trigger = trigger_from_json(step.value("trigger", json::object()));
        st.action = action_from_json(step.value("action", json::object()));
        s.steps.push_back(st);
    }
    auto exp = j.value("expected", json::object());
    std::string kind = exp.value("kind", "no_effect");
    s.expected.kind = kind == "detected_as"        ? ExpectedOutcome::Kind::DetectedAs
                      : kind == "degraded_to_dos" ? ExpectedOutcome::Kind::DegradedToDoS
                                                   : ExpectedOutcome::Kind::NoEffect;
    s.expected.detected = exp.value("detected", "");
    return s;
}

std::vector<AttackScript> builtin_scripts() {
    std::vector<AttackScript> out;
    auto window = [](channel::Window w, uint32_t occ) {
        Trigger t;
        t.kind = Trigger::Kind::OnWindow;
        t.window = w;
        t.occurrence = occ;
        return t;
    };
    auto at_samples = [](uint32_t n) {
        Trigger t;
        t.kind = Trigger::Kind::AfterTimeSamples;
        t.samples = n;
        return t;
    };
    auto at_time = [](VirtNs ns) {
        Trigger t;
        t.kind = Trigger::Kind::AtTime;
        t.at = ns;
        return t;
    };

    {
        AttackScript s;
        s.name = "replay";
        Action a;
        a.kind = Action::Kind::ReplayFrame;
        a.fifo = 1;
        s.steps.push_back({window(channel::Window::PostSmiPreDequeue, 3), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "ReplayOrReorder"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "tamper";
        Action a;
        a.kind = Action::Kind::TamperFrame;
        a.fifo = 1;
        a.index = 0;
        s.steps.push_back({window(channel::Window::PostSmiPreDequeue, 3), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "AuthFail"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "drop";
        Action a;
        a.kind = Action::Kind::DropFrame;
        a.fifo = 1;
        a.index = 0;
        s.steps.push_back({window(channel::Window::PostSmiPreDequeue, 3), a});
        s.expected = {ExpectedOutcome::Kind::DegradedToDoS, ""};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "reorder";
        Action a;
        a.kind = Action::Kind::Reorder;
        a.fifo = 1;
        a.index = 0;
        a.index2 = 1;
        s.steps.push_back({window(channel::Window::PostSmiPreDequeue, 1), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "ReplayOrReorder"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "fake_ssv";
        Action a;
        a.kind = Action::Kind::FakeSsvHandshake;
        s.steps.push_back({at_time(1 * kMs), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "AuthFailSsv"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "fake_enclave";
        Action a;
        a.kind = Action::Kind::FakeEnclaveHandshake;
        s.steps.push_back({at_time(1 * kMs), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "AuthFailEnclave"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "rtc_rollback";
        Action a;
        a.kind = Action::Kind::ClockTamper;
        a.clock = {ClockMutation::Kind::RtcSetBack, devices::ClockSource::Rtc, 3600, 1, 1};
        s.steps.push_back({at_samples(5), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "TimeViolation:rtc"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "hpet_freeze";
        Action a;
        a.kind = Action::Kind::ClockTamper;
        a.clock = {ClockMutation::Kind::Freeze, devices::ClockSource::Hpet, 0, 1, 1};
        s.steps.push_back({at_samples(5), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "TimeViolation:hpet"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "rate_double";
        Action a;
        a.kind = Action::Kind::ClockTamper;
        a.clock = {ClockMutation::Kind::RateMultiply, devices::ClockSource::Tsc, 0, 2, 1};
        s.steps.push_back({at_samples(5), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "TimeViolation:tsc"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "inject_foreign";
        Action a;
        a.kind = Action::Kind::InjectNicFrame;
        s.steps.push_back({at_time(2 * kMs), a});
        s.expected = {ExpectedOutcome::Kind::NoEffect, ""};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "cross_flow";
        Action a;
        a.kind = Action::Kind::InjectFifoFrame;
        a.fifo = 1;
        s.steps.push_back({at_time(2 * kMs), a});
        s.expected = {ExpectedOutcome::Kind::DetectedAs, "DroppedWithCounter"};
        out.push_back(s);
    }
    {
        AttackScript s;
        s.name = "delay_infinite";
        Action a;
        a.kind = Action::Kind::Delay;
        a.infinite = true;
        s.steps.push_back({at_time(1 * kMs), a});
        s.expected = {ExpectedOutcome::Kind::DegradedToDoS, ""};
        out.push_back(s);
    }
    return out;
}

std::optional<AttackScript> find_builtin_script(const std::string& name) {
    for (auto& s : builtin_scripts())
        if (s.name == name) return s;
    return std::nullopt;
}

}  // namespace aurora::adversary
