#include "aurora/ssv.hpp"

#include "aurora/wire.hpp"

namespace aurora::ssv {

using channel::FifoRegion;
using channel::FifoView;
using channel::SealedFrame;
using devices::ClockSource;
using platform::Actor;
using platform::DomainRef;

// --- secure heap ---

Result<SecureHeap::Block, SecureHeap::Err> SecureHeap::alloc(uint32_t n) {
    if (n == 0 || bump_ + n > size_) return Err::OutOfMemory;
    Block b{base_ + bump_, n};
    bump_ += n;
    live_.push_back(b);
    ++metrics_.heap_allocs;
    return b;
}

void SecureHeap::free(const Block& b) {
    for (size_t i = 0; i < live_.size(); ++i) {
        if (live_[i].offset == b.offset && live_[i].len == b.len) {
            live_.erase(live_.begin() + i);
            return;
        }
    }
}

void SecureHeap::reset() {
    live_.clear();
    bump_ = 0;
}

Result<Unit, SecureHeap::Err> SecureHeap::write(const Block& b, uint32_t off, ByteSpan data) {
    if (off + data.size() > b.len) {
        ++metrics_.boundary_violations;
        m_.log_event("heap boundary violation (write suppressed)");
        return Err::BoundaryViolation;
    }
    auto r = m_.write(Actor::ssv(), DomainRef::smram(), b.offset + off, data);
    if (!r.ok()) return Err::BadBlock;
    return Unit{};
}

Result<Bytes, SecureHeap::Err> SecureHeap::read(const Block& b, uint32_t off, uint32_t len) {
    if (off + len > b.len) {
        ++metrics_.boundary_violations;
        return Err::BoundaryViolation;
    }
    auto r = m_.read(Actor::ssv(), DomainRef::smram(), b.offset + off, len);
    if (!r.ok()) return Err::BadBlock;
    return r.value();
}

// --- wire structs ---

Bytes ClockReadingWire::serialize() const {
    Bytes out(57, 0);
    out[0] = present_mask;
    put_u64(out.data() + 1, rtc_seconds);
    out[9] = rtc_read_count;
    out[10] = boundary_observed;
    put_u32(out.data() + 11, boundary_offset_ns);
    put_u64(out.data() + 15, hpet);
    put_u16(out.data() + 23, pit);
    put_u64(out.data() + 25, tsc);
    put_u32(out.data() + 33, apic);
    for (size_t i = 0; i < devices::kClockSourceCount; ++i)
        put_u32(out.data() + 37 + 4 * i, offsets_ns[i]);
    return out;
}

std::optional<ClockReadingWire> ClockReadingWire::parse(ByteSpan raw) {
    if (raw.size() != 57) return std::nullopt;
    ClockReadingWire w;
    w.present_mask = raw[0];
    w.rtc_seconds = get_u64(raw.data() + 1);
    w.rtc_read_count = raw[9];
    w.boundary_observed = raw[10];
    w.boundary_offset_ns = get_u32(raw.data() + 11);
    w.hpet = get_u64(raw.data() + 15);
    w.pit = get_u16(raw.data() + 23);
    w.tsc = get_u64(raw.data() + 25);
    w.apic = get_u32(raw.data() + 33);
    for (size_t i = 0; i < devices::kClockSourceCount; ++i)
        w.offsets_ns[i] = get_u32(raw.data() + 37 + 4 * i);
    return w;
}

Bytes ClockProbeWire::serialize() const {
    Bytes out(41, 0);
    out[0] = present_mask;
    put_u64(out.data() + 1, hpet_period_fs);
    put_u64(out.data() + 9, pit_hz);
    put_u32(out.data() + 17, pit_reload);
    put_u64(out.data() + 21, tsc_hz);
    put_u64(out.data() + 29, apic_tick_hz);
    put_u32(out.data() + 37, apic_init);
    return out;
}

std::optional<ClockProbeWire> ClockProbeWire::parse(ByteSpan raw) {
    if (raw.size() != 41) return std::nullopt;
    ClockProbeWire w;
    w.present_mask = raw[0];
    w.hpet_period_fs = get_u64(raw.data() + 1);
    w.pit_hz = get_u64(raw.data() + 9);
    w.pit_reload = get_u32(raw.data() + 17);
    w.tsc_hz = get_u64(raw.data() + 21);
    w.apic_tick_hz = get_u64(raw.data() + 29);
    w.apic_init = get_u32(raw.data() + 37);
    return w;
}

Bytes NicProbeWire::serialize() const {
    Bytes out(17, 0);
    put_u64(out.data(), mmio_base);
    put_u32(out.data() + 8, ring_len);
    put_u32(out.data() + 12, mtu);
    out[16] = link_up;
    return out;
}

std::optional<NicProbeWire> NicProbeWire::parse(ByteSpan raw) {
    if (raw.size() != 17) return std::nullopt;
    NicProbeWire w;
    w.mmio_base = get_u64(raw.data());
    w.ring_len = get_u32(raw.data() + 8);
    w.mtu = get_u32(raw.data() + 12);
    w.link_up = raw[16];
    return w;
}

std::array<uint8_t, 4> flow_tag_for(const Epid& epid) {
    // option type 0x88 carries the copied flag, length 4, epid low 16 bits
    std::array<uint8_t, 4> tag{0x88, 0x04, 0, 0};
    uint16_t low = epid.low16();
    tag[2] = static_cast<uint8_t>(low >> 8);
    tag[3] = static_cast<uint8_t>(low);
    return tag;
}

// --- SSV ---

Ssv::Ssv(Machine& m, devices::ClockBank& clocks, devices::Nic* nic, Metrics& metrics, Bytes image,
         Config cfg)
    : m_(m), clocks_(clocks), nic_(nic), metrics_(metrics), image_(std::move(image)), cfg_(cfg),
      heap_(m, cfg.heap_base, cfg.heap_size, metrics) {
    DriverSpec clock_drv;
    clock_drv.device_id = static_cast<uint8_t>(DeviceId::Clock);
    clock_drv.probe = [this] { return clock_probe(); };
    clock_drv.read = [this](ByteSpan) { return clock_read(); };
    clock_drv.write = [](ByteSpan) -> Result<Bytes, Status> { return Status::OperationUnsupported; };
    drivers_[clock_drv.device_id] = clock_drv;

    if (nic_) {
        DriverSpec nic_drv;
        nic_drv.device_id = static_cast<uint8_t>(DeviceId::Nic);
        nic_drv.probe = [this] { return nic_probe(); };
        nic_drv.read = [this](ByteSpan p) { return nic_read(p); };
        nic_drv.write = [this](ByteSpan p) { return nic_write(p); };
        drivers_[nic_drv.device_id] = nic_drv;
    }
}

void Ssv::attach() {
    m_.set_smi_handler([this](PendingSmi p) { dispatch_smi(p); });
}

channel::SsvToken Ssv::genuine_token() const {
    return channel::SsvToken{crypto::sha256(image_)};
}

void Ssv::write_key_slot(uint32_t slot, const crypto::Key& key) {
    m_.oob_write(DomainRef::smram(), cfg_.key_table_base + slot * crypto::kKeyLen, key);
}

Result<Unit, ChanErr> Ssv::install_session(uint32_t session_id, uint32_t enclave_id,
                                           const Epid& epid, const crypto::Key& key,
                                           FifoRegion to_ssv, FifoRegion from_ssv) {
    SessionState s;
    s.end.session_id = session_id;
    s.end.epid = epid;
    s.end.key = key;
    s.end.tx_dir = 1;
    s.end.state = channel::SessionState::Active;
    s.enclave_id = enclave_id;
    s.to_ssv_region = to_ssv;
    s.from_ssv_region = from_ssv;
    s.to_ssv = FifoView(&m_, to_ssv, Actor::ssv());
    s.from_ssv = FifoView(&m_, from_ssv, Actor::ssv());
    s.key_slot = next_key_slot_++;
    write_key_slot(s.key_slot, key);
    sessions_[session_id] = s;
    flows_[epid] = FlowEntry{session_id, {}, false, {}, 0};

    if (nic_ && !saved_nic_target_) {
        auto old = m_.redirection(nic_->vector());
        saved_nic_target_ = old.value_or(platform::IrqTarget{platform::IrqTargetKind::Os, 0});
        m_.set_redirection(nic_->vector(), {platform::IrqTargetKind::Ssv, 0});
    }
    m_.log_event("ssv session " + std::to_string(session_id) + " installed");
    return Unit{};
}

Result<Unit, ChanErr> Ssv::rekey_session(uint32_t old_session_id, uint32_t new_session_id,
                                         const crypto::Key& key) {
    auto it = sessions_.find(old_session_id);
    if (it == sessions_.end()) return ChanErr::Closed;
    SessionState s = it->second;
    sessions_.erase(it);
    s.end.session_id = new_session_id;
    s.end.key = key;
    s.end.tx_seq = s.end.rx_seq = 0;
    write_key_slot(s.key_slot, key);
    for (auto& [epid, fl] : flows_)
        if (fl.session_id == old_session_id) fl.session_id = new_session_id;
    sessions_[new_session_id] = s;
    return Unit{};
}

void Ssv::remove_session(uint32_t session_id, channel::SharedAllocator* alloc) {
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return;
    crypto::Key zeros{};
    write_key_slot(it->second.key_slot, zeros);
    if (alloc) {
        alloc->free_pages(it->second.to_ssv_region.base,
                          static_cast<uint32_t>(it->second.to_ssv_region.pages()));
        alloc->free_pages(it->second.from_ssv_region.base,
                          static_cast<uint32_t>(it->second.from_ssv_region.pages()));
    }
    for (auto fit = flows_.begin(); fit != flows_.end();) {
        if (fit->second.session_id == session_id)
            fit = flows_.erase(fit);
        else
            ++fit;
    }
    sessions_.erase(it);
    // disable service when no enclave is requesting: hand the vector back
    if (sessions_.empty() && nic_ && saved_nic_target_) {
        m_.set_redirection(nic_->vector(), *saved_nic_target_);
        saved_nic_target_.reset();
    }
    m_.log_event("ssv session " + std::to_string(session_id) + " removed");
}

Result<std::array<uint8_t, 4>, Ssv::FlowErr> Ssv::register_flow(uint32_t session_id,
                                                                const std::array<uint8_t, 6>& mac,
                                                                uint32_t ipv4) {
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return FlowErr::UnknownSession;
    auto tag = flow_tag_for(it->second.end.epid);
    for (const auto& [epid, fl] : flows_)
        if (fl.tag_set && fl.tag == tag && fl.session_id != session_id)
            return FlowErr::TagCollision;
    auto& fl = flows_[it->second.end.epid];
    fl.session_id = session_id;
    fl.tag = tag;
    fl.tag_set = true;
    fl.mac = mac;
    fl.ipv4 = ipv4;
    return tag;
}

void Ssv::stage_plaintext(ByteSpan plain) {
    size_t n = std::min<size_t>(plain.size(), cfg_.scratch_size);
    m_.write(Actor::ssv(), DomainRef::smram(), cfg_.scratch_base, plain.first(n));
}

void Ssv::zero_scratch() {
    Bytes zeros(cfg_.scratch_size, 0);
    m_.write(Actor::ssv(), DomainRef::smram(), cfg_.scratch_base, zeros);
}

void Ssv::dispatch_smi(PendingSmi) {
    if (in_dispatch_) return;
    in_dispatch_ = true;
    hygiene_.device_ctx_restored = true;
    ++hygiene_.dispatches;

    while (auto p = m_.take_pending()) {
        if (p->kind == PendingSmi::Kind::Software)
            handle_software_smi();
        else
            handle_device_smi(p->vector);
    }

    post_dispatch();
    in_dispatch_ = false;
}

void Ssv::post_dispatch() {
    // drivers must have freed their blocks; reset is the unconditional backstop
    hygiene_.heap_live_empty = heap_.live_empty();
    heap_.reset();
    zero_scratch();
    Bytes scratch = m_.oob_read(DomainRef::smram(), cfg_.scratch_base, cfg_.scratch_size);
    hygiene_.scratch_zeroed =
        std::all_of(scratch.begin(), scratch.end(), [](uint8_t b) { return b == 0; });
    if (post_hook_) post_hook_(hygiene_);
    m_.rsm();
}

void Ssv::handle_software_smi() {
    for (auto& [id, s] : sessions_) service_session_fifo(s);
}

void Ssv::service_session_fifo(SessionState& s) {
    const auto& costs = m_.costs();
    while (true) {
        auto got = s.to_ssv.dequeue();
        if (!got.ok() || !got.value().has_value()) break;
        m_.charge_step(platform::step::kCopyToSmram, costs.copy_to_smram);
        m_.charge_step(platform::step::kSmramDecrypt, costs.smram_decrypt);
        auto opened = channel::open(s.end, *got.value());
        if (!opened.ok()) {
            if (opened.error() == ChanErr::ReplayOrReorder)
                ++metrics_.ssv_replay_drops;
            else
                ++metrics_.ssv_auth_drops;
            m_.log_event("ssv drop " + std::string(channel::chan_err_name(opened.error())));
            continue;
        }
        ++metrics_.frames_opened;
        Bytes staged = opened.value().serialize();
        stage_plaintext(staged);

        VirtNs svc_start = m_.now();
        PlainFrame resp = service_request(opened.value());
        m_.trace_step(opened.value().device == static_cast<uint8_t>(DeviceId::Clock)
                          ? platform::step::kClockService
                          : platform::step::kNicService,
                      m_.now() - svc_start);

        m_.charge_step(platform::step::kSmramEncrypt, costs.smram_encrypt);
        stage_plaintext(resp.serialize());
        auto sealed = channel::seal(s.end, std::move(resp));
        if (!sealed.ok()) continue;
        ++metrics_.frames_sealed;
        m_.charge_step(platform::step::kCopyToShared2, costs.copy_from_smram);
        auto q = s.from_ssv.enqueue(sealed.value());
        if (!q.ok()) {
            ++metrics_.ssv_response_drops;
            m_.log_event("ssv response dropped (fifo full)");
        }
    }
}

PlainFrame Ssv::service_request(const PlainFrame& req) {
    PlainFrame resp;
    resp.device = req.device;
    resp.operation = req.operation;
    resp.status = static_cast<uint8_t>(Status::Ok);

    auto it = drivers_.find(req.device);
    if (it == drivers_.end()) {
        resp.status = static_cast<uint8_t>(Status::UnknownDevice);
        return resp;
    }
    if (req.operation > static_cast<uint8_t>(OpCode::Write)) {
        resp.status = static_cast<uint8_t>(Status::OperationUnsupported);
        return resp;
    }

    Result<Bytes, Status> r = Status::DriverError;
    switch (static_cast<OpCode>(req.operation)) {
        case OpCode::Probe: r = it->second.probe(); break;
        case OpCode::Read: r = it->second.read(req.payload); break;
        case OpCode::Write: r = it->second.write(req.payload); break;
    }
    if (r.ok())
        resp.payload = std::move(r.value());
    else
        resp.status = static_cast<uint8_t>(r.error());
    return resp;
}

Result<Bytes, Status> Ssv::clock_probe() {
    ClockProbeWire w;
    const auto& c = clocks_.config();
    for (size_t i = 0; i < devices::kClockSourceCount; ++i)
        if (c.present[i]) w.present_mask |= static_cast<uint8_t>(1u << i);
    w.hpet_period_fs = c.hpet_period_fs;
    w.pit_hz = c.pit_hz;
    w.pit_reload = c.pit_reload;
    w.tsc_hz = c.tsc_hz;
    w.apic_tick_hz = c.apic_tick_hz();
    w.apic_init = c.apic_init;
    return w.serialize();
}

Result<Bytes, Status> Ssv::clock_read() {
    const auto& costs = m_.costs();
    const auto& c = clocks_.config();
    ClockReadingWire w;
    for (size_t i = 0; i < devices::kClockSourceCount; ++i)
        if (c.present[i]) w.present_mask |= static_cast<uint8_t>(1u << i);

    bool tsc_ok = clocks_.present(ClockSource::Tsc);
    uint64_t tsc_base = 0;
    auto tsc_offset_ns = [&]() -> uint32_t {
        if (!tsc_ok) return 0;
        auto t = clocks_.read_counter(ClockSource::Tsc);
        if (!t.ok()) return 0;
        return static_cast<uint32_t>(ticks_to_ns(t.value() - tsc_base, c.tsc_hz));
    };
    if (tsc_ok) {
        m_.advance(costs.tsc_read);
        auto t = clocks_.read_counter(ClockSource::Tsc);
        if (!t.ok()) return Status::DriverError;
        tsc_base = t.value();
    }

    if (clocks_.present(ClockSource::Rtc)) {
        m_.advance(costs.rtc_read);
        auto r1 = clocks_.read_rtc();
        if (!r1.ok()) return Status::DriverError;
        ++metrics_.rtc_reads;
        if (r1.value().update_in_progress) {
            // spin out the update window, then take the consistent read
            m_.advance(clocks_.rtc_uip_remaining());
            w.boundary_observed = 1;
            w.boundary_offset_ns = tsc_offset_ns();
            m_.advance(costs.rtc_read);
            auto r2 = clocks_.read_rtc();
            if (!r2.ok()) return Status::DriverError;
            ++metrics_.rtc_reads;
            ++metrics_.rtc_double_reads;
            w.rtc_read_count = 2;
            w.rtc_seconds = r2.value().seconds;
        } else {
            w.rtc_seconds = r1.value().seconds;
        }
        w.offsets_ns[0] = tsc_offset_ns();
    }
    if (clocks_.present(ClockSource::Hpet)) {
        m_.advance(costs.hpet_read);
        auto v = clocks_.read_counter(ClockSource::Hpet);
        if (!v.ok()) return Status::DriverError;
        w.hpet = v.value();
        w.offsets_ns[1] = tsc_offset_ns();
    }
    if (clocks_.present(ClockSource::Pit)) {
        m_.advance(costs.pit_read);
        auto v = clocks_.read_counter(ClockSource::Pit);
        if (!v.ok()) return Status::DriverError;
        w.pit = static_cast<uint16_t>(v.value());
        w.offsets_ns[2] = tsc_offset_ns();
    }
    if (tsc_ok) {
        m_.advance(costs.tsc_read);
        auto v = clocks_.read_counter(ClockSource::Tsc);
        if (!v.ok()) return Status::DriverError;
        w.tsc = v.value();
        w.offsets_ns[3] = tsc_offset_ns();
    }
    if (clocks_.present(ClockSource::ApicTimer)) {
        m_.advance(costs.apic_read);
        auto v = clocks_.read_counter(ClockSource::ApicTimer);
        if (!v.ok()) return Status::DriverError;
        w.apic = static_cast<uint32_t>(v.value());
        w.offsets_ns[4] = tsc_offset_ns();
    }
    m_.advance(costs.clock_assemble);

    Bytes payload = w.serialize();
    auto blk = heap_.alloc(static_cast<uint32_t>(payload.size()));
    if (!blk.ok()) return Status::DriverError;
    heap_.write(blk.value(), 0, payload);
    auto back = heap_.read(blk.value(), 0, static_cast<uint32_t>(payload.size()));
    heap_.free(blk.value());
    if (!back.ok()) return Status::DriverError;
    return back.value();
}

Result<Bytes, Status> Ssv::nic_probe() {
    if (!nic_) return Status::UnknownDevice;
    NicProbeWire w;
    w.mmio_base = nic_->mmio_base();
    w.ring_len = static_cast<uint32_t>(nic_->tx_ring().size());
    w.mtu = static_cast<uint32_t>(nic_->mtu());
    w.link_up = 1;
    return w.serialize();
}

Result<Bytes, Status> Ssv::nic_read(ByteSpan) {
    if (!nic_) return Status::UnknownDevice;
    size_t moved = classify_rx();
    Bytes out(4);
    put_u32(out.data(), static_cast<uint32_t>(moved));
    return out;
}

Result<Bytes, Status> Ssv::nic_write(ByteSpan frame) {
    if (!nic_) return Status::UnknownDevice;
    const auto& costs = m_.costs();
    if (frame.size() > devices::kMaxFrame) return Status::DriverError;

    auto snap = nic_->snapshot_regs();
    if (!snap.ok()) return Status::DriverError;
    nic_->write_reg_irq_enable(0);  // suspend while we own the device
    nic_->latch_tx_ring_counter();
    m_.advance(costs.nic_ctx_save_restore);

    auto blk = heap_.alloc(static_cast<uint32_t>(frame.size()));
    if (!blk.ok()) {
        nic_->restore_regs(snap.value());
        return Status::DriverError;
    }
    heap_.write(blk.value(), 0, frame);
    auto staged = heap_.read(blk.value(), 0, static_cast<uint32_t>(frame.size()));
    heap_.free(blk.value());
    if (!staged.ok()) {
        nic_->restore_regs(snap.value());
        return Status::DriverError;
    }

    auto r = nic_->host_tx(staged.value());
    m_.advance(costs.nic_tx_action);
    nic_->ack_tx();  // consume the completion we just triggered
    nic_->restore_regs(snap.value());
    auto post = nic_->snapshot_regs();
    hygiene_.device_ctx_restored &=
        post.ok() && post.value().config_equal(snap.value());

    if (!r.ok()) {
        return Status::DriverError;
    }
    return Bytes{};
}

Ssv::SessionState* Ssv::session_for_frame(ByteSpan frame) {
    auto ev = wire::parse_ether(frame);
    if (!ev) return nullptr;
    if (ev->ethertype == wire::kEtherIpv4) {
        auto tag = wire::extract_flow_tag(frame);
        if (!tag) return nullptr;
        for (const auto& [epid, fl] : flows_) {
            if (fl.tag_set && fl.tag == *tag) {
                auto it = sessions_.find(fl.session_id);
                return it == sessions_.end() ? nullptr : &it->second;
            }
        }
        return nullptr;
    }
    if (ev->ethertype == wire::kEtherArp) {
        auto arp = wire::parse_arp(ev->payload);
        if (!arp) return nullptr;
        for (const auto& [epid, fl] : flows_) {
            if (!fl.tag_set) continue;
            bool unicast_match = !ev->dst.is_broadcast() && ev->dst.b == fl.mac;
            bool target_match = arp->target_ip == fl.ipv4;
            if (unicast_match || target_match) {
                auto it = sessions_.find(fl.session_id);
                return it == sessions_.end() ? nullptr : &it->second;
            }
        }
    }
    return nullptr;
}

size_t Ssv::classify_rx() {
    if (!nic_) return 0;
    m_.advance(m_.costs().nic_rx_scan);
    auto scan = nic_->rx_scan();
    if (!scan.ok()) return 0;
    size_t moved = 0;
    bool os_path = false;
    for (auto& [slot, frame] : scan.value()) {
        SessionState* s = session_for_frame(frame);
        nic_->rx_consume(slot);
        if (!s) {
            os_rx_.push_back(frame);
            ++metrics_.frames_to_os_path;
            os_path = true;
            continue;
        }
        PlainFrame ev;
        ev.device = static_cast<uint8_t>(DeviceId::Nic);
        ev.operation = static_cast<uint8_t>(OpCode::Read);
        ev.status = static_cast<uint8_t>(Status::Event);
        ev.payload = frame;
        stage_plaintext(ev.payload);
        auto sealed = channel::seal(s->end, std::move(ev));
        if (!sealed.ok()) continue;
        ++metrics_.frames_sealed;
        auto q = s->from_ssv.enqueue(sealed.value());
        if (!q.ok()) {
            ++metrics_.ssv_response_drops;
            continue;
        }
        ++metrics_.frames_to_enclaves;
        ++moved;
        if (cfg_.notify_mode) m_.push_notify(s->enclave_id);
    }
    if (os_path) m_.deliver_os_irq(nic_->vector());
    return moved;
}

void Ssv::handle_device_smi(uint8_t vector) {
    if (nic_ && vector == nic_->vector()) {
        nic_->ack_irq();
        classify_rx();
        return;
    }
    // not an Aurora-managed device: re-deliver unchanged
    m_.deliver_os_irq(vector);
}

std::optional<Bytes> Ssv::pop_os_rx() {
    if (os_rx_.empty()) return std::nullopt;
    Bytes f = std::move(os_rx_.front());
    os_rx_.pop_front();
    return f;
}

}  // namespace aurora::ssv
