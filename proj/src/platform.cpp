#include "aurora/platform.hpp"

#include <algorithm>

namespace aurora::platform {

std::string Actor::label() const {
    switch (kind) {
        case ActorKind::Os: return "os";
        case ActorKind::Adversary: return "adversary";
        case ActorKind::Ssv: return "ssv";
        case ActorKind::Enclave: return "enclave" + std::to_string(id);
        case ActorKind::Device: return "device" + std::to_string(id);
    }
    return "?";
}

std::string DomainRef::label() const {
    switch (kind) {
        case DomainKind::Smram: return "smram";
        case DomainKind::Epc: return "epc" + std::to_string(enclave);
        case DomainKind::SharedRam: return "shared";
        case DomainKind::UntrustedRam: return "untrusted";
    }
    return "?";
}

const char* fault_name(FaultKind k) {
    switch (k) {
        case FaultKind::AccessViolation: return "AccessViolation";
        case FaultKind::OutOfBounds: return "OutOfBounds";
        case FaultKind::Reentrancy: return "Reentrancy";
        case FaultKind::NotInSmm: return "NotInSmm";
        case FaultKind::UnknownVector: return "UnknownVector";
    }
    return "?";
}

Machine::Machine(Config cfg)
    : cfg_(cfg),
      smram_(cfg.smram_size, 0),
      shared_(cfg.shared_size, 0),
      untrusted_(cfg.untrusted_size, 0) {}

void Machine::add_epc(uint32_t enclave_id, size_t size) {
    epcs_.emplace(enclave_id, Bytes(size, 0));
}

size_t Machine::domain_size(DomainRef d) const {
    const Bytes* s = storage(d);
    return s ? s->size() : 0;
}

Bytes* Machine::storage(DomainRef d) {
    switch (d.kind) {
        case DomainKind::Smram: return &smram_;
        case DomainKind::SharedRam: return &shared_;
        case DomainKind::UntrustedRam: return &untrusted_;
        case DomainKind::Epc: {
            auto it = epcs_.find(d.enclave);
            return it == epcs_.end() ? nullptr : &it->second;
        }
    }
    return nullptr;
}

const Bytes* Machine::storage(DomainRef d) const {
    return const_cast<Machine*>(this)->storage(d);
}

// The isolation rule table. SMRAM is SSV-in-SMM only; EPC belongs to its
// enclave alone; shared RAM is open to everyone; untrusted RAM is open to
// everything except the SSV. Software actors are paused while the machine
// is in SMM; devices are hardware and act at any time.
std::optional<FaultKind> Machine::permission(Actor actor, DomainRef d) const {
    switch (d.kind) {
        case DomainKind::Smram:
            if (actor.kind == ActorKind::Ssv && smm_) return std::nullopt;
            return FaultKind::AccessViolation;
        case DomainKind::Epc:
            if (actor.kind == ActorKind::Enclave && actor.id == d.enclave && !smm_ &&
                ctx_ == Context::enclave_ctx(d.enclave))
                return std::nullopt;
            return FaultKind::AccessViolation;
        case DomainKind::SharedRam:
            if (actor.kind == ActorKind::Device) return std::nullopt;
            if (actor.kind == ActorKind::Ssv) return smm_ ? std::nullopt : std::optional(FaultKind::AccessViolation);
            return smm_ ? std::optional(FaultKind::AccessViolation) : std::nullopt;
        case DomainKind::UntrustedRam:
            if (actor.kind == ActorKind::Device) return std::nullopt;
            if (actor.kind == ActorKind::Ssv) return FaultKind::AccessViolation;
            return smm_ ? std::optional(FaultKind::AccessViolation) : std::nullopt;
    }
    return FaultKind::AccessViolation;
}

Result<Unit, Fault> Machine::fault(FaultKind k, std::string detail) {
    ++fault_count_;
    log_event("fault " + std::string(fault_name(k)) + " " + detail);
    return Fault{k, std::move(detail)};
}

Result<Bytes, Fault> Machine::read(Actor actor, DomainRef d, size_t offset, size_t len) {
    const Bytes* s = storage(d);
    if (!s) {
        auto f = fault(FaultKind::AccessViolation, actor.label() + " read " + d.label() + " (absent)");
        return f.error();
    }
    if (auto deny = permission(actor, d)) {
        auto f = fault(*deny, actor.label() + " read " + d.label());
        return f.error();
    }
    if (offset + len > s->size()) {
        auto f = fault(FaultKind::OutOfBounds, actor.label() + " read " + d.label());
        return f.error();
    }
    return Bytes(s->begin() + offset, s->begin() + offset + len);
}

Result<Unit, Fault> Machine::write(Actor actor, DomainRef d, size_t offset, ByteSpan data) {
    Bytes* s = storage(d);
    if (!s) return fault(FaultKind::AccessViolation, actor.label() + " write " + d.label() + " (absent)");
    if (auto deny = permission(actor, d))
        return fault(*deny, actor.label() + " write " + d.label());
    if (offset + data.size() > s->size())
        return fault(FaultKind::OutOfBounds, actor.label() + " write " + d.label());
    std::copy(data.begin(), data.end(), s->begin() + offset);
    AccessRecord rec{actor, d, offset, data.size(), AccessOp::Write, true};
    for (auto& o : write_observers_) o(rec, data);
    return Unit{};
}

void Machine::oob_write(DomainRef d, size_t offset, ByteSpan data) {
    Bytes* s = storage(d);
    if (!s || offset + data.size() > s->size()) return;
    std::copy(data.begin(), data.end(), s->begin() + offset);
}

Bytes Machine::oob_read(DomainRef d, size_t offset, size_t len) const {
    const Bytes* s = storage(d);
    if (!s || offset + len > s->size()) return {};
    return Bytes(s->begin() + offset, s->begin() + offset + len);
}

ByteSpan Machine::domain_view(DomainRef d) const {
    const Bytes* s = storage(d);
    return s ? ByteSpan(s->data(), s->size()) : ByteSpan{};
}

Result<Unit, Fault> Machine::trigger_smi(PendingSmi source) {
    if (smm_) return fault(FaultKind::Reentrancy, "trigger_smi while in SMM");
    if (suppress_until_) {
        ++suppressed_smis_;
        suppressed_queue_.push_back(source);
        log_event("smi suppressed");
        return Unit{};
    }
    saved_ = SavedContext{ctx_, cpu_context_};
    smm_ = true;
    ++smi_count_;
    pending_.push_back(source);
    charge_step(step::kSwitchToSmm, cfg_.costs.smm_switch);
    log_event("smi enter");
    if (smi_handler_) smi_handler_(source);
    return Unit{};
}

Result<Unit, Fault> Machine::rsm() {
    if (!smm_) return fault(FaultKind::NotInSmm, "rsm in protected mode");
    charge_step(step::kReturnToSgx, cfg_.costs.rsm_return);
    ctx_ = saved_->ctx;
    cpu_context_ = saved_->cpu;
    saved_.reset();
    smm_ = false;
    pending_.clear();
    log_event("rsm");
    return Unit{};
}

std::optional<PendingSmi> Machine::take_pending() {
    if (pending_.empty()) return std::nullopt;
    PendingSmi p = pending_.front();
    pending_.pop_front();
    return p;
}

void Machine::set_redirection(uint8_t vector, IrqTarget target) {
    redirection_[vector] = target;
}

std::optional<IrqTarget> Machine::redirection(uint8_t vector) const {
    auto it = redirection_.find(vector);
    if (it == redirection_.end()) return std::nullopt;
    return it->second;
}

Result<Unit, Fault> Machine::raise_interrupt(uint8_t vector) {
    auto it = redirection_.find(vector);
    if (it == redirection_.end())
        return fault(FaultKind::UnknownVector, "vector " + std::to_string(vector));
    switch (it->second.kind) {
        case IrqTargetKind::Ssv:
            log_event("irq " + std::to_string(vector) + " -> ssv");
            if (smm_) {
                pending_.push_back(PendingSmi::device(vector));
                return Unit{};
            }
            return trigger_smi(PendingSmi::device(vector));
        case IrqTargetKind::Os:
            os_irqs_.push_back(vector);
            log_event("irq " + std::to_string(vector) + " -> os");
            return Unit{};
        case IrqTargetKind::EnclaveNotify:
            push_notify(it->second.enclave);
            log_event("irq " + std::to_string(vector) + " -> enclave" +
                      std::to_string(it->second.enclave));
            return Unit{};
    }
    return Unit{};
}

void Machine::deliver_os_irq(uint8_t vector) {
    os_irqs_.push_back(vector);
    log_event("irq " + std::to_string(vector) + " -> os (forwarded)");
}

std::optional<uint8_t> Machine::pop_os_irq() {
    if (os_irqs_.empty()) return std::nullopt;
    uint8_t v = os_irqs_.front();
    os_irqs_.pop_front();
    return v;
}

void Machine::push_notify(uint32_t enclave) {
    notify_[enclave].push_back(1);
}

bool Machine::pop_notify(uint32_t enclave) {
    auto it = notify_.find(enclave);
    if (it == notify_.end() || it->second.empty()) return false;
    it->second.pop_front();
    return true;
}

size_t Machine::notify_count(uint32_t enclave) const {
    auto it = notify_.find(enclave);
    return it == notify_.end() ? 0 : it->second.size();
}

void Machine::advance(VirtNs ns) {
    vt_ += ns;
    if (in_advance_) return;  // hooks may advance time themselves
    in_advance_ = true;
    for (auto& h : advance_hooks_) h(vt_);
    // release suppressed SMIs whose delay expired
    if (suppress_until_ && vt_ >= *suppress_until_) {
        suppress_until_.reset();
        auto queued = std::move(suppressed_queue_);
        suppressed_queue_.clear();
        for (auto& p : queued)
            if (!smm_) trigger_smi(p);
    }
    in_advance_ = false;
}

void Machine::charge_step(const char* label, VirtNs cost) {
    advance(cost);
    trace_step(label, cost);
}

void Machine::set_smi_suppression(VirtNs release_at) {
    suppress_until_ = release_at;
}

void Machine::clear_smi_suppression() {
    suppress_until_.reset();
}

void Machine::trace_step(std::string label, VirtNs cost) {
    trace_.push_back(TraceEvent{vt_, std::move(label), cost});
}

void Machine::log_event(const std::string& line) {
    event_log_ += std::to_string(vt_);
    event_log_ += ' ';
    event_log_ += line;
    event_log_ += '\n';
}

}  // namespace aurora::platform
