#include "aurora/channel.hpp"

#include "aurora/ssv.hpp"

#include <algorithm>

namespace aurora::channel {

const char* chan_err_name(ChanErr e) {
    switch (e) {
        case ChanErr::AuthFail: return "AuthFail";
        case ChanErr::ReplayOrReorder: return "ReplayOrReorder";
        case ChanErr::Closed: return "Closed";
        case ChanErr::FifoFull: return "FifoFull";
        case ChanErr::Timeout: return "Timeout";
        case ChanErr::PayloadTooLarge: return "PayloadTooLarge";
        case ChanErr::AuthFailEnclave: return "AuthFailEnclave";
        case ChanErr::AuthFailSsv: return "AuthFailSsv";
        case ChanErr::SharedMemUnavailable: return "SharedMemUnavailable";
        case ChanErr::PlatformFault: return "PlatformFault";
        case ChanErr::DriverError: return "DriverError";
    }
    return "?";
}

Bytes PlainFrame::serialize() const {
    Bytes out(kCipherSize, 0);
    put_u32(out.data(), session_id);
    put_u64(out.data() + 4, seq);
    out[12] = device;
    out[13] = operation;
    out[14] = status;
    put_u16(out.data() + 15, static_cast<uint16_t>(payload.size()));
    std::copy(payload.begin(), payload.end(), out.begin() + kHeaderSize);
    return out;
}

std::optional<PlainFrame> PlainFrame::parse(ByteSpan raw) {
    if (raw.size() != kCipherSize) return std::nullopt;
    PlainFrame f;
    f.session_id = get_u32(raw.data());
    f.seq = get_u64(raw.data() + 4);
    f.device = raw[12];
    f.operation = raw[13];
    f.status = raw[14];
    uint16_t len = get_u16(raw.data() + 15);
    if (len > kMaxPayload) return std::nullopt;
    f.payload.assign(raw.begin() + kHeaderSize, raw.begin() + kHeaderSize + len);
    return f;
}

crypto::Nonce make_nonce(uint8_t direction, uint64_t seq) {
    crypto::Nonce n{};
    n[0] = direction;
    put_u64(n.data() + 4, seq);
    return n;
}

Result<SealedFrame, ChanErr> seal(SessionEnd& end, PlainFrame frame) {
    if (end.state != SessionState::Active) return ChanErr::Closed;
    if (frame.payload.size() > kMaxPayload) return ChanErr::PayloadTooLarge;
    frame.session_id = end.session_id;
    frame.seq = end.tx_seq++;
    Bytes plain = frame.serialize();
    crypto::Tag tag;
    crypto::Nonce nonce = make_nonce(end.tx_dir, frame.seq);
    Bytes cipher = crypto::aes256gcm_encrypt(end.key, nonce, plain, {}, tag);
    SealedFrame out;
    std::copy(nonce.begin(), nonce.end(), out.bytes.begin());
    std::copy(cipher.begin(), cipher.end(), out.bytes.begin() + crypto::kNonceLen);
    std::copy(tag.begin(), tag.end(), out.bytes.begin() + crypto::kNonceLen + kCipherSize);
    return out;
}

Result<PlainFrame, ChanErr> open(SessionEnd& end, const SealedFrame& frame) {
    if (end.state != SessionState::Active) return ChanErr::Closed;
    uint8_t rx_dir = end.tx_dir ^ 1;
    crypto::Nonce nonce;
    std::copy(frame.bytes.begin(), frame.bytes.begin() + crypto::kNonceLen, nonce.begin());
    crypto::Tag tag;
    std::copy(frame.bytes.begin() + crypto::kNonceLen + kCipherSize, frame.bytes.end(), tag.begin());
    Bytes plain;
    ByteSpan cipher(frame.bytes.data() + crypto::kNonceLen, kCipherSize);
    if (!crypto::aes256gcm_decrypt(end.key, nonce, cipher, {}, tag, plain))
        return ChanErr::AuthFail;
    auto parsed = PlainFrame::parse(plain);
    if (!parsed) return ChanErr::AuthFail;
    if (nonce[0] != rx_dir || parsed->session_id != end.session_id) return ChanErr::AuthFail;
    if (parsed->seq != end.rx_seq || get_u64(nonce.data() + 4) != parsed->seq)
        return ChanErr::ReplayOrReorder;
    ++end.rx_seq;
    return *parsed;
}

bool open_raw(const crypto::Key& key, uint8_t direction, uint64_t seq,
              const SealedFrame& frame, PlainFrame& out) {
    crypto::Nonce nonce;
    std::copy(frame.bytes.begin(), frame.bytes.begin() + crypto::kNonceLen, nonce.begin());
    if (nonce[0] != direction || get_u64(nonce.data() + 4) != seq) return false;
    crypto::Tag tag;
    std::copy(frame.bytes.begin() + crypto::kNonceLen + kCipherSize, frame.bytes.end(), tag.begin());
    Bytes plain;
    ByteSpan cipher(frame.bytes.data() + crypto::kNonceLen, kCipherSize);
    if (!crypto::aes256gcm_decrypt(key, nonce, cipher, {}, tag, plain)) return false;
    auto parsed = PlainFrame::parse(plain);
    if (!parsed) return false;
    out = *parsed;
    return true;
}

// --- FIFO over SharedRam ---

void FifoView::init_control() {
    Bytes ctrl(12, 0);
    put_u32(ctrl.data() + 8, region_.capacity);
    m_->write(actor_, DomainRef::shared(), region_.base, ctrl);
}

std::optional<std::pair<uint32_t, uint32_t>> FifoView::load_indices() const {
    auto r = m_->read(actor_, DomainRef::shared(), region_.base, 8);
    if (!r.ok()) return std::nullopt;
    return std::pair{get_u32(r.value().data()), get_u32(r.value().data() + 4)};
}

Result<Unit, ChanErr> FifoView::enqueue(const SealedFrame& frame) {
    auto idx = load_indices();
    if (!idx) return ChanErr::PlatformFault;
    auto [p, c] = *idx;
    if (p - c >= region_.capacity) return ChanErr::FifoFull;
    auto w = m_->write(actor_, DomainRef::shared(), region_.slot_offset(p), frame.bytes);
    if (!w.ok()) return ChanErr::PlatformFault;
    uint8_t pv[4];
    put_u32(pv, p + 1);
    m_->write(actor_, DomainRef::shared(), region_.base, ByteSpan(pv, 4));
    return Unit{};
}

Result<std::optional<SealedFrame>, ChanErr> FifoView::dequeue() {
    auto idx = load_indices();
    if (!idx) return ChanErr::PlatformFault;
    auto [p, c] = *idx;
    if (p == c) return std::optional<SealedFrame>{};
    if (p - c > region_.capacity) {
        // impossible index state: a tampered control page; discard everything
        corruption_drops_ += region_.capacity;
        uint8_t cv[4];
        put_u32(cv, p);
        m_->write(actor_, DomainRef::shared(), region_.base + 4, ByteSpan(cv, 4));
        return std::optional<SealedFrame>{};
    }
    auto r = m_->read(actor_, DomainRef::shared(), region_.slot_offset(c), kSealedSize);
    if (!r.ok()) return ChanErr::PlatformFault;
    SealedFrame f;
    std::copy(r.value().begin(), r.value().end(), f.bytes.begin());
    uint8_t cv[4];
    put_u32(cv, c + 1);
    m_->write(actor_, DomainRef::shared(), region_.base + 4, ByteSpan(cv, 4));
    return std::optional<SealedFrame>{f};
}

size_t FifoView::pending() const {
    auto idx = load_indices();
    if (!idx) return 0;
    auto [p, c] = *idx;
    uint32_t n = p - c;
    return n > region_.capacity ? 0 : n;
}

std::optional<uint32_t> SharedAllocator::alloc_pages(uint32_t n) {
    for (size_t i = 0; i < free_.size(); ++i) {
        if (free_[i].count >= n) {
            uint32_t page = free_[i].page;
            free_[i].page += n;
            free_[i].count -= n;
            if (free_[i].count == 0) free_.erase(free_.begin() + i);
            return page * static_cast<uint32_t>(kPageSize);
        }
    }
    return std::nullopt;
}

void SharedAllocator::free_pages(uint32_t base, uint32_t n) {
    Block blk{base / static_cast<uint32_t>(kPageSize), n};
    auto pos = std::lower_bound(free_.begin(), free_.end(), blk,
                                [](const Block& a, const Block& b) { return a.page < b.page; });
    pos = free_.insert(pos, blk);
    // merge with neighbours
    size_t i = pos - free_.begin();
    if (i + 1 < free_.size() && free_[i].page + free_[i].count == free_[i + 1].page) {
        free_[i].count += free_[i + 1].count;
        free_.erase(free_.begin() + i + 1);
    }
    if (i > 0 && free_[i - 1].page + free_[i - 1].count == free_[i].page) {
        free_[i - 1].count += free_[i].count;
        free_.erase(free_.begin() + i);
    }
}

// --- certificate authority ---

void CertificateAuthority::register_enclave(const EnclaveCredential& cred) {
    registry_[cred.epid] = cred.measurement;
}

void CertificateAuthority::set_ssv_image(ByteSpan image) {
    genuine_ssv_hash_ = crypto::sha256(image);
}

Result<BrokeredSession, ChanErr> CertificateAuthority::broker(const EnclaveCredential& cred,
                                                              const SsvToken& token) {
    auto it = registry_.find(cred.epid);
    if (it == registry_.end() || it->second != cred.measurement)
        return ChanErr::AuthFailEnclave;
    if (token.image_hash != genuine_ssv_hash_) return ChanErr::AuthFailSsv;
    BrokeredSession s;
    s.session_id = next_session_id_++;
    rng_.fill(s.key.data(), s.key.size());
    return s;
}

// --- enclave endpoint ---

EnclaveEndpoint::EnclaveEndpoint(Machine& m, uint32_t enclave_id, Epid epid, Metrics& metrics)
    : m_(m), enclave_id_(enclave_id), epid_(epid), metrics_(metrics) {
    end_.epid = epid;
    end_.tx_dir = 0;
    timeout_ = m.costs().response_timeout;
}

Result<Unit, ChanErr> EnclaveEndpoint::establish(const EnclaveCredential& cred,
                                                 const SsvToken& token, CertificateAuthority& ca,
                                                 ssv::Ssv& ssv, SharedAllocator& alloc,
                                                 uint32_t fifo_capacity) {
    auto brokered = ca.broker(cred, token);
    if (!brokered.ok()) return brokered.error();

    fifo_capacity_ = fifo_capacity;
    alloc_for_teardown_ = &alloc;
    uint32_t pages = fifo_capacity + 1;
    auto to_base = alloc.alloc_pages(pages);
    auto from_base = alloc.alloc_pages(pages);
    if (!to_base || !from_base) {
        if (to_base) alloc.free_pages(*to_base, pages);
        return ChanErr::SharedMemUnavailable;
    }
    to_ssv_region_ = FifoRegion{*to_base, fifo_capacity};
    from_ssv_region_ = FifoRegion{*from_base, fifo_capacity};
    to_ssv_ = FifoView(&m_, to_ssv_region_, Actor::enclave(enclave_id_));
    from_ssv_ = FifoView(&m_, from_ssv_region_, Actor::enclave(enclave_id_));
    to_ssv_.init_control();
    from_ssv_.init_control();

    end_.session_id = brokered.value().session_id;
    end_.key = brokered.value().key;
    end_.tx_seq = end_.rx_seq = 0;
    end_.state = SessionState::Active;
    // the modeled out-of-band delivery: key lands in this enclave's EPC
    m_.oob_write(DomainRef::epc(enclave_id_), 0, end_.key);

    auto inst = ssv.install_session(end_.session_id, enclave_id_, epid_, end_.key,
                                    to_ssv_region_, from_ssv_region_);
    if (!inst.ok()) {
        end_.state = SessionState::Closed;
        return inst.error();
    }
    return Unit{};
}

Result<Unit, ChanErr> EnclaveEndpoint::reset(const EnclaveCredential& cred,
                                             CertificateAuthority& ca, ssv::Ssv& ssv) {
    if (end_.state != SessionState::Active) return ChanErr::Closed;
    auto brokered = ca.broker(cred, channel::SsvToken{ssv.genuine_token()});
    if (!brokered.ok()) return brokered.error();
    uint32_t old_id = end_.session_id;
    end_.session_id = brokered.value().session_id;
    end_.key = brokered.value().key;
    end_.tx_seq = end_.rx_seq = 0;
    m_.oob_write(DomainRef::epc(enclave_id_), 0, end_.key);
    return ssv.rekey_session(old_id, end_.session_id, end_.key);
}

void EnclaveEndpoint::teardown(ssv::Ssv& ssv) {
    if (end_.state == SessionState::Closed) return;
    end_.state = SessionState::Closed;
    metrics_.teardown_discards += to_ssv_.pending() + from_ssv_.pending();
    end_.zeroize();
    Bytes zeros(crypto::kKeyLen, 0);
    m_.oob_write(DomainRef::epc(enclave_id_), 0, zeros);
    ssv.remove_session(end_.session_id, alloc_for_teardown_);
    events_.clear();
}

Result<Unit, ChanErr> EnclaveEndpoint::seal_and_enqueue(DeviceId device, OpCode op,
                                                        ByteSpan payload) {
    PlainFrame f;
    f.device = static_cast<uint8_t>(device);
    f.operation = static_cast<uint8_t>(op);
    f.status = static_cast<uint8_t>(Status::Ok);
    f.payload.assign(payload.begin(), payload.end());

    m_.charge_step(platform::step::kEpcEncrypt, m_.costs().epc_encrypt);
    // plaintext is staged only inside this enclave's EPC
    Bytes staged = f.serialize();
    m_.oob_write(DomainRef::epc(enclave_id_), 64, staged);
    auto sealed = seal(end_, f);
    if (!sealed.ok()) return sealed.error();
    ++metrics_.frames_sealed;

    m_.charge_step(platform::step::kCopyToShared, m_.costs().copy_to_shared);
    auto q = to_ssv_.enqueue(sealed.value());
    if (!q.ok()) return q.error();
    return Unit{};
}

// Frames that fail authentication or ordering are dropped and counted, and
// the wait continues: a bad frame must never stand in for the real response
// (the real one, being sequence-valid, still opens after the drop).
Result<PlainFrame, ChanErr> EnclaveEndpoint::await_response() {
    VirtNs deadline = m_.now() + timeout_;
    while (true) {
        auto got = from_ssv_.dequeue();
        if (!got.ok()) return got.error();
        if (got.value().has_value()) {
            m_.charge_step(platform::step::kCopyToEpc, m_.costs().copy_to_epc);
            m_.charge_step(platform::step::kEpcDecrypt, m_.costs().epc_decrypt);
            auto opened = open(end_, *got.value());
            if (!opened.ok()) {
                if (opened.error() == ChanErr::Closed) return opened.error();
                if (opened.error() == ChanErr::AuthFail)
                    ++metrics_.enclave_auth_drops;
                else if (opened.error() == ChanErr::ReplayOrReorder)
                    ++metrics_.enclave_replay_drops;
                m_.log_event("enclave drop " + std::string(chan_err_name(opened.error())));
                continue;
            }
            ++metrics_.frames_opened;
            if (opened.value().status == static_cast<uint8_t>(Status::Event)) {
                ++event_frames_received_;
                events_.push_back(std::move(opened.value()));
                continue;
            }
            return opened.value();
        }
        if (m_.now() >= deadline) return ChanErr::Timeout;
        m_.advance(m_.costs().poll_quantum);
        fire(Window::PollTick);
    }
}

Result<RequestOutcome, ChanErr> EnclaveEndpoint::request(DeviceId device, OpCode op,
                                                         ByteSpan payload, RequestMode mode) {
    if (end_.state != SessionState::Active) return ChanErr::Closed;
    if (device == DeviceId::Nic && op == OpCode::Write) ++nic_write_requests_;

    auto enq = seal_and_enqueue(device, op, payload);
    if (!enq.ok()) return enq.error();
    fire(Window::PostEnqueuePreSmi);

    bool flush = mode.kind == RequestMode::Kind::Immediate;
    uint32_t expected_responses = 1;
    if (mode.kind == RequestMode::Kind::Batched) {
        ++batch_pending_;
        if (batch_pending_ < mode.batch_n) return RequestOutcome{RequestOutcome::Kind::Queued};
        expected_responses = batch_pending_;
        batch_pending_ = 0;
        flush = true;
    }
    if (!flush) return RequestOutcome{RequestOutcome::Kind::Queued};

    auto smi = m_.trigger_smi(platform::PendingSmi::software());
    if (!smi.ok()) return ChanErr::PlatformFault;
    fire(Window::PostSmiPreDequeue);

    last_batch_.clear();
    RequestOutcome last;
    for (uint32_t i = 0; i < expected_responses; ++i) {
        auto resp = await_response();
        if (!resp.ok()) return resp.error();
        RequestOutcome out;
        out.kind = RequestOutcome::Kind::Response;
        out.status = resp.value().status;
        out.payload = std::move(resp.value().payload);
        last_batch_.push_back(out);
        last = std::move(out);
    }
    return last;
}

Result<Unit, ChanErr> EnclaveEndpoint::flush_batch() {
    if (batch_pending_ == 0) return Unit{};
    uint32_t expected = batch_pending_;
    batch_pending_ = 0;
    auto smi = m_.trigger_smi(platform::PendingSmi::software());
    if (!smi.ok()) return ChanErr::PlatformFault;
    fire(Window::PostSmiPreDequeue);
    last_batch_.clear();
    for (uint32_t i = 0; i < expected; ++i) {
        auto resp = await_response();
        if (!resp.ok()) return resp.error();
        RequestOutcome out;
        out.kind = RequestOutcome::Kind::Response;
        out.status = resp.value().status;
        out.payload = std::move(resp.value().payload);
        last_batch_.push_back(std::move(out));
    }
    return Unit{};
}

void EnclaveEndpoint::pump() {
    if (end_.state != SessionState::Active) return;
    while (true) {
        auto got = from_ssv_.dequeue();
        if (!got.ok() || !got.value().has_value()) break;
        m_.charge_step(platform::step::kCopyToEpc, m_.costs().copy_to_epc);
        m_.charge_step(platform::step::kEpcDecrypt, m_.costs().epc_decrypt);
        auto opened = open(end_, *got.value());
        if (!opened.ok()) {
            if (opened.error() == ChanErr::AuthFail)
                ++metrics_.enclave_auth_drops;
            else
                ++metrics_.enclave_replay_drops;
            continue;
        }
        ++metrics_.frames_opened;
        if (opened.value().status == static_cast<uint8_t>(Status::Event))
            ++event_frames_received_;
        events_.push_back(std::move(opened.value()));
    }
    metrics_.fifo_corruption_drops += from_ssv_.corruption_drops() - counted_corruption_;
    counted_corruption_ = from_ssv_.corruption_drops();
}

std::optional<PlainFrame> EnclaveEndpoint::next_event() {
    if (events_.empty()) return std::nullopt;
    PlainFrame f = std::move(events_.front());
    events_.pop_front();
    return f;
}

size_t EnclaveEndpoint::frames_in_flight() const {
    if (end_.state != SessionState::Active) return 0;
    return to_ssv_.pending() + from_ssv_.pending();
}

}  // namespace aurora::channel
