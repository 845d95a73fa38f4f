#pragma once

#include <deque>

#include "aurora/aead.hpp"
#include "aurora/metrics.hpp"
#include "aurora/platform.hpp"
#include "aurora/rng.hpp"

namespace aurora::ssv {
class Ssv;
}

namespace aurora::channel {

using platform::Actor;
using platform::DomainRef;
using platform::Machine;

// Wire unit crossing shared memory: nonce | ciphertext | tag, exactly 4 KiB.
constexpr size_t kSealedSize = kFrameSize;
constexpr size_t kCipherSize = kSealedSize - crypto::kNonceLen - crypto::kTagLen;  // 4068
constexpr size_t kHeaderSize = 17;
constexpr size_t kMaxPayload = kCipherSize - kHeaderSize;  // 4051

enum class DeviceId : uint8_t { Clock = 1, Nic = 2 };
enum class OpCode : uint8_t { Probe = 0, Read = 1, Write = 2 };

enum class Status : uint8_t {
    Ok = 0,
    UnknownDevice = 1,
    OperationUnsupported = 2,
    DriverError = 3,
    Event = 4,  // unsolicited SSV-to-enclave data (forwarded rx frame)
};

struct SealedFrame {
    std::array<uint8_t, kSealedSize> bytes{};
};

// Exists only inside SMRAM or EPC. Serializes to exactly kCipherSize bytes:
// session_id(4) seq(8) device(1) operation(1) status(1) payload_len(2) payload, zero padded.
struct PlainFrame {
    uint32_t session_id = 0;
    uint64_t seq = 0;
    uint8_t device = 0;
    uint8_t operation = 0;
    uint8_t status = 0;
    Bytes payload;

    Bytes serialize() const;
    static std::optional<PlainFrame> parse(ByteSpan raw);
};

enum class ChanErr : uint8_t {
    AuthFail,
    ReplayOrReorder,
    Closed,
    FifoFull,
    Timeout,
    PayloadTooLarge,
    AuthFailEnclave,
    AuthFailSsv,
    SharedMemUnavailable,
    PlatformFault,
    DriverError,
};
const char* chan_err_name(ChanErr e);

enum class SessionState : uint8_t { Establishing, Active, Closed };

// One endpoint's view of the symmetric channel. Direction bytes: 0 is
// enclave-to-SSV traffic, 1 is SSV-to-enclave; each direction has its own
// strictly increasing sequence counter feeding the deterministic nonce.
struct SessionEnd {
    uint32_t session_id = 0;
    Epid epid;
    crypto::Key key{};
    uint8_t tx_dir = 0;
    uint64_t tx_seq = 0;
    uint64_t rx_seq = 0;
    SessionState state = SessionState::Establishing;

    void zeroize() { key.fill(0); }
};

crypto::Nonce make_nonce(uint8_t direction, uint64_t seq);

// Pads, encrypts and authenticates; assigns and advances end.tx_seq.
Result<SealedFrame, ChanErr> seal(SessionEnd& end, PlainFrame frame);
// Verifies tag, session id and expected sequence; advances end.rx_seq.
Result<PlainFrame, ChanErr> open(SessionEnd& end, const SealedFrame& frame);
// Tag/parse check only, no sequence bookkeeping (auditor use).
bool open_raw(const crypto::Key& key, uint8_t direction, uint64_t seq,
              const SealedFrame& frame, PlainFrame& out);

// --- shared-memory FIFO ---

// Page-granular region of SharedRam: one control page (producer u32,
// consumer u32, capacity u32) followed by `capacity` page-aligned slots.
struct FifoRegion {
    uint32_t base = 0;
    uint32_t capacity = 0;

    size_t pages() const { return 1 + capacity; }
    uint32_t slot_offset(uint32_t index) const {
        return base + static_cast<uint32_t>(kPageSize) + (index % capacity) * static_cast<uint32_t>(kSealedSize);
    }
};

// Single-producer/single-consumer ring over domain bytes. Indices are free
// running u32 counters living in SharedRam and are therefore tamperable;
// the consumer treats impossible index states as corruption and discards.
class FifoView {
public:
    FifoView() = default;
    FifoView(Machine* m, FifoRegion region, Actor actor)
        : m_(m), region_(region), actor_(actor) {}

    bool valid() const { return m_ != nullptr && region_.capacity > 0; }
    const FifoRegion& region() const { return region_; }

    void init_control();  // zero indices, publish capacity
    Result<Unit, ChanErr> enqueue(const SealedFrame& frame);
    Result<std::optional<SealedFrame>, ChanErr> dequeue();
    // entries currently buffered; 0 on corrupt indices
    size_t pending() const;
    uint64_t corruption_drops() const { return corruption_drops_; }

private:
    std::optional<std::pair<uint32_t, uint32_t>> load_indices() const;

    Machine* m_ = nullptr;
    FifoRegion region_;
    Actor actor_{platform::ActorKind::Os};
    mutable uint64_t corruption_drops_ = 0;
};

// Page allocator for the shared region; first-fit free list so teardown can
// return FIFO pages.
class SharedAllocator {
public:
    SharedAllocator(Machine& m) : m_(m) {
        free_.push_back({0, static_cast<uint32_t>(m.domain_size(DomainRef::shared()) / kPageSize)});
    }
    std::optional<uint32_t> alloc_pages(uint32_t n);
    void free_pages(uint32_t base, uint32_t n);

private:
    struct Block {
        uint32_t page;
        uint32_t count;
    };
    Machine& m_;
    std::vector<Block> free_;
};

// --- simulated certificate authority ---

struct EnclaveCredential {
    Epid epid;
    std::array<uint8_t, 32> measurement{};
};

struct SsvToken {
    std::array<uint8_t, 32> image_hash{};
};

struct BrokeredSession {
    uint32_t session_id;
    crypto::Key key;
};

// Models the remote attestation outcome: verifies both identities and hands
// the fresh symmetric key to both ends over a channel the adversary cannot
// read. PKI details are out of scope by design.
class CertificateAuthority {
public:
    explicit CertificateAuthority(DetRng rng) : rng_(std::move(rng)) {}

    void register_enclave(const EnclaveCredential& cred);
    void set_ssv_image(ByteSpan image);
    SsvToken genuine_token() const { return SsvToken{genuine_ssv_hash_}; }

    Result<BrokeredSession, ChanErr> broker(const EnclaveCredential& cred, const SsvToken& token);

private:
    DetRng rng_;
    std::map<Epid, std::array<uint8_t, 32>> registry_;
    std::array<uint8_t, 32> genuine_ssv_hash_{};
    uint32_t next_session_id_ = 1;
};

struct RequestMode {
    enum class Kind : uint8_t { Immediate, Batched } kind = Kind::Immediate;
    uint32_t batch_n = 1;

    static RequestMode immediate() { return {}; }
    static RequestMode batched(uint32_t n) { return {Kind::Batched, n}; }
};

struct RequestOutcome {
    enum class Kind : uint8_t { Response, Queued } kind = Kind::Response;
    uint8_t status = 0;
    Bytes payload;
};

// Adversary interposition points on the request path.
enum class Window : uint8_t { PostEnqueuePreSmi, PostSmiPreDequeue, PollTick };
using WindowHook = std::function<void(Window)>;

// Enclave-side channel library: seals requests into the shared-memory FIFO,
// issues SMM calls, awaits and opens responses, and surfaces unsolicited
// event frames to the network stack.
class EnclaveEndpoint {
public:
    EnclaveEndpoint(Machine& m, uint32_t enclave_id, Epid epid, Metrics& metrics);

    Result<Unit, ChanErr> establish(const EnclaveCredential& cred, const SsvToken& token,
                                    CertificateAuthority& ca, ssv::Ssv& ssv,
                                    SharedAllocator& alloc, uint32_t fifo_capacity = 32);
    Result<Unit, ChanErr> reset(const EnclaveCredential& cred, CertificateAuthority& ca, ssv::Ssv& ssv);
    void teardown(ssv::Ssv& ssv);

    Result<RequestOutcome, ChanErr> request(DeviceId device, OpCode op, ByteSpan payload,
                                            RequestMode mode = RequestMode::immediate());

    // Drains readable response-FIFO frames into the event queue (dropping
    // and counting frames that fail authentication or ordering).
    void pump();
    std::optional<PlainFrame> next_event();
    size_t queued_events() const { return events_.size(); }

    SessionState state() const { return end_.state; }
    uint32_t session_id() const { return end_.session_id; }
    uint32_t enclave_id() const { return enclave_id_; }
    Epid epid() const { return epid_; }
    const crypto::Key& key() const { return end_.key; }
    const FifoRegion& to_ssv_region() const { return to_ssv_region_; }
    const FifoRegion& from_ssv_region() const { return from_ssv_region_; }
    size_t frames_in_flight() const;

    // Flush a partially filled batch: one SMI services everything queued.
    Result<Unit, ChanErr> flush_batch();
    uint32_t batch_pending() const { return batch_pending_; }
    const std::vector<RequestOutcome>& last_batch() const { return last_batch_; }

    void set_window_hook(WindowHook h) { hook_ = std::move(h); }
    VirtNs response_timeout() const { return timeout_; }
    void set_response_timeout(VirtNs t) { timeout_ = t; }
    Machine& machine() { return m_; }
    uint32_t fifo_capacity() const { return fifo_capacity_; }
    uint64_t nic_write_requests() const { return nic_write_requests_; }
    uint64_t event_frames_received() const { return event_frames_received_; }

private:
    friend class aurora::ssv::Ssv;
    Result<Unit, ChanErr> seal_and_enqueue(DeviceId device, OpCode op, ByteSpan payload);
    Result<PlainFrame, ChanErr> await_response();
    void fire(Window w) {
        if (hook_) hook_(w);
    }

    Machine& m_;
    uint32_t enclave_id_;
    Epid epid_;
    Metrics& metrics_;
    SessionEnd end_;
    FifoRegion to_ssv_region_, from_ssv_region_;
    FifoView to_ssv_, from_ssv_;
    std::deque<PlainFrame> events_;
    uint32_t batch_pending_ = 0;
    std::vector<RequestOutcome> last_batch_;
    WindowHook hook_;
    VirtNs timeout_ = 10 * kMs;
    uint32_t fifo_capacity_ = 32;
    SharedAllocator* alloc_for_teardown_ = nullptr;
    uint64_t counted_corruption_ = 0;
    uint64_t nic_write_requests_ = 0;
    uint64_t event_frames_received_ = 0;
};

}  // namespace aurora::channel
