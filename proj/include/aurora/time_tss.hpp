#pragma once

#include "aurora/channel.hpp"
#include "aurora/devices.hpp"
#include "aurora/ssv.hpp"

namespace aurora::time_tss {

using devices::ClockSource;

// One coherent five-source snapshot taken inside a single SMM invocation.
// pit/apic are normalized to cumulative elapsed ticks by the enclave-side
// bookkeeping (down-counter deltas accumulated under the at-most-one-wrap
// sampling contract).
struct ClockSample {
    uint64_t rtc_calendar = 0;  // seconds
    uint64_t hpet_ticks = 0;
    uint64_t pit_ticks = 0;   // normalized
    uint64_t tsc_ticks = 0;
    uint64_t apic_ticks = 0;  // normalized
    VirtNs sampled_at = 0;
    uint8_t present_mask = 0;
    uint8_t rtc_read_count = 1;
    bool boundary_observed = false;
    uint32_t boundary_offset_ns = 0;
    uint32_t offsets_ns[devices::kClockSourceCount] = {0, 0, 0, 0, 0};

    bool has(ClockSource s) const { return present_mask & (1u << static_cast<size_t>(s)); }
    uint64_t value_of(ClockSource s) const;
};

enum class Rule : uint8_t { Monotonic, RateMismatch };

struct Violation {
    ClockSource source;
    uint64_t prev;
    uint64_t curr;
    Rule rule;
};

struct TimeVerdict {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    bool names(ClockSource s) const;
    bool names(ClockSource s, Rule r) const;
};

struct TimeValue {
    uint64_t tv_sec = 0;
    uint32_t tv_usec = 0;  // always within [0, 999999]
    bool low_confidence = false;  // tv_usec not yet anchored to an RTC rollover
    bool relative = false;        // RTC absent: reference clock, not wall clock

    uint64_t total_usec() const { return tv_sec * 1000000ull + tv_usec; }
    auto operator<=>(const TimeValue&) const = default;
};

struct CivilTime {
    int year, month, day, hour, minute, second;
};
CivilTime civil_from_unix(int64_t secs, int32_t utc_offset_seconds);

struct TimeError {
    enum class Kind : uint8_t { Channel, SourceUnavailable, AttackDetected } kind;
    channel::ChanErr chan = channel::ChanErr::Timeout;
    TimeVerdict verdict;
};

// Enclave-side trusted time library. Assembles absolute wall-clock time from
// the raw multi-source readings and applies the monotonic-rule validator to
// every new sample.
//
// Sampling contract for full cross-validation: consecutive now() calls must
// be separated by more than one tick of the slowest counter and by less than
// the PIT wrap period (~54.9 ms at the default reload); samples beyond a
// down-counter's unambiguous range cause the validator to skip that source
// as saturated rather than flag it. Forward RTC jumps pass the monotonic
// rule by construction and are caught only by the rate cross-check.
struct ValidatorConfig {
    // cross-source rate tolerance, as a ratio (default 10%)
    uint32_t tolerance_num = 1;
    uint32_t tolerance_den = 10;
    // per-pair quantization slack multiplier
    uint32_t slack_mult = 2;
    int32_t utc_offset_seconds = 0;
};

class TrustedClock {
public:
    using Config = ValidatorConfig;

    TrustedClock(channel::EnclaveEndpoint& ep, Metrics& metrics, Config cfg = Config());

    // Probe the clock device; must succeed before now() is usable.
    Result<Unit, TimeError> init();

    Result<std::pair<TimeValue, TimeVerdict>, TimeError> now();

    // Pure validation of `next` against the most recent history entry.
    TimeVerdict validate(std::span<const ClockSample> history, const ClockSample& next) const;

    // POSIX-style adapters; any non-ok verdict surfaces as AttackDetected.
    Result<uint64_t, TimeError> time();
    Result<TimeValue, TimeError> gettimeofday();
    Result<CivilTime, TimeError> localtime();
    struct FileTimes {
        TimeValue atime, mtime;
    };
    Result<FileTimes, TimeError> utimes();

    const std::vector<ClockSample>& history() const { return history_; }
    std::string export_history_json() const;  // one JSON record per line
    bool probed() const { return probed_; }
    const ssv::ClockProbeWire& probe_info() const { return probe_; }

private:
    ClockSample normalize(const ssv::ClockReadingWire& w);
    TimeValue derive_time(const ClockSample& s);
    uint64_t source_hz(ClockSource s) const;
    uint64_t quantum_ns(ClockSource s) const;
    // elapsed-ns estimate between samples, latency-adjusted; negative means
    // the source moved backwards
    int64_t elapsed_ns(ClockSource s, const ClockSample& a, const ClockSample& b) const;

    channel::EnclaveEndpoint& ep_;
    Metrics& metrics_;
    Config cfg_;
    bool probed_ = false;
    ssv::ClockProbeWire probe_;
    std::vector<ClockSample> history_;
    std::optional<ssv::ClockReadingWire> last_raw_;
    uint64_t pit_cum_ = 0;
    uint64_t apic_cum_ = 0;
    struct Anchor {
        uint64_t rtc_sec;
        uint64_t hpet_ticks_at_boundary;
    };
    std::optional<Anchor> anchor_;
    std::optional<TimeValue> last_returned_;
};

}  // namespace aurora::time_tss
