#include "aurora/time_tss.hpp"

#include <algorithm>
#include <sstream>

namespace aurora::time_tss {

uint64_t ClockSample::value_of(ClockSource s) const {
    switch (s) {
        case ClockSource::Rtc: return rtc_calendar;
        case ClockSource::Hpet: return hpet_ticks;
        case ClockSource::Pit: return pit_ticks;
        case ClockSource::Tsc: return tsc_ticks;
        case ClockSource::ApicTimer: return apic_ticks;
    }
    return 0;
}

bool TimeVerdict::names(ClockSource s) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.source == s; });
}

bool TimeVerdict::names(ClockSource s, Rule r) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.source == s && v.rule == r; });
}

// civil-from-days (Howard Hinnant's algorithm)
CivilTime civil_from_unix(int64_t secs, int32_t utc_offset_seconds) {
    int64_t t = secs + utc_offset_seconds;
    int64_t days = t / 86400;
    int64_t rem = t % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    int64_t z = days + 719468;
    int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    uint64_t doe = static_cast<uint64_t>(z - era * 146097);
    uint64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    int64_t y = static_cast<int64_t>(yoe) + era * 400;
    uint64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    uint64_t mp = (5 * doy + 2) / 153;
    uint64_t d = doy - (153 * mp + 2) / 5 + 1;
    uint64_t m = mp < 10 ? mp + 3 : mp - 9;
    if (m <= 2) ++y;
    CivilTime c;
    c.year = static_cast<int>(y);
    c.month = static_cast<int>(m);
    c.day = static_cast<int>(d);
    c.hour = static_cast<int>(rem / 3600);
    c.minute = static_cast<int>((rem % 3600) / 60);
    c.second = static_cast<int>(rem % 60);
    return c;
}

TrustedClock::TrustedClock(channel::EnclaveEndpoint& ep, Metrics& metrics, Config cfg)
    : ep_(ep), metrics_(metrics), cfg_(cfg) {}

Result<Unit, TimeError> TrustedClock::init() {
    auto r = ep_.request(channel::DeviceId::Clock, channel::OpCode::Probe, {});
    if (!r.ok()) return TimeError{TimeError::Kind::Channel, r.error(), {}};
    if (r.value().status != static_cast<uint8_t>(channel::Status::Ok))
        return TimeError{TimeError::Kind::SourceUnavailable, {}, {}};
    auto parsed = ssv::ClockProbeWire::parse(r.value().payload);
    if (!parsed) return TimeError{TimeError::Kind::SourceUnavailable, {}, {}};
    probe_ = *parsed;
    // tv_usec requires the high-precision source
    if (!(probe_.present_mask & (1u << static_cast<size_t>(ClockSource::Hpet))))
        return TimeError{TimeError::Kind::SourceUnavailable, {}, {}};
    probed_ = true;
    return Unit{};
}

uint64_t TrustedClock::source_hz(ClockSource s) const {
    switch (s) {
        case ClockSource::Rtc: return 1;  // seconds
        case ClockSource::Hpet: return 1000000000000000ull / probe_.hpet_period_fs;
        case ClockSource::Pit: return probe_.pit_hz;
        case ClockSource::Tsc: return probe_.tsc_hz;
        case ClockSource::ApicTimer: return probe_.apic_tick_hz;
    }
    return 1;
}

uint64_t TrustedClock::quantum_ns(ClockSource s) const {
    uint64_t hz = source_hz(s);
    return hz == 0 ? kSec : (1000000000ull + hz - 1) / hz;
}

ClockSample TrustedClock::normalize(const ssv::ClockReadingWire& w) {
    ClockSample s;
    s.present_mask = w.present_mask;
    s.rtc_calendar = w.rtc_seconds;
    s.hpet_ticks = w.hpet;
    s.tsc_ticks = w.tsc;
    s.rtc_read_count = w.rtc_read_count;
    s.boundary_observed = w.boundary_observed != 0;
    s.boundary_offset_ns = w.boundary_offset_ns;
    for (size_t i = 0; i < devices::kClockSourceCount; ++i) s.offsets_ns[i] = w.offsets_ns[i];

    if (last_raw_) {
        uint32_t reload = probe_.pit_reload ? probe_.pit_reload : 65536;
        uint32_t prev = last_raw_->pit;
        uint32_t curr = w.pit;
        pit_cum_ += prev >= curr ? prev - curr : prev + reload - curr;
        uint32_t init = probe_.apic_init ? probe_.apic_init : 0xffffffffu;
        uint32_t aprev = last_raw_->apic;
        uint32_t acurr = w.apic;
        apic_cum_ += aprev >= acurr ? aprev - acurr : aprev + init - acurr;
    }
    s.pit_ticks = pit_cum_;
    s.apic_ticks = apic_cum_;
    last_raw_ = w;
    return s;
}

int64_t TrustedClock::elapsed_ns(ClockSource s, const ClockSample& a, const ClockSample& b) const {
    int64_t raw;
    if (s == ClockSource::Rtc) {
        raw = (static_cast<int64_t>(b.rtc_calendar) - static_cast<int64_t>(a.rtc_calendar)) *
              static_cast<int64_t>(kSec);
    } else {
        uint64_t hz = source_hz(s);
        int64_t dt = static_cast<int64_t>(b.value_of(s)) - static_cast<int64_t>(a.value_of(s));
        raw = dt >= 0 ? static_cast<int64_t>(ticks_to_ns(static_cast<uint64_t>(dt), hz))
                      : -static_cast<int64_t>(ticks_to_ns(static_cast<uint64_t>(-dt), hz));
    }
    // subtract the TSC-measured read-latency drift between the two snapshots
    size_t i = static_cast<size_t>(s);
    int64_t adj = static_cast<int64_t>(b.offsets_ns[i]) - static_cast<int64_t>(a.offsets_ns[i]);
    return raw - adj;
}

TimeVerdict TrustedClock::validate(std::span<const ClockSample> history,
                                   const ClockSample& next) const {
    TimeVerdict verdict;
    if (history.empty()) return verdict;
    const ClockSample& prev = history.back();

    constexpr ClockSource kSources[] = {ClockSource::Rtc, ClockSource::Hpet, ClockSource::Pit,
                                        ClockSource::Tsc, ClockSource::ApicTimer};

    // (a) per-source monotonic rule
    for (ClockSource s : kSources) {
        if (!prev.has(s) || !next.has(s)) continue;
        uint64_t pv = prev.value_of(s);
        uint64_t cv = next.value_of(s);
        bool bad = s == ClockSource::Rtc ? cv < pv : cv <= pv;
        if (bad) verdict.violations.push_back({s, pv, cv, Rule::Monotonic});
    }

    // (b) pairwise rate cross-check on latency-adjusted elapsed estimates
    std::vector<std::pair<ClockSource, int64_t>> est;
    for (ClockSource s : kSources) {
        if (!prev.has(s) || !next.has(s)) continue;
        int64_t e = elapsed_ns(s, prev, next);
        if (e < 0) continue;  // already flagged by the monotonic rule
        est.push_back({s, e});
    }
    if (est.size() < 2) return verdict;

    std::vector<int64_t> sorted;
    for (auto& [s, e] : est) sorted.push_back(e);
    std::sort(sorted.begin(), sorted.end());
    int64_t median = sorted[sorted.size() / 2];

    // skip down-counters beyond their unambiguous wrap range
    auto saturated = [&](ClockSource s) {
        uint64_t range_ns;
        if (s == ClockSource::Pit) {
            uint32_t reload = probe_.pit_reload ? probe_.pit_reload : 65536;
            range_ns = ticks_to_ns(reload, source_hz(s));
        } else if (s == ClockSource::ApicTimer) {
            uint32_t init = probe_.apic_init ? probe_.apic_init : 0xffffffffu;
            range_ns = ticks_to_ns(init, source_hz(s));
        } else {
            return false;
        }
        return static_cast<uint64_t>(median) > range_ns * 9 / 10;
    };
    est.erase(std::remove_if(est.begin(), est.end(),
                             [&](auto& p) { return saturated(p.first); }),
              est.end());
    if (est.size() < 2) return verdict;

    std::map<ClockSource, int> failures;
    for (size_t i = 0; i < est.size(); ++i) {
        for (size_t j = i + 1; j < est.size(); ++j) {
            int64_t a = est[i].second, b = est[j].second;
            int64_t hi = std::max(a, b);
            int64_t slack = static_cast<int64_t>(
                cfg_.slack_mult * (quantum_ns(est[i].first) + quantum_ns(est[j].first)));
            int64_t budget =
                hi / static_cast<int64_t>(cfg_.tolerance_den) * static_cast<int64_t>(cfg_.tolerance_num) +
                slack;
            if (std::llabs(a - b) > budget) {
                ++failures[est[i].first];
                ++failures[est[j].first];
            }
        }
    }
    int threshold = est.size() >= 3 ? 2 : 1;
    for (auto& [s, n] : failures) {
        if (n >= threshold)
            verdict.violations.push_back({s, prev.value_of(s), next.value_of(s), Rule::RateMismatch});
    }
    return verdict;
}

TimeValue TrustedClock::derive_time(const ClockSample& s) {
    TimeValue tv;
    uint64_t hpet_hz = source_hz(ClockSource::Hpet);
    uint64_t hpet_ns = ticks_to_ns(s.hpet_ticks, hpet_hz);

    if (!s.has(ClockSource::Rtc)) {
        // reference clock: relative time from HPET only
        tv.tv_sec = hpet_ns / kSec;
        tv.tv_usec = static_cast<uint32_t>((hpet_ns % kSec) / 1000);
        tv.relative = true;
        tv.low_confidence = true;
        return tv;
    }

    tv.tv_sec = s.rtc_calendar;
    if (s.boundary_observed) {
        // exact anchor: the rollover was observed in-invocation; relate it to
        // the HPET latch instant through the measured offsets
        size_t hi = static_cast<size_t>(ClockSource::Hpet);
        uint64_t off_delta =
            s.offsets_ns[hi] >= s.boundary_offset_ns ? s.offsets_ns[hi] - s.boundary_offset_ns : 0;
        anchor_ = Anchor{s.rtc_calendar, s.hpet_ticks - ns_to_ticks(off_delta, hpet_hz)};
    }

    if (anchor_) {
        size_t hi = static_cast<size_t>(ClockSource::Hpet);
        size_t ri = static_cast<size_t>(ClockSource::Rtc);
        // evaluate the sub-second phase at the RTC latch instant
        uint64_t skew_ns = s.offsets_ns[hi] >= s.offsets_ns[ri]
                               ? s.offsets_ns[hi] - s.offsets_ns[ri]
                               : 0;
        uint64_t hpet_at_rtc = s.hpet_ticks - std::min(ns_to_ticks(skew_ns, hpet_hz),
                                                       s.hpet_ticks - anchor_->hpet_ticks_at_boundary);
        uint64_t since_anchor_us =
            ticks_to_ns(hpet_at_rtc - anchor_->hpet_ticks_at_boundary, hpet_hz) / 1000;
        uint64_t rtc_steps = s.rtc_calendar - anchor_->rtc_sec;
        int64_t usec = static_cast<int64_t>(since_anchor_us) -
                       static_cast<int64_t>(rtc_steps) * 1000000;
        tv.tv_usec = static_cast<uint32_t>(std::clamp<int64_t>(usec, 0, 999999));
    } else {
        tv.tv_usec = static_cast<uint32_t>((hpet_ns / 1000) % 1000000ull);
        tv.low_confidence = true;
    }
    return tv;
}

Result<std::pair<TimeValue, TimeVerdict>, TimeError> TrustedClock::now() {
    if (!probed_) {
        auto p = init();
        if (!p.ok()) return p.error();
    }
    auto r = ep_.request(channel::DeviceId::Clock, channel::OpCode::Read, {});
    if (!r.ok()) return TimeError{TimeError::Kind::Channel, r.error(), {}};
    if (r.value().status != static_cast<uint8_t>(channel::Status::Ok))
        return TimeError{TimeError::Kind::SourceUnavailable, {}, {}};
    auto wire = ssv::ClockReadingWire::parse(r.value().payload);
    if (!wire) return TimeError{TimeError::Kind::Channel, channel::ChanErr::AuthFail, {}};

    ClockSample sample = normalize(*wire);
    sample.sampled_at = ep_.machine().now();
    ++metrics_.time_samples;

    TimeVerdict verdict = validate(history_, sample);
    if (!verdict.ok()) ++metrics_.time_verdict_failures;
    history_.push_back(sample);

    TimeValue tv = derive_time(sample);
    if (last_returned_ && tv.relative == last_returned_->relative &&
        tv.total_usec() < last_returned_->total_usec()) {
        // non-decreasing output guard across anchor transitions
        tv.tv_sec = last_returned_->tv_sec;
        tv.tv_usec = last_returned_->tv_usec;
    }
    last_returned_ = tv;
    return std::pair{tv, verdict};
}

Result<uint64_t, TimeError> TrustedClock::time() {
    auto r = now();
    if (!r.ok()) return r.error();
    if (!r.value().second.ok())
        return TimeError{TimeError::Kind::AttackDetected, {}, r.value().second};
    return r.value().first.tv_sec;
}

Result<TimeValue, TimeError> TrustedClock::gettimeofday() {
    auto r = now();
    if (!r.ok()) return r.error();
    if (!r.value().second.ok())
        return TimeError{TimeError::Kind::AttackDetected, {}, r.value().second};
    return r.value().first;
}

Result<CivilTime, TimeError> TrustedClock::localtime() {
    auto r = gettimeofday();
    if (!r.ok()) return r.error();
    return civil_from_unix(static_cast<int64_t>(r.value().tv_sec), cfg_.utc_offset_seconds);
}

Result<TrustedClock::FileTimes, TimeError> TrustedClock::utimes() {
    auto r = gettimeofday();
    if (!r.ok()) return r.error();
    return FileTimes{r.value(), r.value()};
}

std::string TrustedClock::export_history_json() const {
    std::ostringstream os;
    for (const auto& s : history_) {
        os << "{\"rtc\":" << s.rtc_calendar << ",\"hpet\":" << s.hpet_ticks
           << ",\"pit\":" << s.pit_ticks << ",\"tsc\":" << s.tsc_ticks
           << ",\"apic\":" << s.apic_ticks << ",\"sampled_at\":" << s.sampled_at
           << ",\"rtc_reads\":" << static_cast<int>(s.rtc_read_count)
           << ",\"boundary\":" << (s.boundary_observed ? 1 : 0) << "}\n";
    }
    return os.str();
}

}  // namespace aurora::time_tss
