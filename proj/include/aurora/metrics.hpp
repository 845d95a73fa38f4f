#pragma once

#include <map>
#include <string>

#include "aurora/common.hpp"

namespace aurora {

// Global scenario counters. The conservation identity checked at scenario end:
//   frames_sealed + frames_injected ==
//       frames_opened + frames_dropped() + frames_in_flight
struct Metrics {
    uint64_t frames_sealed = 0;
    uint64_t frames_opened = 0;
    uint64_t frames_injected = 0;   // adversary-crafted or replayed copies
    uint64_t frames_in_flight = 0;  // filled in at scenario end

    uint64_t ssv_auth_drops = 0;
    uint64_t ssv_replay_drops = 0;
    uint64_t ssv_malformed_drops = 0;
    uint64_t enclave_auth_drops = 0;
    uint64_t enclave_replay_drops = 0;
    uint64_t fifo_corruption_drops = 0;
    uint64_t ssv_response_drops = 0;  // response/event frames lost to a full FIFO
    uint64_t adversary_removed = 0;   // frames structurally deleted by attacks
    uint64_t teardown_discards = 0;

    uint64_t rtc_reads = 0;
    uint64_t rtc_double_reads = 0;
    uint64_t heap_allocs = 0;
    uint64_t boundary_violations = 0;

    uint64_t frames_to_enclaves = 0;
    uint64_t frames_to_os_path = 0;
    uint64_t cross_flow_drops = 0;

    uint64_t stack_tx_frames = 0;
    uint64_t stack_rx_frames = 0;
    uint64_t empty_polls = 0;
    uint64_t notify_tokens_consumed = 0;

    uint64_t time_samples = 0;
    uint64_t time_verdict_failures = 0;

    uint64_t frames_dropped() const {
        return ssv_auth_drops + ssv_replay_drops + ssv_malformed_drops + enclave_auth_drops +
               enclave_replay_drops + fifo_corruption_drops + ssv_response_drops +
               adversary_removed + teardown_discards;
    }

    bool conservation_holds() const {
        return frames_sealed + frames_injected ==
               frames_opened + frames_dropped() + frames_in_flight;
    }

    std::map<std::string, uint64_t> as_map() const;
};

}  // namespace aurora
