#include "aurora/metrics.hpp"

namespace aurora {

std::map<std::string, uint64_t> Metrics::as_map() const {
    return {
        {"frames_sealed", frames_sealed},
        {"frames_opened", frames_opened},
        {"frames_injected", frames_injected},
        {"frames_in_flight", frames_in_flight},
        {"frames_dropped", frames_dropped()},
        {"ssv_auth_drops", ssv_auth_drops},
        {"ssv_replay_drops", ssv_replay_drops},
        {"ssv_malformed_drops", ssv_malformed_drops},
        {"ssv_response_drops", ssv_response_drops},
        {"enclave_auth_drops", enclave_auth_drops},
        {"enclave_replay_drops", enclave_replay_drops},
        {"fifo_corruption_drops", fifo_corruption_drops},
        {"adversary_removed", adversary_removed},
        {"teardown_discards", teardown_discards},
        {"rtc_reads", rtc_reads},
        {"rtc_double_reads", rtc_double_reads},
        {"heap_allocs", heap_allocs},
        {"boundary_violations", boundary_violations},
        {"frames_to_enclaves", frames_to_enclaves},
        {"frames_to_os_path", frames_to_os_path},
        {"cross_flow_drops", cross_flow_drops},
        {"stack_tx_frames", stack_tx_frames},
        {"stack_rx_frames", stack_rx_frames},
        {"empty_polls", empty_polls},
        {"notify_tokens_consumed", notify_tokens_consumed},
        {"time_samples", time_samples},
        {"time_verdict_failures", time_verdict_failures},
    };
}

}  // namespace aurora
