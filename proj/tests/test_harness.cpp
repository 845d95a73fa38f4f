#include <doctest.h>

#include "aurora/harness.hpp"

using namespace aurora;
using namespace aurora::harness;

TEST_CASE("an honest time scenario emits the 11-step workflow trace per request") {
    auto sc = *Scenario::builtin("workflow");
    sc.enclaves[0].workload.count = 5;
    auto rep = run_scenario(sc);
    // probe + read requests all follow the same shape
    REQUIRE(rep.workflow_traces.size() >= 5);
    const std::vector<std::string> expected = {
        "EPC encryption",  "Copy to shared RAM", "Switch to SMM",        "Copy to SMRAM",
        "SMRAM decryption", "Clock Service",      "SMRAM encryption",    "Copy to shared RAM",
        "Return and enter SGX", "Copy to EPC",    "EPC decryption",
    };
    for (const auto& trace : rep.workflow_traces) CHECK(trace == expected);
}

TEST_CASE("same scenario and seed reproduce a byte-identical event log") {
    auto sc = *Scenario::builtin("honest_time");
    sc.enclaves[0].workload.count = 40;
    auto r1 = run_scenario(sc);
    auto r2 = run_scenario(sc);
    CHECK(r1.event_log == r2.event_log);
    CHECK(r1.event_log_digest == r2.event_log_digest);
    // a different seed diverges
    sc.seed = 77;
    auto r3 = run_scenario(sc);
    CHECK(r3.event_log_digest != r1.event_log_digest);
}

TEST_CASE("counter conservation holds at scenario end") {
    for (const char* name : {"honest_time", "batched", "udp_echo"}) {
        auto sc = *Scenario::builtin(name);
        if (std::string(name) == "udp_echo") sc.enclaves[1].workload.count = 10;
        auto rep = run_scenario(sc);
        CAPTURE(name);
        CHECK(rep.conservation_holds);
    }
}

TEST_CASE("scenario json round trip preserves the configuration") {
    auto sc = *Scenario::builtin("udp_echo");
    sc.attacks.push_back(*adversary::find_builtin_script("replay"));
    std::string text = sc.to_json();
    auto parsed = Scenario::from_json(text);
    REQUIRE(parsed.ok());
    CHECK(parsed.value().name == sc.name);
    CHECK(parsed.value().seed == sc.seed);
    CHECK(parsed.value().enclaves.size() == 2);
    CHECK(parsed.value().enclaves[1].workload.kind == WorkloadConfig::Kind::UdpEchoClient);
    CHECK(parsed.value().attacks.size() == 1);
    CHECK(parsed.value().attacks[0].name == "replay");
    CHECK(parsed.value().to_json() == text);
}

TEST_CASE("report json emission round trips structurally") {
    auto sc = *Scenario::builtin("workflow");
    sc.enclaves[0].workload.count = 3;
    auto rep = run_scenario(sc);
    std::string text = rep.to_json();
    auto parsed = Report::from_json(text);
    REQUIRE(parsed.has_value());
    CHECK(parsed->to_json() == text);
    // an empty report is still a valid document
    Report empty;
    auto reparsed = Report::from_json(empty.to_json());
    REQUIRE(reparsed.has_value());
    CHECK(reparsed->to_json() == empty.to_json());
}

TEST_CASE("bench_time produces the 11-row breakdown with clock service dominant") {
    auto rep = bench_time(50, 500 * kUs, 42);
    REQUIRE(rep.breakdown.size() == 11);
    uint64_t clock_mean = 0;
    for (const auto& row : rep.breakdown)
        if (row.label == "Clock Service") clock_mean = row.mean_ns();
    for (const auto& row : rep.breakdown) {
        CHECK(row.count >= 50);
        if (row.label != "Clock Service") CHECK(row.mean_ns() < clock_mean);
    }
}

TEST_CASE("bench_overhead falls monotonically as the interval grows") {
    std::vector<VirtNs> intervals = {1 * kMs, 10 * kMs, 100 * kMs, 1000 * kMs};
    std::vector<VirtNs> durations = {78 * kUs, 152 * kUs};
    auto rep = bench_overhead(intervals, durations);
    REQUIRE(rep.series.size() == 2);
    for (const auto& s : rep.series) {
        REQUIRE(s.points.size() == 4);
        for (size_t i = 1; i < s.points.size(); ++i)
            CHECK(s.points[i].second < s.points[i - 1].second);
        // limit case: very long intervals cost nothing
        CHECK(s.points.back().second < 0.01);
    }
    // the longer preemption duration dominates at every interval
    for (size_t i = 0; i < 4; ++i)
        CHECK(rep.series[1].points[i].second > rep.series[0].points[i].second);
}

TEST_CASE("bench_net rtt grows with payload size") {
    auto rep = bench_net({64, 256, 512, 1024}, 3, 42);
    const Series* rtt = nullptr;
    for (const auto& s : rep.series)
        if (s.name == "icmp_rtt_us_vs_payload") rtt = &s;
    REQUIRE(rtt != nullptr);
    REQUIRE(rtt->points.size() == 4);
    for (size_t i = 1; i < rtt->points.size(); ++i)
        CHECK(rtt->points[i].second > rtt->points[i - 1].second);
}

TEST_CASE("batched workload issues one smi for eight requests") {
    auto sc = *Scenario::builtin("batched");
    World w(sc);
    uint64_t before = w.machine().smi_count();
    w.run();
    auto rep = w.report();
    CHECK(w.machine().smi_count() - before == 1);
    CHECK(rep.counters.at("frames_opened") >= 16);  // 8 requests + 8 responses
}

TEST_CASE("multiplex scenario: tagged flows never cross, untagged reach the os") {
    auto sc = *Scenario::builtin("multiplex");
    sc.flood.count = 300;
    auto rep = run_scenario(sc);
    CHECK(rep.counters.at("flood_misdelivered") == 0);
    CHECK(rep.counters.at("flood_received") == 200);
    CHECK(rep.counters.at("frames_to_os_path") == 100);
}

TEST_CASE("ssv hygiene holds across every scenario dispatch") {
    for (const char* name : {"honest_time", "batched", "icmp_ping"}) {
        auto sc = *Scenario::builtin(name);
        auto rep = run_scenario(sc);
        CAPTURE(name);
        CHECK(rep.hygiene_violations == 0);
        CHECK(rep.audit_violations == 0);
    }
}

TEST_CASE("unknown builtin scenario names are rejected") {
    CHECK_FALSE(Scenario::builtin("nope").has_value());
    CHECK_FALSE(Scenario::from_json("{not json").ok());
}
