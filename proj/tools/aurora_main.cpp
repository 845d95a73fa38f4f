#include "aurora/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace aurora;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

int emit_report(const harness::Report& rep, bool as_json, const std::string& out_path) {
    std::string text = as_json ? rep.to_json() : rep.to_table();
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        out << text;
    } else {
        std::cout << text << std::endl;
    }
    return rep.expectations_hold ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aurora: deterministic SMM/enclave secure-channel simulator"};
    app.require_subcommand(1);

    // run
    std::string scenario_arg;
    uint64_t seed = 0;
    bool seed_set = false;
    bool json_out = false;
    std::string out_path;
    std::string pcap_path;
    std::string time_history_path;
    auto* run = app.add_subcommand("run", "run a scenario (builtin name or JSON file)");
    run->add_option("scenario", scenario_arg, "scenario file or builtin name")->required();
    run->add_option("--seed", seed, "override the scenario seed")->each([&](const std::string&) {
        seed_set = true;
    });
    run->add_flag("--json", json_out, "emit the report as JSON");
    run->add_option("-o,--out", out_path, "write the report to a file");
    run->add_option("--pcap", pcap_path, "write fabric traffic to a pcap file");
    run->add_option("--time-history", time_history_path,
                    "export enclave 0's clock-sample history (JSON lines)");

    // bench
    auto* bench = app.add_subcommand("bench", "run a benchmark");
    std::string bench_kind;
    uint32_t bench_n = 1000;
    uint64_t bench_interval_us = 500;
    uint32_t bench_count = 20;
    std::vector<uint32_t> bench_sizes = {16, 64, 256, 512, 1024, 1400};
    std::vector<uint64_t> bench_intervals_ms = {1, 10, 100, 1000};
    std::vector<uint64_t> bench_durations_us = {78, 152};
    bool bench_json = false;
    bench->add_option("kind", bench_kind, "time | net | overhead")->required();
    bench->add_option("--samples", bench_n, "time: number of requests");
    bench->add_option("--interval-us", bench_interval_us, "time: request interval");
    bench->add_option("--count", bench_count, "net: probes per payload size");
    bench->add_option("--sizes", bench_sizes, "net: payload sizes");
    bench->add_option("--intervals-ms", bench_intervals_ms, "overhead: request intervals");
    bench->add_option("--durations-us", bench_durations_us, "overhead: SMM preemption durations");
    bench->add_option("--seed", seed, "seed");
    bench->add_flag("--json", bench_json, "emit JSON");
    bench->add_option("-o,--out", out_path, "write the report to a file");

    // attack
    auto* attack = app.add_subcommand("attack", "run an attack script (builtin name or JSON file)");
    std::string attack_arg;
    uint64_t attack_seed = 42;
    bool attack_json = false;
    attack->add_option("script", attack_arg, "script name or JSON file")->required();
    attack->add_option("--seed", attack_seed, "seed");
    attack->add_flag("--json", attack_json, "emit JSON");

    // list-scenarios
    auto* list = app.add_subcommand("list-scenarios", "list builtin scenarios and attack scripts");

    CLI11_PARSE(app, argc, argv);

    if (*run) {
        std::optional<harness::Scenario> sc = harness::Scenario::builtin(scenario_arg);
        if (!sc) {
            std::string text = read_file(scenario_arg);
            if (text.empty()) {
                std::cerr << "unknown scenario: " << scenario_arg << "\n";
                return 2;
            }
            auto parsed = harness::Scenario::from_json(text);
            if (!parsed.ok()) {
                std::cerr << "bad scenario file: " << parsed.error() << "\n";
                return 2;
            }
            sc = parsed.value();
        }
        if (seed_set) sc->seed = seed;
        if (!time_history_path.empty()) sc->export_time_history = true;

        harness::World world(*sc);
        std::vector<std::pair<VirtNs, Bytes>> capture;
        if (!pcap_path.empty()) {
            world.fabric().add_tap([&capture](VirtNs at, ByteSpan frame) {
                capture.emplace_back(at, Bytes(frame.begin(), frame.end()));
            });
        }
        world.run();
        auto rep = world.report();

        if (!pcap_path.empty()) {
            std::ofstream pcap(pcap_path, std::ios::binary);
            uint8_t ghdr[24] = {0xd4, 0xc3, 0xb2, 0xa1, 2, 0, 4, 0, 0, 0, 0, 0,
                                0,    0,    0,    0,    0, 0, 1, 0, 1, 0, 0, 0};
            put_u32(ghdr + 16, 65535);
            pcap.write(reinterpret_cast<char*>(ghdr), sizeof(ghdr));
            for (auto& [at, frame] : capture) {
                uint8_t rec[16];
                put_u32(rec, static_cast<uint32_t>(at / kSec));
                put_u32(rec + 4, static_cast<uint32_t>((at % kSec) / 1000));
                put_u32(rec + 8, static_cast<uint32_t>(frame.size()));
                put_u32(rec + 12, static_cast<uint32_t>(frame.size()));
                pcap.write(reinterpret_cast<char*>(rec), sizeof(rec));
                pcap.write(reinterpret_cast<const char*>(frame.data()),
                           static_cast<std::streamsize>(frame.size()));
            }
        }
        if (!time_history_path.empty()) {
            std::ofstream th(time_history_path, std::ios::binary);
            th << rep.time_history;
        }
        return emit_report(rep, json_out, out_path);
    }

    if (*bench) {
        harness::Report rep;
        if (bench_kind == "time") {
            rep = harness::bench_time(bench_n, bench_interval_us * kUs, seed ? seed : 42);
        } else if (bench_kind == "net") {
            rep = harness::bench_net(bench_sizes, bench_count, seed ? seed : 42);
        } else if (bench_kind == "overhead") {
            std::vector<VirtNs> intervals, durations;
            for (auto ms : bench_intervals_ms) intervals.push_back(ms * kMs);
            for (auto us : bench_durations_us) durations.push_back(us * kUs);
            rep = harness::bench_overhead(intervals, durations);
        } else {
            std::cerr << "unknown bench kind: " << bench_kind << "\n";
            return 2;
        }
        return emit_report(rep, bench_json, out_path);
    }

    if (*attack) {
        std::optional<harness::Scenario> sc = harness::Scenario::builtin("attack_" + attack_arg);
        if (!sc) {
            std::string text = read_file(attack_arg);
            auto script = text.empty() ? std::nullopt : adversary::script_from_json(text);
            if (!script) {
                std::cerr << "unknown attack script: " << attack_arg << "\n";
                return 2;
            }
            sc = harness::Scenario::builtin("honest_time");
            sc->name = "attack_" + script->name;
            sc->attacks.push_back(*script);
        }
        sc->seed = attack_seed;
        auto rep = harness::run_scenario(*sc);
        return emit_report(rep, attack_json, out_path);
    }

    if (*list) {
        std::cout << "builtin scenarios:\n";
        for (const auto& n : harness::Scenario::builtin_names()) std::cout << "  " << n << "\n";
        std::cout << "attack scripts (run with: aurora attack <name>):\n";
        for (const auto& s : adversary::builtin_scripts()) std::cout << "  " << s.name << "\n";
        return 0;
    }
    return 2;
}
