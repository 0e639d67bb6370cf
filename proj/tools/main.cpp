#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "blindtrust/bench.h"
#include "blindtrust/netsim.h"
#include "blindtrust/trace.h"

#include "CLI11.hpp"

namespace {

int runScenario(const std::string& path, std::optional<std::uint64_t> seedOverride,
                const std::string& traceOut) {
    auto loaded = blindtrust::Scenario::fromFile(path);
    if (!loaded) {
        std::cerr << "error: " << loaded.error() << "\n";
        return 2;
    }
    blindtrust::Scenario sc = loaded.take();

    // Precedence: scenario file < --seed < BLINDTRUST_SEED.
    if (seedOverride) sc.seed = *seedOverride;
    if (const char* env = std::getenv("BLINDTRUST_SEED")) {
        char* end = nullptr;
        unsigned long long v = std::strtoull(env, &end, 10);
        if (end && *end == '\0') sc.seed = v;
    }

    blindtrust::ScenarioEngine engine(sc);
    blindtrust::RunResult result = engine.run();

    if (!traceOut.empty()) {
        std::ofstream out(traceOut, std::ios::binary);
        if (!out) {
            std::cerr << "error: cannot write " << traceOut << "\n";
            return 2;
        }
        out << result.trace;
    }

    for (const auto& step : result.steps) {
        std::cout << "step " << step.index << " " << step.op << ": "
                  << (step.ok ? "ok" : "fail") << " (" << step.reason << ")"
                  << (step.matchedExpectation ? "" : "  [unexpected]") << "\n";
    }
    bool effectivePass = sc.expectFail ? !result.pass : result.pass;
    std::cout << "scenario " << sc.name << ": " << (result.pass ? "pass" : "fail");
    if (sc.expectFail) std::cout << " (expected failure)";
    std::cout << "\n";
    if (!result.failure.empty()) std::cout << "first failure: " << result.failure << "\n";
    return effectivePass ? 0 : 1;
}

int runBench(int iters, const std::string& jsonOut, std::uint64_t seed) {
    blindtrust::BenchReport report = blindtrust::runProtocolBench(iters, seed);
    std::cout << report.renderTable();
    if (!jsonOut.empty()) {
        std::ofstream out(jsonOut, std::ios::binary);
        if (!out) {
            std::cerr << "error: cannot write " << jsonOut << "\n";
            return 2;
        }
        out << report.toJson().dump(2) << "\n";
    }
    return 0;
}

int inspectTrace(const std::string& path, const std::string& protocol) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot open " << path << "\n";
        return 2;
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!blindtrust::traceSchemaOk(text)) {
        std::cerr << "error: " << path << " is not a trace file\n";
        return 2;
    }
    std::cout << blindtrust::renderTrace(text, protocol);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BlindTrust oblivious remote attestation simulator"};
    app.require_subcommand(1);

    // scenario run <file> [--seed N] [--trace out.jsonl]
    auto* scenario = app.add_subcommand("scenario", "Scenario operations");
    scenario->require_subcommand(1);
    auto* run = scenario->add_subcommand("run", "Run a scenario file");
    std::string scenarioPath;
    std::optional<std::uint64_t> seed;
    std::string traceOut;
    run->add_option("file", scenarioPath, "Scenario JSON file")->required();
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--trace", traceOut, "Write the trace as JSON-lines");

    // bench [--iters N] [--json out.json]
    auto* bench = app.add_subcommand("bench", "Benchmark the five protocols");
    int iters = 50;
    std::string benchJson;
    std::uint64_t benchSeed = 1;
    bench->add_option("--iters", iters, "Iterations per protocol (default 50)");
    bench->add_option("--json", benchJson, "Write the report as JSON");
    bench->add_option("--seed", benchSeed, "Party key seed");

    // trace inspect <file> [--protocol P]
    auto* trace = app.add_subcommand("trace", "Trace operations");
    trace->require_subcommand(1);
    auto* inspect = trace->add_subcommand("inspect", "Render a trace file");
    std::string tracePath;
    std::string protocolFilter;
    inspect->add_option("file", tracePath, "Trace JSON-lines file")->required();
    inspect->add_option("--protocol", protocolFilter, "Only show one protocol");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return runScenario(scenarioPath, seed, traceOut);
    if (bench->parsed()) return runBench(iters, benchJson, benchSeed);
    if (inspect->parsed()) return inspectTrace(tracePath, protocolFilter);
    return 0;
}
