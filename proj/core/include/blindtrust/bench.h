#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace blindtrust {

struct CommandStat {
    std::string name;
    std::vector<double> samples;

    double mean() const;
    double stddev() const;
};

struct ProtocolBenchRow {
    std::string protocol;
    std::vector<double> samples;  // whole-protocol wall time, ms
    std::vector<CommandStat> commands;

    double mean() const;
    double stddev() const;
};

struct BenchReport {
    std::string environment;
    int iterations = 0;
    std::vector<ProtocolBenchRow> rows;

    nlohmann::json toJson() const;
    std::string renderTable() const;
    const ProtocolBenchRow* row(const std::string& protocol) const;
};

// Times the five VF-side protocol flows over in-process runs, with
// per-TPM-command sub-timings captured through the vTPM dispatch hook.
BenchReport runProtocolBench(int iterations, std::uint64_t seed);

}  // namespace blindtrust
