#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace blindtrust {

// Collects one JSON object per event; serialized as JSON-lines. Everything
// written here must be a pure function of the scenario and its seed so two
// runs produce byte-identical files.
class TraceWriter {
public:
    void line(const nlohmann::json& j) { lines_.push_back(j.dump()); }
    const std::vector<std::string>& lines() const { return lines_; }
    std::string text() const;

private:
    std::vector<std::string> lines_;
};

// Sequence-diagram style rendering of a trace file. Digest fields are
// abbreviated; unknown lines are echoed as-is.
std::string renderTrace(const std::string& jsonlText, const std::string& protocolFilter = "");

// True when the trace parses as one JSON object per non-empty line.
bool traceSchemaOk(const std::string& jsonlText);

}  // namespace blindtrust
