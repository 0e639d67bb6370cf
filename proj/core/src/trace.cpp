#include "blindtrust/trace.h"

#include <sstream>

#include "blindtrust/digest.h"

namespace blindtrust {

std::string TraceWriter::text() const {
    std::string out;
    for (const std::string& line : lines_) {
        out += line;
        out += '\n';
    }
    return out;
}

namespace {

std::string abbrev(const std::string& hex) {
    if (hex.size() <= 16) return hex;
    return hex.substr(0, 12) + "..";
}

// Flattens a payload to "k=v k2=v2" with long hex strings shortened.
std::string renderPayload(const nlohmann::json& payload) {
    std::string out;
    for (auto it = payload.begin(); it != payload.end(); ++it) {
        if (!out.empty()) out += " ";
        out += it.key();
        out += "=";
        if (it->is_string()) {
            out += abbrev(it->get<std::string>());
        } else if (it->is_object()) {
            out += "{";
            std::string inner;
            for (auto jt = it->begin(); jt != it->end(); ++jt) {
                if (!inner.empty()) inner += " ";
                inner += jt.key() + "=";
                inner += jt->is_string() ? abbrev(jt->get<std::string>()) : jt->dump();
            }
            out += inner + "}";
        } else {
            out += it->dump();
        }
    }
    return out;
}

}  // namespace

bool traceSchemaOk(const std::string& jsonlText) {
    std::istringstream in(jsonlText);
    std::string line;
    bool any = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        any = true;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("type")) return false;
    }
    return any;
}

std::string renderTrace(const std::string& jsonlText, const std::string& protocolFilter) {
    std::istringstream in(jsonlText);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        std::string type = j.value("type", std::string());
        if (type == "meta") {
            out << "scenario " << j.value("scenario", std::string("?")) << "  seed "
                << j.value("seed", 0ull) << "\n";
        } else if (type == "envelope") {
            std::string protocol = j.value("protocol", std::string());
            if (!protocolFilter.empty() && protocol != protocolFilter) continue;
            if (j.value("phase", std::string()) != "delivered") continue;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "#%03llu t=%03llu  ",
                          static_cast<unsigned long long>(j.value("seq", 0ull)),
                          static_cast<unsigned long long>(j.value("tick", 0ull)));
            out << buf << j.value("from", std::string()) << " -> " << j.value("to", std::string())
                << "  " << protocol << "/" << j.value("step", std::string());
            if (j.contains("payload") && j["payload"].is_object())
                out << "  " << renderPayload(j["payload"]);
            out << "\n";
        } else if (type == "adversary") {
            if (!protocolFilter.empty()) continue;
            out << "     [adversary " << j.value("action", std::string()) << " seq="
                << j.value("seq", 0ull) << "]\n";
        } else if (type == "tpm") {
            if (!protocolFilter.empty()) continue;
            out << "          " << j.value("party", std::string()) << " "
                << j.value("command", std::string()) << "\n";
        } else if (type == "step") {
            if (!protocolFilter.empty()) continue;
            out << "step " << j.value("index", 0ull) << " " << j.value("op", std::string())
                << ": " << (j.value("ok", false) ? "ok" : "fail") << " ("
                << j.value("reason", std::string()) << ")\n";
        } else if (type == "assertion") {
            if (!protocolFilter.empty()) continue;
            out << "assert " << j.value("name", std::string()) << ": "
                << (j.value("pass", false) ? "pass" : "FAIL") << "\n";
        } else if (type == "result") {
            if (!protocolFilter.empty()) continue;
            out << "result: " << (j.value("pass", false) ? "PASS" : "FAIL") << "\n";
        }
    }
    return out.str();
}

}  // namespace blindtrust
