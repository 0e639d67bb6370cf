#include "blindtrust/bench.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "blindtrust/netsim.h"

namespace blindtrust {

namespace {

double meanOf(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double stddevOf(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = meanOf(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

template <typename F>
double timeMs(F&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

double CommandStat::mean() const { return meanOf(samples); }
double CommandStat::stddev() const { return stddevOf(samples); }
double ProtocolBenchRow::mean() const { return meanOf(samples); }
double ProtocolBenchRow::stddev() const { return stddevOf(samples); }

const ProtocolBenchRow* BenchReport::row(const std::string& protocol) const {
    for (const ProtocolBenchRow& r : rows)
        if (r.protocol == protocol) return &r;
    return nullptr;
}

nlohmann::json BenchReport::toJson() const {
    nlohmann::json jrows = nlohmann::json::array();
    for (const ProtocolBenchRow& r : rows) {
        nlohmann::json jcmds = nlohmann::json::array();
        for (const CommandStat& c : r.commands) {
            jcmds.push_back({{"name", c.name},
                             {"mean_ms", c.mean()},
                             {"sd_ms", c.stddev()},
                             {"n", c.samples.size()},
                             {"samples", c.samples}});
        }
        jrows.push_back({{"protocol", r.protocol},
                         {"mean_ms", r.mean()},
                         {"sd_ms", r.stddev()},
                         {"n", r.samples.size()},
                         {"samples", r.samples},
                         {"commands", jcmds}});
    }
    return {{"environment", environment}, {"iterations", iterations}, {"rows", jrows}};
}

std::string BenchReport::renderTable() const {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-44s %12s %10s\n", "Protocol", "M (ms)", "+/-SD");
    out += buf;
    out += std::string(68, '-') + "\n";
    for (const ProtocolBenchRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-44s %12.4f %10.4f\n", r.protocol.c_str(), r.mean(),
                      r.stddev());
        out += buf;
        for (const CommandStat& c : r.commands) {
            std::snprintf(buf, sizeof(buf), "  %-42s %12.4f %10.4f\n", c.name.c_str(), c.mean(),
                          c.stddev());
            out += buf;
        }
    }
    out += std::string(68, '-') + "\n";
    std::snprintf(buf, sizeof(buf), "%d iterations per protocol; %s\n", iterations,
                  environment.c_str());
    out += buf;
    return out;
}

BenchReport runProtocolBench(int iterations, std::uint64_t seed) {
    if (iterations < 1) iterations = 1;

    BenchReport report;
    report.iterations = iterations;
#if defined(__VERSION__)
    report.environment = std::string("software vTPM emulation, g++ ") + __VERSION__;
#else
    report.environment = "software vTPM emulation";
#endif

    // Per-command samples for the row currently being measured.
    std::map<std::string, std::vector<double>> cmdSamples;
    auto makeSink = [&cmdSamples](VTpm& tpm) {
        tpm.setCommandSink(
            [&cmdSamples](const char* name, double ms) { cmdSamples[name].push_back(ms); });
    };
    auto finishRow = [&cmdSamples](ProtocolBenchRow& row,
                                   const std::vector<std::string>& order) {
        for (const std::string& name : order) {
            auto it = cmdSamples.find(name);
            if (it == cmdSamples.end()) continue;
            row.commands.push_back(CommandStat{name, std::move(it->second)});
            cmdSamples.erase(it);
        }
    };

    auto block = [&](const std::string& id) { return ScenarioEngine::partyBlock(seed, id); };
    auto hk = [&](const std::string& id) { return ScenarioEngine::deriveHk(seed, id); };

    Orchestrator orc(block("orchestrator"));

    // --- AK creation -------------------------------------------------------
    {
        ProtocolBenchRow row;
        row.protocol = "AK creation (VF)";
        for (int i = 0; i < iterations; ++i) {
            std::string id = "bench-ak-" + std::to_string(i);
            VfAgent agent(id, block(id), hk(id));
            orc.registerVf(id, agent.ekPublicArea(), hk(id));
            auto req = orc.beginEnrollment(id);
            makeSink(agent.tpm());
            row.samples.push_back(timeMs([&] { (void)agent.runAkCreation(*req); }));
            agent.tpm().setCommandSink(nullptr);
        }
        finishRow(row, {"TPM2_Create", "TPM2_Load", "TPM2_CertifyCreation", "TPM2_EvictControl",
                        "TPM2_FlushContext"});
        cmdSamples.clear();
        report.rows.push_back(std::move(row));
    }

    // Shared prover with one normal and one NV-based PCR, enrolled and
    // carrying a fresh authorized policy.
    std::string proverId = "bench-prover";
    VfAgent prover(proverId, block(proverId), hk(proverId));
    orc.registerVf(proverId, prover.ekPublicArea(), hk(proverId));
    prover.installOrchestratorKey(orc.ekPublicArea());
    {
        auto req = orc.beginEnrollment(proverId);
        auto resp = prover.runAkCreation(*req);
        orc.verifyAkCertificate(proverId, resp.value().certInfo, resp.value().signature,
                                resp.value().akPublicArea);
        auto normal = orc.requestPcrAttach(proverId, 10, false);
        prover.runAttach(*normal);
        auto nv = orc.requestPcrAttach(proverId, kNvHandleFirst, true);
        auto cert = prover.runAttach(*nv);
        orc.verifyNvPcrCertificate(proverId, cert.value()->certInfo, cert.value()->signature);
    }

    auto deployAndUpdate = [&](const std::string& path, std::uint32_t index, bool nv,
                               int iter) -> double {
        Bytes content = asBytes("payload-" + std::to_string(iter) + "-" + path);
        auto [generation, version] = prover.tracer().write(path, content);
        orc.setReference(proverId, path, content, generation, version);
        Digest hUpdate = *orc.referenceMeasurement(proverId, path);
        auto req = orc.composePolicyUpdate(proverId, index, nv, hUpdate, path);
        AuditResponse resp;
        double ms = timeMs([&] { resp = prover.runMeasurementUpdate(*req).take(); });
        orc.verifyAudit(proverId, index, nv, hUpdate, resp.auditInfo, resp.signature);
        return ms;
    };

    // --- Measurement update ------------------------------------------------
    {
        ProtocolBenchRow row;
        row.protocol = "Measurement update (VF)";
        makeSink(prover.tpm());
        for (int i = 0; i < iterations; ++i) {
            row.samples.push_back(deployAndUpdate("/etc/bench/nv.conf", kNvHandleFirst, true, i));
            row.samples.push_back(deployAndUpdate("/etc/bench/pcr.conf", 10, false, i));
        }
        prover.tpm().setCommandSink(nullptr);
        finishRow(row, {"TPM2_VerifySignature", "TPM2_StartAuthSession", "TPM2_NV_Extend",
                        "TPM2_PCR_Extend", "TPM2_GetSessionAuditDigest"});
        cmdSamples.clear();
        report.rows.push_back(std::move(row));
    }

    // --- ORA (prover side) -------------------------------------------------
    {
        ProtocolBenchRow row;
        row.protocol = "ORA (prover)";
        makeSink(prover.tpm());
        for (int i = 0; i < iterations; ++i) {
            Nonce nonce{};
            nonce[0] = static_cast<std::uint8_t>(i);
            row.samples.push_back(timeMs([&] { (void)prover.runOraProver(nonce); }));
        }
        prover.tpm().setCommandSink(nullptr);
        finishRow(row, {"TPM2_StartAuthSession", "TPM2_PolicyNV", "TPM2_PolicyPCR",
                        "TPM2_PolicyAuthorize", "TPM2_Sign"});
        cmdSamples.clear();
        report.rows.push_back(std::move(row));
    }

    // --- NVPCR attach / detach ---------------------------------------------
    {
        ProtocolBenchRow attachRow;
        attachRow.protocol = "Attaching a NVPCR (VF)";
        ProtocolBenchRow detachRow;
        detachRow.protocol = "Detaching a NVPCR (VF)";

        std::string id = "bench-nv";
        VfAgent agent(id, block(id), hk(id));
        orc.registerVf(id, agent.ekPublicArea(), hk(id));
        agent.installOrchestratorKey(orc.ekPublicArea());

        makeSink(agent.tpm());
        for (int i = 0; i < iterations; ++i) {
            std::uint32_t handle = kNvHandleFirst + 0x100 + static_cast<std::uint32_t>(i);
            auto req = orc.requestPcrAttach(id, handle, true);
            AgentResult<std::optional<NvCertResponse>> cert = std::optional<NvCertResponse>{};
            attachRow.samples.push_back(timeMs([&] { cert = agent.runAttach(*req); }));
            orc.verifyNvPcrCertificate(id, cert.value()->certInfo, cert.value()->signature);

            detachRow.samples.push_back(timeMs([&] {
                auto nonce = agent.beginNvDetach(handle);
                auto grant = orc.authorizeNvDeletion(id, handle, nonce.value().nonce);
                (void)agent.completeNvDetach(*grant);
            }));
        }
        agent.tpm().setCommandSink(nullptr);
        // The two command sets are disjoint, so one shared sink serves both.
        finishRow(attachRow, {"TPM2_NV_DefineSpace", "TPM2_NV_Extend", "TPM2_NV_Certify"});
        finishRow(detachRow,
                  {"TPM2_StartAuthSession", "TPM2_VerifySignature", "TPM2_PolicySigned",
                   "TPM2_PolicyAuthorize", "TPM2_PolicyCommandCode",
                   "TPM2_NV_UndefineSpaceSpecial"});
        cmdSamples.clear();
        report.rows.push_back(std::move(attachRow));
        report.rows.push_back(std::move(detachRow));
    }

    return report;
}

}  // namespace blindtrust
