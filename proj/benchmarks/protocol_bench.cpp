#include <benchmark/benchmark.h>

#include "blindtrust/netsim.h"
#include "blindtrust/orchestrator.h"
#include "blindtrust/vf_agent.h"

using namespace blindtrust;

namespace {

std::array<std::uint8_t, 32> block(const std::string& id) {
    return ScenarioEngine::partyBlock(1, id);
}

struct Parties {
    Orchestrator orc{block("orchestrator")};
    VfAgent prover{"prover", block("prover"), ScenarioEngine::deriveHk(1, "prover")};

    Parties() {
        orc.registerVf("prover", prover.ekPublicArea(), ScenarioEngine::deriveHk(1, "prover"));
        prover.installOrchestratorKey(orc.ekPublicArea());
        auto req = orc.beginEnrollment("prover");
        auto resp = prover.runAkCreation(*req);
        orc.verifyAkCertificate("prover", resp.value().certInfo, resp.value().signature,
                                resp.value().akPublicArea);
        prover.runAttach(*orc.requestPcrAttach("prover", 10, false));
        auto nv = orc.requestPcrAttach("prover", kNvHandleFirst, true);
        auto cert = prover.runAttach(*nv);
        orc.verifyNvPcrCertificate("prover", cert.value()->certInfo, cert.value()->signature);
        update(0);
    }

    void update(int i) {
        Bytes content = asBytes("content-" + std::to_string(i));
        auto [generation, version] = prover.tracer().write("/etc/app.conf", content);
        orc.setReference("prover", "/etc/app.conf", content, generation, version);
        Digest h = *orc.referenceMeasurement("prover", "/etc/app.conf");
        auto req = orc.composePolicyUpdate("prover", kNvHandleFirst, true, h, "/etc/app.conf");
        auto resp = prover.runMeasurementUpdate(*req);
        orc.verifyAudit("prover", kNvHandleFirst, true, h, resp.value().auditInfo,
                        resp.value().signature);
    }
};

}  // namespace

static void BM_Sha256Extend(benchmark::State& state) {
    Digest pcr = kZeroDigest;
    Digest d = crypto::sha256(asBytes("x"));
    for (auto _ : state) {
        pcr = crypto::sha256Cat({pcr, d});
        benchmark::DoNotOptimize(pcr);
    }
}
BENCHMARK(BM_Sha256Extend);

static void BM_PcrExtend(benchmark::State& state) {
    VTpm tpm(block("bench-tpm"));
    Digest d = crypto::sha256(asBytes("measurement"));
    for (auto _ : state) {
        benchmark::DoNotOptimize(tpm.pcrExtend(7, d).ok());
    }
}
BENCHMARK(BM_PcrExtend);

static void BM_PolicySequence(benchmark::State& state) {
    Parties p;
    for (auto _ : state) {
        auto session = p.prover.tpm().startAuthSession(SessionKind::Policy);
        std::uint32_t ps = session.value().handle;
        auto expected = p.prover.nvpcrs().front().second;
        p.prover.tpm().policyNv(ps, kNvHandleFirst, expected);
        std::uint32_t sel[] = {10};
        p.prover.tpm().policyPcr(ps, sel);
        p.prover.tpm().flushContext(ps);
    }
}
BENCHMARK(BM_PolicySequence);

static void BM_OraProver(benchmark::State& state) {
    Parties p;
    Nonce nonce{};
    for (auto _ : state) {
        nonce[0]++;
        auto sig = p.prover.runOraProver(nonce);
        benchmark::DoNotOptimize(sig.ok());
    }
}
BENCHMARK(BM_OraProver);

static void BM_MeasurementUpdate(benchmark::State& state) {
    Parties p;
    int i = 1;
    for (auto _ : state) {
        p.update(i++);
    }
}
BENCHMARK(BM_MeasurementUpdate);

BENCHMARK_MAIN();
