#pragma once

#include <fstream>
#include <random>
#include <string>

#include "blindtrust/netsim.h"
#include "blindtrust/orchestrator.h"
#include "blindtrust/vf_agent.h"

#include "json.hpp"

namespace testutil {

using namespace blindtrust;

inline nlohmann::json loadFixture(const std::string& name) {
    std::ifstream in(std::string(BLINDTRUST_FIXTURE_DIR) + "/" + name);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

inline std::array<std::uint8_t, 32> seedBlock(std::uint64_t seed, const std::string& id) {
    return ScenarioEngine::partyBlock(seed, id);
}

inline Digest randomDigest(std::mt19937_64& rng) {
    Digest d{};
    for (auto& b : d) b = static_cast<std::uint8_t>(rng());
    return d;
}

inline Bytes randomBytes(std::mt19937_64& rng, std::size_t n) {
    Bytes out(n);
    for (auto& b : out) b = static_cast<std::uint8_t>(rng());
    return out;
}

// Orchestrator plus one registered and key-installed agent.
struct Pair {
    Orchestrator orc;
    VfAgent vf;

    explicit Pair(std::uint64_t seed = 1, const std::string& id = "vf-a")
        : orc(seedBlock(seed, "orchestrator")),
          vf(id, seedBlock(seed, id), ScenarioEngine::deriveHk(seed, id)) {
        orc.registerVf(id, vf.ekPublicArea(), ScenarioEngine::deriveHk(seed, id));
        vf.installOrchestratorKey(orc.ekPublicArea());
    }

    void enroll() {
        auto req = orc.beginEnrollment(vf.id());
        auto resp = vf.runAkCreation(*req);
        REQUIRE(resp.ok());
        auto out = orc.verifyAkCertificate(vf.id(), resp.value().certInfo,
                                           resp.value().signature, resp.value().akPublicArea);
        REQUIRE(out.ok);
    }

    void attachNormal(std::uint32_t idx) {
        auto req = orc.requestPcrAttach(vf.id(), idx, false);
        REQUIRE(req.has_value());
        REQUIRE(vf.runAttach(*req).ok());
    }

    void attachNv(std::uint32_t handle) {
        auto req = orc.requestPcrAttach(vf.id(), handle, true);
        REQUIRE(req.has_value());
        auto cert = vf.runAttach(*req);
        REQUIRE(cert.ok());
        REQUIRE(cert.value().has_value());
        auto out = orc.verifyNvPcrCertificate(vf.id(), cert.value()->certInfo,
                                              cert.value()->signature);
        REQUIRE(out.ok);
    }

    void deploy(const std::string& path, const Bytes& content) {
        auto [generation, version] = vf.tracer().write(path, content);
        orc.setReference(vf.id(), path, content, generation, version);
    }

    VerifyOutcome update(const std::string& path, std::uint32_t idx, bool nv) {
        auto hUpdate = orc.referenceMeasurement(vf.id(), path);
        REQUIRE(hUpdate.has_value());
        auto req = orc.composePolicyUpdate(vf.id(), idx, nv, *hUpdate, path);
        REQUIRE(req.has_value());
        auto resp = vf.runMeasurementUpdate(*req);
        REQUIRE(resp.ok());
        return orc.verifyAudit(vf.id(), idx, nv, *hUpdate, resp.value().auditInfo,
                               resp.value().signature);
    }
};

}  // namespace testutil
