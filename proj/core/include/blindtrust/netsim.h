#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blindtrust/orchestrator.h"
#include "blindtrust/trace.h"
#include "blindtrust/vf_agent.h"

#include "json.hpp"

namespace blindtrust {

enum class ProtocolKind { Enroll, Update, Ora, Attach, Detach, Advertise };

const char* protocolName(ProtocolKind p);
std::optional<ProtocolKind> protocolFromName(const std::string& name);

// One message on the simulated channel; the unit the adversary manipulates.
struct Envelope {
    std::uint64_t seq = 0;
    std::string from;
    std::string to;
    ProtocolKind protocol = ProtocolKind::Enroll;
    std::string step;
    nlohmann::json payload;

    nlohmann::json toJson() const;
    static std::optional<Envelope> fromJson(const nlohmann::json& j);
};

// Payload encoders and defensive decoders. Decoders return nullopt on any
// missing field, wrong type, or wrong-length hex; a party that receives a
// malformed message simply drops it.
namespace wire {
nlohmann::json toPayload(const AkCreationRequest& m);
nlohmann::json toPayload(const AkCertificateResponse& m);
nlohmann::json toPayload(const AdvertiseNotice& m);
nlohmann::json toPayload(const RevocationNotice& m);
nlohmann::json toPayload(const UpdateRequest& m);
nlohmann::json toPayload(const AuditResponse& m);
nlohmann::json toPayload(const AttachRequest& m);
nlohmann::json toPayload(const NvCertResponse& m);
nlohmann::json toPayload(const DetachRequest& m);
nlohmann::json toPayload(const DetachNonce& m);
nlohmann::json toPayload(const DeletionGrant& m);
nlohmann::json toPayload(const OraChallenge& m);
nlohmann::json toPayload(const OraResponse& m);

std::optional<AkCreationRequest> akCreationRequest(const nlohmann::json& j);
std::optional<AkCertificateResponse> akCertificateResponse(const nlohmann::json& j);
std::optional<AdvertiseNotice> advertiseNotice(const nlohmann::json& j);
std::optional<RevocationNotice> revocationNotice(const nlohmann::json& j);
std::optional<UpdateRequest> updateRequest(const nlohmann::json& j);
std::optional<AuditResponse> auditResponse(const nlohmann::json& j);
std::optional<AttachRequest> attachRequest(const nlohmann::json& j);
std::optional<NvCertResponse> nvCertResponse(const nlohmann::json& j);
std::optional<DetachRequest> detachRequest(const nlohmann::json& j);
std::optional<DetachNonce> detachNonce(const nlohmann::json& j);
std::optional<DeletionGrant> deletionGrant(const nlohmann::json& j);
std::optional<OraChallenge> oraChallenge(const nlohmann::json& j);
std::optional<OraResponse> oraResponse(const nlohmann::json& j);
}  // namespace wire

// Predicate over envelopes. nth restricts a rule to the nth envelope that
// matches the other fields (1-based).
struct MatchSpec {
    std::optional<std::string> protocol;
    std::optional<std::string> step;
    std::optional<std::string> from;
    std::optional<std::string> to;
    std::optional<std::uint64_t> seq;
    std::optional<int> nth;

    bool fieldsMatch(const Envelope& e) const;
};

enum class AdversaryActionType { Pass, Drop, Replay, Tamper, Inject };

struct AdversaryRule {
    MatchSpec match;
    AdversaryActionType action = AdversaryActionType::Pass;
    // Tamper: dot path into the envelope JSON and the replacement value.
    std::string path;
    nlohmann::json value;
    // Replay: which observed envelope to append (first match wins).
    MatchSpec replayOf;
    // Inject: literal envelope appended next to the matched one.
    nlohmann::json injectEnvelope;

    int matchCount = 0;  // bookkeeping for nth
};

// Ordered first-match rule list. Actions are functions of the observed
// envelope stream only; the adversary holds no key material and can only
// splice bytes it has seen.
struct AdversaryScript {
    std::vector<AdversaryRule> rules;

    static std::optional<AdversaryScript> fromJson(const nlohmann::json& j);
    nlohmann::json toJson() const;
};

// In-memory channel with a logical tick clock. Every send passes through the
// adversary; the returned list is what actually arrives.
class Bus {
public:
    Bus(AdversaryScript script, TraceWriter& trace) : script_(std::move(script)), trace_(trace) {}

    std::vector<Envelope> send(Envelope env);
    std::uint64_t tick() const { return tick_; }
    void advanceTick(std::uint64_t to);
    const std::map<std::uint64_t, Envelope>& knowledge() const { return knowledge_; }

private:
    AdversaryRule* matchRule(const Envelope& env);
    std::optional<Envelope> findKnown(const MatchSpec& spec) const;

    AdversaryScript script_;
    TraceWriter& trace_;
    std::uint64_t nextSeq_ = 1;
    std::uint64_t tick_ = 0;
    std::map<std::uint64_t, Envelope> knowledge_;  // everything ever observed
};

struct ScenarioStep {
    std::string op;
    nlohmann::json params;
    bool expectOk = true;
    std::optional<std::string> expectReason;
};

struct Scenario {
    std::string name;
    std::uint64_t seed = 0;
    std::vector<std::string> vfs;
    std::string chainId = "sg-0";
    std::vector<ScenarioStep> steps;
    AdversaryScript adversary;
    std::vector<std::string> assertions;
    bool expectFail = false;
    // Per-VF initial configuration stores: vf id -> { path -> hex content }.
    // Loaded as deployments, so the orchestrator's references match.
    nlohmann::json tracerManifests = nlohmann::json::object();

    static Expected<Scenario, std::string> fromJson(const nlohmann::json& j);
    static Expected<Scenario, std::string> fromFile(const std::string& path);
    nlohmann::json toJson() const;
};

struct StepResult {
    std::size_t index = 0;
    std::string op;
    bool ok = false;
    bool matchedExpectation = false;
    std::string reason;
    std::string detail;
};

struct RunResult {
    bool pass = false;
    std::vector<StepResult> steps;
    std::string failure;   // first failing step or assertion, with a state diff
    std::string trace;     // JSON-lines
};

// Sequences protocol rounds against fresh party states, applies the
// adversary on every delivery, and evaluates the scenario's assertions
// after each quiescent point.
class ScenarioEngine {
public:
    explicit ScenarioEngine(Scenario scenario);

    RunResult run();

    Orchestrator& orchestrator() { return orc_; }
    VfAgent* agent(const std::string& id);
    std::uint64_t tick() const { return bus_.tick(); }

    static std::array<std::uint8_t, 32> partyBlock(std::uint64_t seed, const std::string& id);
    static HmacKey deriveHk(std::uint64_t seed, const std::string& id);

private:
    struct StepCtx {
        std::optional<VerifyOutcome> enroll;
        std::optional<VerifyOutcome> audit;
        std::optional<VerifyOutcome> nvCert;
        std::optional<bool> detachDone;
        std::optional<AgentError> agentError;
        std::optional<std::size_t> stalePolicy;
        std::string prover;
        std::string verifier;
        int deliveries = 0;
    };

    void send(const std::string& from, const std::string& to, ProtocolKind protocol,
              const std::string& step, nlohmann::json payload, std::deque<Envelope>& queue);
    void pump(std::deque<Envelope>& queue);
    void dispatch(const Envelope& env, std::deque<Envelope>& queue);

    StepResult execStep(std::size_t index, const ScenarioStep& step);
    bool checkMockRealSync(std::string& diff) const;
    bool checkLocalSync(std::string& diff) const;
    void checkSoundness(const std::string& proverId, bool accepted);
    std::vector<std::string> canaryHexes() const;

    // The register values described by the newest policy the orchestrator
    // signed for a VF, which may run ahead of the committed mock state when
    // an audit response is lost or mangled in flight.
    struct IssuedState {
        bool valid = false;
        std::map<std::uint32_t, Digest> nv;
        std::map<std::uint32_t, Digest> pcr;
    };

    Scenario sc_;
    TraceWriter trace_;
    Bus bus_;
    Orchestrator orc_;
    std::map<std::string, VfAgent> agents_;
    Bytes orcEkPublicKey_;
    StepCtx ctx_;
    std::map<std::string, IssuedState> lastIssued_;
    bool soundnessViolation_ = false;
    std::string soundnessDetail_;
};

}  // namespace blindtrust
