#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "blindtrust/messages.h"
#include "blindtrust/vtpm.h"

#include "json.hpp"

namespace blindtrust {

enum class AgentError {
    UnknownPath,
    NoAk,
    AkExists,
    NoPolicy,
    BadOrchestratorSignature,
    AttestationFailed,
    TpmFailure,
    InvalidRequest,
    UnknownPeer,
    NoPendingDetach,
};

const char* agentErrorName(AgentError e);

template <typename T>
using AgentResult = Expected<T, AgentError>;

// Simulated configuration store. The kernel-maintained metadata counters are
// part of every measurement, so silently rewriting and restoring an object
// still changes its digest.
class Tracer {
public:
    struct Entry {
        Bytes content;
        std::uint64_t generation = 0;
        std::uint64_t version = 0;
    };

    // Returns the post-write counters.
    std::pair<std::uint64_t, std::uint64_t> write(const std::string& fqpn, Bytes content);
    bool exists(const std::string& fqpn) const { return store_.contains(fqpn); }
    // content || generation || version, the byte string that gets measured.
    std::optional<Bytes> measuredBytes(const std::string& fqpn) const;
    const std::map<std::string, Entry>& store() const { return store_; }

    // Directory manifest: a JSON object mapping path to hex content. Every
    // entry is written through the normal path, so counters advance.
    bool loadManifest(const nlohmann::json& manifest);

private:
    std::map<std::string, Entry> store_;
};

// One satisfied update: the authorized policy, its verification ticket, and
// the PCR knowledge it was composed over. Kept so stale policies can be
// replayed in freshness experiments.
struct PolicyRecord {
    Digest policy = kZeroDigest;
    Ticket ticket;
    std::vector<std::pair<std::uint32_t, Digest>> nvSnapshot;  // NVPCRS at that time
    std::set<std::uint32_t> pcrSnapshot;                       // PCRS at that time
};

// A virtual function: its vTPM, its attestation agent (holder of the hash
// key), its tracer, and the VF half of every protocol. Single-owner, like
// the vTPM it wraps; distinct agents are independent and may run on
// different threads, interacting only through the message channel.
class VfAgent {
public:
    VfAgent(std::string vfId, const std::array<std::uint8_t, 32>& seedBlock, const HmacKey& hk);

    void installOrchestratorKey(std::span<const std::uint8_t> publicArea);

    const std::string& id() const { return vfId_; }
    const Bytes& ekPublicArea() const { return ekPublicArea_; }
    VTpm& tpm() { return tpm_; }
    const VTpm& tpm() const { return tpm_; }
    Tracer& tracer() { return tracer_; }

    // Enrollment: Create -> Load -> CertifyCreation -> EvictControl -> Flush.
    AgentResult<AkCertificateResponse> runAkCreation(const AkCreationRequest& req);
    bool hasAk() const { return akHandle_.has_value(); }

    // h_FQPN = HMAC(hk, H(content || metadata))
    AgentResult<Digest> measure(const std::string& fqpn);

    AgentResult<AuditResponse> runMeasurementUpdate(const UpdateRequest& req);

    // Prover side: PolicyNV for every tracked NV PCR, PolicyPCR over the
    // tracked PCR set, PolicyAuthorize with the stored policy, then Sign.
    AgentResult<crypto::Signature> runOraProver(std::span<const std::uint8_t> nonce);
    AgentResult<crypto::Signature> runOraProverWithPolicy(const PolicyRecord& record,
                                                          std::span<const std::uint8_t> nonce);

    AgentResult<std::optional<NvCertResponse>> runAttach(const AttachRequest& req);

    void runNormalDetach(std::uint32_t index);
    AgentResult<DetachNonce> beginNvDetach(std::uint32_t index);
    AgentResult<void> completeNvDetach(const DeletionGrant& grant);

    // Verifier side. The decision is a pure function of the challenge nonce,
    // the response signature, and the advertised AK public key.
    static bool verifyOraResponse(std::span<const std::uint8_t> akPublicKey,
                                  std::span<const std::uint8_t> nonce,
                                  const crypto::Signature& sig);
    Nonce issueChallenge(const std::string& proverId);
    bool receiveOraResponse(const std::string& proverId, const crypto::Signature& sig);
    void timeoutChallenge(const std::string& proverId);
    std::optional<bool> challengeOutcome(const std::string& proverId) const;

    bool handleAdvertise(const AdvertiseNotice& notice,
                         std::span<const std::uint8_t> orcEkPublicKey);
    void handleRevocation(const std::string& vfId) { peers_.erase(vfId); }
    bool knowsPeer(const std::string& vfId) const { return peers_.contains(vfId); }
    std::optional<Bytes> peerAk(const std::string& vfId) const;

    // Local knowledge.
    const std::set<std::uint32_t>& pcrs() const { return pcrs_; }
    const std::vector<std::pair<std::uint32_t, Digest>>& nvpcrs() const { return nvpcrs_; }
    const std::optional<PolicyRecord>& currentPolicy() const { return currentPolicy_; }
    const std::vector<PolicyRecord>& policyHistory() const { return policyHistory_; }

    // True when every tracked index agrees with the vTPM contents and the
    // agent can reproduce each PCR from its own extend log.
    bool localStateInSync() const;

    nlohmann::json debugDump() const;

private:
    AgentResult<crypto::Signature> proveWith(
        std::span<const std::pair<std::uint32_t, Digest>> nvSelection,
        const std::set<std::uint32_t>& pcrSelection, const Digest& policy, const Ticket& ticket,
        std::span<const std::uint8_t> nonce);

    std::string vfId_;
    VTpm tpm_;
    Tracer tracer_;
    HmacKey hk_;
    std::mt19937_64 rng_;

    std::uint32_t skHandle_ = 0;
    std::uint32_t ekHandle_ = 0;
    std::uint32_t orcEkHandle_ = 0;
    std::optional<std::uint32_t> akHandle_;
    Bytes ekPublicArea_;
    Name orcEkName_{};

    std::set<std::uint32_t> pcrs_;                             // PCRS
    std::vector<std::pair<std::uint32_t, Digest>> nvpcrs_;     // NVPCRS, attach order
    std::map<std::uint32_t, Digest> pcrLog_;                   // reproduced PCR values
    std::optional<PolicyRecord> currentPolicy_;
    std::vector<PolicyRecord> policyHistory_;
    std::map<std::string, Bytes> peers_;                       // vfId -> AK public key

    struct PendingDetach {
        std::uint32_t index;
        std::uint32_t session;
    };
    std::optional<PendingDetach> pendingDetach_;

    struct PendingChallenge {
        Nonce nonce;
        std::optional<bool> outcome;
    };
    std::map<std::string, PendingChallenge> challenges_;
};

}  // namespace blindtrust
