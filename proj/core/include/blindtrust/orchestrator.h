#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blindtrust/messages.h"

#include "json.hpp"

namespace blindtrust {

// Reason codes for rejected certificates and failed protocol checks.
enum class RejectReason {
    None,
    UnknownVf,
    NoPending,
    Name,
    Magic,
    Template,
    Policy,
    Signature,
    NvContents,
    AuditDigest,
    IndexInUse,
    UnknownIndex,
};

const char* rejectReasonName(RejectReason r);

struct VerifyOutcome {
    bool ok = false;
    RejectReason reason = RejectReason::None;

    static VerifyOutcome pass() { return {true, RejectReason::None}; }
    static VerifyOutcome fail(RejectReason r) { return {false, r}; }
};

struct MockPcrEntry {
    std::uint32_t index;
    Digest value;
};

struct MockNvEntry {
    std::uint32_t handle;
    Digest value;
    Name name;
};

// Reference copy of a deployed configuration object, mirroring the metadata
// the VF-side tracer maintains.
struct ReferenceObject {
    Bytes content;
    std::uint64_t generation = 0;
    std::uint64_t version = 0;
};

struct VfRecord {
    std::string vfId;
    Bytes ekPublicArea;
    Bytes ekPublicKey;
    Name ekName{};
    HmacKey hk{};
    std::optional<Bytes> akPublicArea;
    std::optional<crypto::Signature> akSignature;
    std::vector<MockPcrEntry> mockPcr;    // kept sorted by index
    std::vector<MockNvEntry> mockNvPcr;   // attach order
    std::optional<std::pair<Digest, crypto::Signature>> lastPolicy;
    std::map<std::string, ReferenceObject> referenceConfig;

    struct PendingEnrollment {
        Digest hPol;
        std::uint32_t attributes;
    };
    struct PendingUpdate {
        std::uint32_t index;
        bool nv;
        Digest hUpdate;
        Digest hPol;
        crypto::Signature signature;
    };
    struct PendingAttach {
        std::uint32_t handle;
        NvTemplate tpl;
        Digest iv;
    };
    std::optional<PendingEnrollment> pendingEnrollment;
    std::optional<PendingUpdate> pendingUpdate;
    std::optional<PendingAttach> pendingAttach;
};

struct DirectoryEntry {
    Bytes akPublicArea;
    crypto::Signature signature{};
};

// Who attests whom: chains of enrolled VFs plus the advertised AK directory.
struct ServiceGraph {
    std::map<std::string, std::vector<std::string>> chains;
    std::map<std::string, DirectoryEntry> directory;
};

// The trusted authority. Enrolls VFs, verifies creation certificates, keeps
// mock PCR state per VF, composes and signs attestation policies, verifies
// audit digests, and authorizes NV index deletions. Single-owner; operations
// execute serially against one instance.
class Orchestrator {
public:
    explicit Orchestrator(const std::array<std::uint8_t, 32>& seedBlock);

    void registerVf(const std::string& vfId, Bytes ekPublicArea, const HmacKey& hk);
    void assignChain(const std::string& chainId, const std::string& vfId);

    const Bytes& ekPublicArea() const { return ekPublicArea_; }
    const Name& ekName() const { return ekName_; }

    // Enrollment.
    std::optional<AkCreationRequest> beginEnrollment(const std::string& vfId);
    VerifyOutcome verifyAkCertificate(const std::string& vfId, const CreationCertInfo& certInfo,
                                      const crypto::Signature& sig,
                                      std::span<const std::uint8_t> akPublicArea);
    AdvertiseNotice advertisementFor(const std::string& vfId) const;
    RevocationNotice revoke(const std::string& vfId);

    // Supervised updates.
    Digest authenticateMeasurement(const std::string& vfId,
                                   std::span<const std::uint8_t> content) const;
    std::optional<UpdateRequest> composePolicyUpdate(const std::string& vfId, std::uint32_t index,
                                                     bool nv, const Digest& hUpdate,
                                                     const std::string& fqpn);
    VerifyOutcome verifyAudit(const std::string& vfId, std::uint32_t index, bool nv,
                              const Digest& hUpdate, const AuditInfo& auditInfo,
                              const crypto::Signature& sig);

    // PCR administration.
    std::optional<AttachRequest> requestPcrAttach(const std::string& vfId, std::uint32_t index,
                                                  bool nv, const Digest& iv = kZeroDigest);
    VerifyOutcome verifyNvPcrCertificate(const std::string& vfId, const NvCertInfo& certInfo,
                                         const crypto::Signature& sig);
    std::optional<DeletionGrant> authorizeNvDeletion(const std::string& vfId, std::uint32_t index,
                                                     const Nonce& sessionNonce);
    std::optional<DetachRequest> requestPcrDetach(const std::string& vfId, std::uint32_t index);

    // Deployment bookkeeping (the orchestrator knows what it deployed).
    void setReference(const std::string& vfId, const std::string& fqpn, Bytes content,
                      std::uint64_t generation, std::uint64_t version);
    std::optional<Digest> referenceMeasurement(const std::string& vfId,
                                               const std::string& fqpn) const;

    const VfRecord* record(const std::string& vfId) const;
    const ServiceGraph& graph() const { return graph_; }
    bool hasVf(const std::string& vfId) const { return records_.contains(vfId); }

    // Policy digest builders shared with the attach and deletion paths.
    static Digest flexiblePolicy(const Name& authorizerName);
    static Digest nvDeletionPolicy(const Name& authorizerName);
    static Digest policySignedPolicy(const Name& authorizerName);

    // Policy composition over mock state; PolicyNV steps for every mock NV
    // PCR in attach order, then one PolicyPCR step over all mock PCRs.
    static Digest accumulatePolicy(std::span<const MockNvEntry> mockNv,
                                   std::span<const MockPcrEntry> mockPcr);

    // Audit digest reconstruction for a single audited extend.
    static Digest reconstructAuditDigest(std::uint32_t index, bool nv, const Digest& hUpdate,
                                         std::span<const MockNvEntry> mockNv);

    nlohmann::json exportRecords() const;  // hk redacted

    static constexpr std::uint32_t kAkAttributes =
        kAttrSign | kAttrAdminWithPolicy | kAttrSensitiveDataOrigin | kAttrFixedTpm;
    static constexpr std::uint32_t kNvPcrAttributes =
        kNvAttrExtend | kNvAttrPolicyDelete | kNvAttrPlatformCreate | kNvAttrPolicyWrite |
        kNvAttrAuthRead | kNvAttrNoDa;

private:
    VfRecord* mutableRecord(const std::string& vfId);
    crypto::Signature signDigest(const Digest& d) const;

    crypto::SigningKeyPair ek_;
    Bytes ekPublicArea_;
    Name ekName_{};
    std::map<std::string, VfRecord> records_;
    ServiceGraph graph_;
};

}  // namespace blindtrust
