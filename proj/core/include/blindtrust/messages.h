#pragma once

#include <optional>
#include <string>

#include "blindtrust/crypto.h"
#include "blindtrust/digest.h"
#include "blindtrust/vtpm.h"

namespace blindtrust {

// Protocol message bodies. These are the structures that cross the simulated
// channel; every byte field is visible to the adversary.

struct AkCreationRequest {
    std::string vfId;
    std::uint32_t attributes = 0;  // requested key attributes
    Digest hPol = kZeroDigest;     // flexible policy bound to the orchestrator's EK
};

struct AkCertificateResponse {
    std::string vfId;
    CreationCertInfo certInfo;
    crypto::Signature signature{};
    Bytes akPublicArea;
};

struct AdvertiseNotice {
    std::string vfId;
    Bytes akPublicArea;
    crypto::Signature signature{};  // orchestrator EK over (vfId || akPublicArea)
};

struct RevocationNotice {
    std::string vfId;
    crypto::Signature signature{};  // orchestrator EK over (vfId || "REVOKED")
};

struct UpdateRequest {
    std::string vfId;
    std::string fqpn;
    std::uint32_t index = 0;
    bool nv = false;
    Digest hPol = kZeroDigest;
    Digest hPolHashed = kZeroDigest;  // H(hPol), the digest that is signed
    crypto::Signature signature{};
};

struct AuditResponse {
    std::string vfId;
    std::uint32_t index = 0;
    bool nv = false;
    AuditInfo auditInfo;
    crypto::Signature signature{};
};

struct AttachRequest {
    std::string vfId;
    std::uint32_t index = 0;
    bool nv = false;
    Digest iv = kZeroDigest;
    // NV branch only: index template and the deletion authorization policy.
    std::optional<NvTemplate> nvTemplate;
};

struct NvCertResponse {
    std::string vfId;
    std::uint32_t index = 0;
    NvCertInfo certInfo;
    crypto::Signature signature{};
};

struct DetachRequest {
    std::string vfId;
    std::uint32_t index = 0;
    bool nv = false;
};

struct DetachNonce {
    std::string vfId;
    std::uint32_t index = 0;
    Nonce nonce{};
};

struct DeletionGrant {
    std::string vfId;
    std::uint32_t index = 0;
    Digest hCp = kZeroDigest;
    crypto::Signature aHashSignature{};
    Digest hPol = kZeroDigest;
    Digest hPolHashed = kZeroDigest;
    crypto::Signature hPolSignature{};
};

struct OraChallenge {
    std::string verifierId;
    std::string proverId;
    Nonce nonce{};
};

struct OraResponse {
    std::string proverId;
    std::string verifierId;
    crypto::Signature signature{};
};

}  // namespace blindtrust
